"""``pacc`` command-line entry point.

Every command accepts ``--config run.json``; keys in that file mirror
:class:`pacc.trainer.TrainConfig` plus the encoding and analysis settings in
:data:`VIEW_KEYS` and :data:`ANALYSIS_KEYS`. Explicit flags override the file.
Exit codes: 0 success, 2 usage or input error, 3 runtime or numeric error.
"""
import argparse
import hashlib
import json
import logging
import shutil
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import configured_threads, set_threads
from .errors import ConfigError, PaccError, PaccInputError

logger = logging.getLogger("pacc")

VIEW_KEYS = {
    "layers": ["L2", "L3", "L4", "L7"],
    "packets_per_flow": 10,
    "payload_bytes": 64,
    "mask": [],
    "mask_ports": False,
    "default_mask": True,
    "fill_value": -1.0,
    "idle_timeout": None,
}
ANALYSIS_KEYS = {"pca_k": 3, "bins": 8}
EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3


class UsageError(PaccInputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- configuration ---------------------------------------------------------------

def _train_defaults():
    from .trainer import TrainConfig
    d = TrainConfig().to_dict()
    return {f.name: d[f.name] for f in fields(TrainConfig)}


def default_run_config():
    return {**_train_defaults(), **VIEW_KEYS, **ANALYSIS_KEYS}


def load_run_config(path=None, overrides=None):
    """Defaults, then the JSON file, then explicit overrides; unknown keys are errors."""
    cfg = default_run_config()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: top level must be an object")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    if int(cfg["bins"]) < 2:
        raise ConfigError("bins must be ≥ 2")
    return cfg


def train_config_from(cfg):
    from .trainer import TrainConfig
    keys = {f.name for f in fields(TrainConfig)}
    return TrainConfig.from_dict({k: v for k, v in cfg.items() if k in keys})


def _hash_inputs(paths):
    """SHA-256 per input file and one combined digest (paths sorted, contents hashed)."""
    files = []
    for p in paths:
        p = Path(p)
        files.extend(sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p])
    per_file = {}
    total = hashlib.sha256()
    for f in files:
        digest = hashlib.sha256(f.read_bytes()).hexdigest()
        per_file[str(f)] = digest
        total.update(digest.encode())
    return per_file, total.hexdigest()


def _prepare_out(out, force):
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise UsageError(f"output directory {out} exists and is not empty; pass --force")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_effective(out, command, cfg, inputs):
    per_file, combined = _hash_inputs(inputs)
    payload = {"command": command, "version": __version__, "config": cfg,
               "inputs": per_file, "input_hash": combined}
    (Path(out) / "effective_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def _csv_list(text, cast=str):
    return [cast(t.strip()) for t in text.split(",") if t.strip()]


# --- commands --------------------------------------------------------------------

def cmd_encode(args, cfg):
    from .pcap import ingest
    from .views import Layer, MaskSpec, ViewConfig, build_views, export_views, parse_mask_tokens

    out = _prepare_out(args.out, args.force)
    layers = cfg["layers"]
    if isinstance(layers, str):
        layers = _csv_list(layers)
    extra = parse_mask_tokens(cfg["mask"])
    fill = float(cfg["fill_value"])
    if cfg["default_mask"]:
        mask = MaskSpec.default(mask_ports=bool(cfg["mask_ports"]), extra=extra, fill_value=fill)
    else:
        mask = MaskSpec(frozenset(extra), fill)
    vcfg = ViewConfig(layers=tuple(Layer.parse(l) for l in layers),
                      packets_per_flow=int(cfg["packets_per_flow"]),
                      payload_bytes=int(cfg["payload_bytes"]), mask=mask)
    flows, label_names = ingest(args.pcap_dir, args.manifest, cfg["idle_timeout"])
    ds = build_views(flows, vcfg, class_count=len(label_names), label_names=label_names)
    export_views(ds, out)
    _write_effective(out, "encode", cfg, [args.pcap_dir, args.manifest])
    counts = np.bincount(ds.labels, minlength=ds.class_count)
    print(f"{ds.n} flows, {ds.class_count} classes, views {[v.layer.short for v in ds.views]}")
    for name, c in zip(ds.label_names, counts):
        print(f"  {name}: {int(c)}")
    return EXIT_OK


def cmd_analyze(args, cfg):
    from .info import redundancy_report
    from .views import import_views, read_matrix

    out = _prepare_out(args.out, args.force)
    ds = import_views(args.views)
    points = None
    inputs = [args.views]
    if args.embeddings:
        emb_dir = Path(args.embeddings)
        fused = emb_dir / "fused.bin"
        if fused.exists():
            points = read_matrix(fused)[1]
        else:
            emb = import_views(emb_dir)
            points = np.concatenate([v.data for v in emb.views], axis=1)
        if points.shape[0] != ds.n:
            raise PaccInputError(f"embeddings have {points.shape[0]} rows, views have {ds.n}")
        inputs.append(args.embeddings)
    elif ds.kind == "embedding" and (Path(args.views) / "fused.bin").exists():
        points = read_matrix(Path(args.views) / "fused.bin")[1]
    rep = redundancy_report(ds, ds.labels, pca_k=int(cfg["pca_k"]), bins=int(cfg["bins"]),
                            layer_names=[v.layer.short for v in ds.views],
                            silhouette_points=points)
    rep.metadata["kind"] = ds.kind
    rep.write(out)
    _write_effective(out, "analyze", cfg, inputs)
    print(json.dumps({"task_relevance": rep.to_dict()["task_relevance"],
                      "compression_ratio": rep.to_dict()["compression_ratio"],
                      "silhouette": rep.silhouette}))
    return EXIT_OK


def _train_outputs(out, result, ds):
    from .evaluation import confusion_matrix, metrics, write_metrics
    from .model import predict
    from .trainer import _as_float_views, save_model

    save_model(result, out / "model.ckpt")
    result.history.write_csv(out / "history.csv")
    tr, va, te = result.split
    (out / "split.json").write_text(json.dumps(
        {"train": tr.tolist(), "val": va.tolist(), "test": te.tolist()}) + "\n")
    pred = predict(result.model, _as_float_views(ds, te)).classes
    C = ds.class_count
    rep = metrics(ds.labels[te], pred, C)
    write_metrics(rep, confusion_matrix(ds.labels[te], pred, C), out,
                  extra={"split": "test", "best_epoch": result.history.best_epoch,
                         "epochs_run": len(result.history)})
    return rep


def cmd_train(args, cfg):
    from .trainer import train
    from .views import import_views

    out = _prepare_out(args.out, args.force)
    ds = import_views(args.views)
    tcfg = train_config_from(cfg)
    result = train(ds, tcfg)
    rep = _train_outputs(out, result, ds)
    _write_effective(out, "train", cfg, [args.views])
    print(f"best epoch {result.history.best_epoch}; test accuracy {rep.accuracy:.4f}, "
          f"macro-F1 {rep.macro_f1:.4f}")
    return EXIT_OK


def _slug(name):
    return "".join(c if c.isalnum() else "_" for c in name.lower()).strip("_")


def cmd_ablate(args, cfg):
    from .trainer import ABLATIONS, run_ablations, write_ablation_table
    from .views import import_views

    out = _prepare_out(args.out, args.force)
    ds = import_views(args.views)
    variants = _csv_list(args.variants) if args.variants else list(ABLATIONS)
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; choose from {list(ABLATIONS)}")
    results = run_ablations(ds, train_config_from(cfg), variants)
    write_ablation_table(results, out / "ablation_table.csv")
    for name, (_, res) in results.items():
        res.history.write_csv(out / f"history_{_slug(name)}.csv")
    _write_effective(out, "ablate", cfg, [args.views])
    for name, (rep, _) in results.items():
        print(f"{name:24s} acc {rep.accuracy:.4f}  f1 {rep.macro_f1:.4f}")
    return EXIT_OK


def _rows_for(split_name, ckpt_cfg, ds):
    from .trainer import split

    if split_name == "all":
        return np.arange(ds.n)
    tcfg = ckpt_cfg["train"]
    parts = dict(zip(("train", "val", "test"), split(ds.labels, tcfg["split_mode"], tcfg["seed"])))
    return parts[split_name]


def cmd_eval(args, cfg):
    from .evaluation import evaluate, write_metrics
    from .trainer import load_model
    from .views import import_views

    out = _prepare_out(args.out, args.force)
    model, ckpt_cfg = load_model(args.checkpoint)
    ds = import_views(args.views)
    rows = _rows_for(args.split, ckpt_cfg, ds)
    rep, cm = evaluate(model, ds, rows)
    write_metrics(rep, cm, out, extra={"split": args.split})
    _write_effective(out, "eval", cfg, [args.checkpoint, args.views])
    print(f"{args.split}: accuracy {rep.accuracy:.4f}, macro-F1 {rep.macro_f1:.4f}")
    return EXIT_OK


def cmd_predict(args, cfg):
    from .evaluation import _check_dims
    from .model import predict
    from .trainer import _as_float_views, load_model
    from .views import import_views

    model, _ = load_model(args.checkpoint)
    ds = import_views(args.views)
    _check_dims(model, ds)
    rows = _csv_list(args.rows, int) if args.rows else list(range(ds.n))
    bad = [r for r in rows if not 0 <= r < ds.n]
    if bad:
        raise PaccInputError(f"rows out of range [0, {ds.n}): {bad[:5]}")
    pred = predict(model, _as_float_views(ds, np.asarray(rows, dtype=np.int64)))
    names = ds.label_names
    records = []
    for k, r in enumerate(rows):
        c = int(pred.classes[k])
        records.append({
            "row": r,
            "flow": ds.flow_index[r] if ds.flow_index else None,
            "class": c,
            "class_name": names[c] if c < len(names) else str(c),
            "probabilities": pred.probs[k].tolist(),
            "layer_probabilities": {v.layer.short: pred.layer_probs[i][k].tolist()
                                    for i, v in enumerate(ds.views)},
            "fusion_weights": {v.layer.short: float(pred.weights[k, i])
                               for i, v in enumerate(ds.views)},
        })
    text = json.dumps(records[0] if len(records) == 1 else records, indent=2)
    if args.out:
        out = _prepare_out(args.out, args.force)
        (out / "predictions.json").write_text(text + "\n")
        _write_effective(out, "predict", cfg, [args.checkpoint, args.views])
    else:
        print(text)
    return EXIT_OK


def cmd_export_embeddings(args, cfg):
    from .evaluation import export_embeddings
    from .trainer import load_model
    from .views import import_views

    out = _prepare_out(args.out, args.force)
    model, ckpt_cfg = load_model(args.checkpoint)
    ds = import_views(args.views)
    rows = _rows_for(args.split, ckpt_cfg, ds)
    export_embeddings(model, ds, out, rows)
    _write_effective(out, "export-embeddings", cfg, [args.checkpoint, args.views])
    print(f"wrote {rows.size} x {model.config.latent_dim} embeddings for {ds.m} layers to {out}")
    return EXIT_OK


def cmd_sweep(args, cfg):
    from .trainer import summarize_sweep, sweep, write_sweep
    from .views import import_views

    out = _prepare_out(args.out, args.force)
    ds = import_views(args.views)
    values = _csv_list(args.values, float)
    if not values:
        raise UsageError("--values needs at least one number")
    seeds = _csv_list(args.seeds, int) if args.seeds else [int(cfg["seed"])]
    runs = sweep(ds, train_config_from(cfg), args.param, values, seeds)
    write_sweep(runs, out)
    _write_effective(out, "sweep", cfg, [args.views])
    for v, acc, f1 in summarize_sweep(runs):
        print(f"{args.param}={v:g}: accuracy {acc:.4f}, macro-F1 {f1:.4f}")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------

_TRAIN_FLAGS = [
    ("--seed", int), ("--epochs", int), ("--batch-size", int), ("--lr", float),
    ("--patience", int), ("--beta-cb", float), ("--latent-dim", int), ("--decoder-hidden", int),
    ("--proj-dim", int), ("--gate-dim", int), ("--gate-hidden", int), ("--dropout", float),
    ("--tau-nce", float), ("--tau-fuse", float), ("--lambda-proj", float),
    ("--lambda-unc", float), ("--split-mode", str), ("--fusion", str),
]


def _bool_flag(p, name, help_text):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action=argparse.BooleanOptionalAction,
                   default=None, help=help_text)


def _add_train_flags(p):
    for flag, typ in _TRAIN_FLAGS:
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--hidden", type=lambda s: _csv_list(s, int), default=None,
                   help="encoder hidden sizes, e.g. 512,256")
    _bool_flag(p, "rec", "reconstruction term")
    _bool_flag(p, "con", "cross-layer consensus term")
    _bool_flag(p, "task-info", "per-layer supervision term")


def build_parser():
    parser = _Parser(prog="pacc", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"pacc {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_text, out_required=True):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--out", required=out_required)
        p.add_argument("--force", action="store_true", help="overwrite a non-empty --out")
        return p

    p = command("encode", cmd_encode, "captures + manifest -> layer views")
    p.add_argument("--pcap-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--layers", type=_csv_list, default=None, help="e.g. L3,L4")
    p.add_argument("--packets-per-flow", type=int, default=None)
    p.add_argument("--payload-bytes", type=int, default=None)
    p.add_argument("--mask", type=_csv_list, default=None, help="extra LAYER:field entries")
    _bool_flag(p, "mask-ports", "also mask port fields")
    _bool_flag(p, "default-mask", "mask addresses, checksums, IP id and sequence numbers")
    p.add_argument("--fill-value", type=float, default=None)
    p.add_argument("--idle-timeout", type=float, default=None)

    p = command("analyze", cmd_analyze, "redundancy report for a view directory")
    p.add_argument("--views", required=True)
    p.add_argument("--embeddings", help="embedding directory for the silhouette score")
    p.add_argument("--pca-k", type=int, default=None)
    p.add_argument("--bins", type=int, default=None)

    for name, func, help_text in (("train", cmd_train, "train one model"),
                                  ("ablate", cmd_ablate, "full model vs ablations")):
        p = command(name, func, help_text)
        p.add_argument("--views", required=True)
        _add_train_flags(p)
        if name == "ablate":
            p.add_argument("--variants", help="comma-separated subset of variant names")

    p = command("eval", cmd_eval, "metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")

    p = command("predict", cmd_predict, "per-flow predictions as JSON", out_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--rows", help="comma-separated row indices (default: all)")

    p = command("export-embeddings", cmd_export_embeddings, "write latents and fusion weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="all")

    p = command("sweep", cmd_sweep, "latent size or class-balance sweep")
    p.add_argument("--views", required=True)
    p.add_argument("--param", choices=("dim", "beta"), required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    _add_train_flags(p)
    return parser


_NON_CONFIG = {"command", "func", "config", "out", "force", "log_level", "pcap_dir", "manifest",
               "views", "embeddings", "checkpoint", "split", "rows", "variants", "param",
               "values", "seeds"}


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    threads = configured_threads()
    if threads:
        set_threads(threads)
    try:
        args = build_parser().parse_args(argv)
        logging.getLogger().setLevel(args.log_level.upper())
        overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
        cfg = load_run_config(args.config, overrides)
        return args.func(args, cfg)
    except PaccInputError as exc:
        print(f"pacc: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PaccError as exc:
        print(f"pacc: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError) as exc:
        print(f"pacc: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArithmeticError, RuntimeError) as exc:
        print(f"pacc: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
