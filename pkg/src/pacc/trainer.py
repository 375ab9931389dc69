"""Deterministic minibatch training, stratified splits and ablation runs."""
import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .errors import ClassTooSmall, ConfigError, NonFiniteLoss
from .evaluation import metrics
from .model import (LossBreakdown, LossFlags, ModelConfig, PACCModel, class_balance_weights,
                    predict, total_loss)

logger = logging.getLogger(__name__)

SPLIT_MODES = ("8:1:1", "9:1")


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 64
    lr: float = 1e-3
    epochs: int = 100
    patience: int = 10
    beta_cb: float = 0.99
    latent_dim: int = 128
    hidden: tuple = (512, 256)
    decoder_hidden: int = 256
    proj_dim: int = 64
    gate_dim: int = 32
    gate_hidden: int = 16
    dropout: float = 0.5
    tau_nce: float = 0.1
    tau_fuse: float = 1.0
    lambda_proj: float = 1.0
    lambda_unc: float = 1.0
    split_mode: str = "8:1:1"
    rec: bool = True
    con: bool = True
    task_info: bool = True
    fusion: str = "attention"
    rec_weight: float = 1.0
    con_weight: float = 1.0
    ce_weight: float = 1.0
    global_weight: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (InfoNCE needs negatives)")
        if self.split_mode not in SPLIT_MODES:
            raise ConfigError(f"split_mode must be one of {SPLIT_MODES}")
        if self.epochs < 0 or self.patience < 1:
            raise ConfigError("epochs must be >= 0 and patience >= 1")
        if not 0.0 <= self.beta_cb < 1.0:
            raise ConfigError("beta_cb must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def model_config(self, input_dims, num_classes):
        return ModelConfig(input_dims, num_classes, latent_dim=self.latent_dim,
                           hidden=self.hidden, decoder_hidden=self.decoder_hidden,
                           proj_dim=self.proj_dim, gate_dim=self.gate_dim,
                           gate_hidden=self.gate_hidden, tau_nce=self.tau_nce,
                           tau_fuse=self.tau_fuse, lambda_proj=self.lambda_proj,
                           lambda_unc=self.lambda_unc, dropout=self.dropout,
                           fusion=self.fusion, seed=self.seed)

    def loss_flags(self):
        return LossFlags(self.rec, self.con, self.task_info, self.rec_weight, self.con_weight,
                         self.ce_weight, self.global_weight)


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def split(labels, mode="8:1:1", seed=0):
    """Stratified ``(train, val, test)`` index arrays, each sorted.

    ``8:1:1`` takes 10% of every class for validation and 10% for test (at
    least one each). ``9:1`` holds out 10% per class for test, then the last
    10% of each class's shuffled training part becomes validation.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if mode not in SPLIT_MODES:
        raise ConfigError(f"unknown split mode {mode!r}")
    if mode == "8:1:1" and labels.shape[0] < 10:
        raise ClassTooSmall("8:1:1 split needs at least 10 samples")
    rng = np.random.default_rng([seed, 0x5EED])
    train, val, test = [], [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.shape[0])]
        n = idx.shape[0]
        if mode == "8:1:1":
            if n < 3:
                raise ClassTooSmall(f"class {c} has {n} samples; 8:1:1 needs at least 3")
            n_test = max(1, _round_half_up(0.1 * n))
            n_val = max(1, _round_half_up(0.1 * n))
            test.append(idx[:n_test])
            val.append(idx[n_test:n_test + n_val])
            train.append(idx[n_test + n_val:])
        else:
            if n < 2:
                raise ClassTooSmall(f"class {c} has {n} samples; 9:1 needs at least 2")
            n_test = max(1, _round_half_up(0.1 * n))
            rest = idx[n_test:]
            # keep at least one training sample per class
            n_val = min(max(1, _round_half_up(0.1 * rest.shape[0])), rest.shape[0] - 1)
            cut = rest.shape[0] - n_val
            test.append(idx[:n_test])
            train.append(rest[:cut])
            val.append(rest[cut:])
    return tuple(np.sort(np.concatenate(part)) for part in (train, val, test))


@dataclass
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    val_accuracy: float
    val_macro_f1: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = float("-inf")
    initial_loss: float = float("nan")

    def __len__(self):
        return len(self.epochs)

    def running_best(self):
        return np.maximum.accumulate([e.val_accuracy for e in self.epochs]) if self.epochs else []

    def write_csv(self, path, include_time=True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            head = ["epoch", "rec_mean", "consensus", "layer_ce", "global_ce", "total",
                    "val_accuracy", "val_macro_f1"]
            w.writerow(head + (["seconds"] if include_time else []))
            for e in self.epochs:
                row = [e.epoch, repr(e.loss.rec_mean), repr(e.loss.consensus),
                       repr(e.loss.layer_ce), repr(e.loss.global_ce), repr(e.loss.total),
                       repr(e.val_accuracy), repr(e.val_macro_f1)]
                w.writerow(row + ([f"{e.seconds:.4f}"] if include_time else []))


@dataclass
class TrainResult:
    model: PACCModel
    history: TrainHistory
    split: tuple
    class_weights: np.ndarray
    config: TrainConfig

    def checkpoint_config(self):
        return {"train": self.config.to_dict(),
                "model": self.model.config.to_json(),
                "class_weights": [float(x) for x in self.class_weights]}


def _as_float_views(ds, idx=None):
    views = [v.data for v in ds.views]
    if idx is not None:
        views = [v[idx] for v in views]
    return [np.asarray(v, dtype=np.float64) for v in views]


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if out and out[-1].shape[0] < 2:
        out.pop()
    return out


def _mean_breakdown(parts, sizes):
    w = np.asarray(sizes, dtype=np.float64) / float(np.sum(sizes))
    return LossBreakdown(
        list(np.sum([wi * np.asarray(p.rec_per_layer) for wi, p in zip(w, parts)], axis=0)),
        float(np.dot(w, [p.consensus for p in parts])),
        float(np.dot(w, [p.layer_ce for p in parts])),
        float(np.dot(w, [p.global_ce for p in parts])),
        float(np.dot(w, [p.total for p in parts])),
    )


def train(ds, config=None, split_indices=None, on_epoch=None):
    """Train a PACC model; returns a :class:`TrainResult` with the best-epoch weights.

    Model selection uses validation accuracy (ties keep the earlier epoch);
    training stops after ``patience`` epochs without improvement.
    """
    config = config or TrainConfig()
    if split_indices is None:
        split_indices = split(ds.labels, config.split_mode, config.seed)
    tr, va, _ = split_indices
    model = PACCModel(config.model_config(ds.input_dims, ds.class_count))
    model.set_input_means(_as_float_views(ds, tr))
    counts = np.bincount(ds.labels[tr], minlength=ds.class_count)
    lam = class_balance_weights(counts, config.beta_cb)
    history = TrainHistory()
    if config.epochs == 0:
        return TrainResult(model, history, split_indices, lam, config)

    flags = config.loss_flags()
    params = model.parameters()
    state = ag.AdamState(lr=config.lr)
    X_tr = _as_float_views(ds, tr)
    y_tr = ds.labels[tr]
    X_va = _as_float_views(ds, va)
    y_va = ds.labels[va]

    # reference loss at initialization: one full pass with the first epoch's batches
    init_rng = np.random.default_rng([config.seed, 1])
    init_batches = _batches(len(tr), config.batch_size, init_rng)
    parts, sizes = [], []
    for b, idx in enumerate(init_batches):
        _, bd, _ = total_loss(model, [x[idx] for x in X_tr], y_tr[idx], lam, flags, train=True,
                              dropout_seed=(config.seed, 0, b))
        parts.append(bd)
        sizes.append(idx.shape[0])
    history.initial_loss = _mean_breakdown(parts, sizes).total

    best = model.copy_arrays()
    step = 0
    stale = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        rng = np.random.default_rng([config.seed, epoch])
        parts, sizes = [], []
        for b, idx in enumerate(_batches(len(tr), config.batch_size, rng)):
            step += 1
            objective, bd, _ = total_loss(model, [x[idx] for x in X_tr], y_tr[idx], lam, flags,
                                          train=True, dropout_seed=(config.seed, step))
            if not np.isfinite(bd.total):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {b}",
                                    batch_id=(epoch, b),
                                    dump={"indices": tr[idx].tolist(), "breakdown": asdict(bd)})
            ag.zero_grad(params)
            grads = ag.backward(objective, params)
            ag.adam_step(params, grads, state)
            parts.append(bd)
            sizes.append(idx.shape[0])
        train_bd = _mean_breakdown(parts, sizes)
        if X_va[0].shape[0]:
            pred = predict(model, X_va).classes
            rep = metrics(y_va, pred, ds.class_count)
            acc, f1 = rep.accuracy, rep.macro_f1
        else:
            acc, f1 = 0.0, 0.0
        rec = EpochRecord(epoch, train_bd, acc, f1, time.perf_counter() - t0)
        history.epochs.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        logger.debug("epoch %d loss %.4f val_acc %.4f", epoch, train_bd.total, acc)
        if acc > history.best_val_accuracy:
            history.best_val_accuracy = acc
            history.best_epoch = epoch
            best = model.copy_arrays()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_arrays(best)
    return TrainResult(model, history, split_indices, lam, config)


ABLATIONS = {
    "PACC (full)": {},
    "w/o Reconstruction": {"rec": False},
    "w/o Consensus": {"con": False},
    "w/o Task-Info": {"task_info": False},
    "w/ Classifier (nPrint)": {"rec": False, "con": False, "task_info": False, "fusion": "concat"},
}


def run_ablations(ds, config=None, variants=None):
    """Train the full model, each single-term ablation and the classifier-only baseline.

    All variants share the split and seed. Returns ``{variant: (test metrics, TrainResult)}``.
    """
    config = config or TrainConfig()
    variants = variants or list(ABLATIONS)
    split_indices = split(ds.labels, config.split_mode, config.seed)
    test_idx = split_indices[2]
    out = {}
    for name in variants:
        cfg = replace(config, **ABLATIONS[name])
        result = train(ds, cfg, split_indices)
        pred = predict(result.model, _as_float_views(ds, test_idx)).classes
        out[name] = (metrics(ds.labels[test_idx], pred, ds.class_count), result)
    return out


def write_ablation_table(results, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "accuracy", "precision", "recall", "f1", "best_epoch"])
        for name, (rep, res) in results.items():
            w.writerow([name, repr(rep.accuracy), repr(rep.macro_precision),
                        repr(rep.macro_recall), repr(rep.macro_f1), res.history.best_epoch])


SWEEP_PARAMS = {"dim": "latent_dim", "beta": "beta_cb"}


@dataclass
class SweepRun:
    value: float
    seed: int
    accuracy: float
    macro_f1: float


def sweep(ds, config, param, values, seeds=(0,)):
    """Train once per ``(value, seed)`` and score each run on its test split.

    ``param`` is ``"dim"`` (latent size) or ``"beta"`` (class-balance beta).
    Returns the list of :class:`SweepRun` in value-major order.
    """
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep param must be one of {sorted(SWEEP_PARAMS)}")
    key = SWEEP_PARAMS[param]
    cast = int if key == "latent_dim" else float
    runs = []
    for value in values:
        for seed in seeds:
            cfg = replace(config, seed=int(seed), **{key: cast(value)})
            result = train(ds, cfg)
            test_idx = result.split[2]
            pred = predict(result.model, _as_float_views(ds, test_idx)).classes
            rep = metrics(ds.labels[test_idx], pred, ds.class_count)
            runs.append(SweepRun(cast(value), int(seed), rep.accuracy, rep.macro_f1))
    return runs


def summarize_sweep(runs):
    """Mean accuracy and macro-F1 per swept value, in first-seen order."""
    out = {}
    for r in runs:
        out.setdefault(r.value, []).append(r)
    return [(v, float(np.mean([r.accuracy for r in rs])), float(np.mean([r.macro_f1 for r in rs])))
            for v, rs in out.items()]


def write_sweep(runs, out_dir):
    out = Path(out_dir)
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "accuracy", "macro_f1"])
        for v, acc, f1 in summarize_sweep(runs):
            w.writerow([v, repr(acc), repr(f1)])
    with (out / "sweep_runs.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "seed", "accuracy", "macro_f1"])
        for r in runs:
            w.writerow([r.value, r.seed, repr(r.accuracy), repr(r.macro_f1)])


def save_model(result, path):
    """Write the trained weights and full configuration as a PACCCKPT file."""
    return ag.save_checkpoint(path, result.model.named_arrays(), result.checkpoint_config())


def load_model(path):
    """Return ``(PACCModel, checkpoint config dict)``."""
    named, cfg = ag.load_checkpoint(path)
    model = PACCModel(ModelConfig(**cfg["model"]))
    model.load_arrays(named)
    return model, cfg
