"""Classification metrics, confusion matrices and embedding export."""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptySplit, LabelOutOfRange


def confusion_matrix(y_true, y_pred, C):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    for y in (y_true, y_pred):
        if y.size and (y.min() < 0 or y.max() >= C):
            raise LabelOutOfRange(f"labels must lie in [0, {C})")
    return np.bincount(y_true * C + y_pred, minlength=C * C).reshape(C, C)


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    precision: list
    recall: list
    f1: list
    support: list
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                          "support": self.support},
            "flags": self.flags,
            "conventions": {"zero_division": 0.0,
                            "macro": "unweighted mean over all C classes, zero-support included"},
        }


def _safe_ratio(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def metrics(y_true, y_pred, C):
    """Accuracy plus per-class and macro precision/recall/F1 (0/0 := 0)."""
    cm = confusion_matrix(y_true, y_pred, C).astype(np.float64)
    n = cm.sum()
    tp = np.diag(cm)
    pred_pos = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = _safe_ratio(tp, pred_pos)
    recall = _safe_ratio(tp, support)
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    flags = []
    if (pred_pos == 0).any():
        flags.append(f"precision 0/0 for classes {np.flatnonzero(pred_pos == 0).tolist()}")
    if (support == 0).any():
        flags.append(f"zero-support classes {np.flatnonzero(support == 0).tolist()} counted as 0")
    return MetricsReport(
        accuracy=float(tp.sum() / n) if n else 0.0,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        precision=precision.tolist(), recall=recall.tolist(), f1=f1.tolist(),
        support=[int(s) for s in support], flags=flags,
    )


def _check_dims(model, ds):
    if list(model.config.input_dims) != list(ds.input_dims):
        raise DimMismatch(f"checkpoint expects view widths {model.config.input_dims}, "
                          f"dataset has {ds.input_dims}")
    if ds.class_count > model.config.num_classes:
        raise DimMismatch(f"dataset has {ds.class_count} classes, model {model.config.num_classes}")


def evaluate(model, ds, indices=None):
    """Eval-mode metrics and confusion matrix on the rows in ``indices``."""
    from .model import predict

    _check_dims(model, ds)
    idx = np.arange(ds.n) if indices is None else np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise EmptySplit("evaluation split is empty")
    views = [np.asarray(v.data[idx], dtype=np.float64) for v in ds.views]
    pred = predict(model, views).classes
    C = model.config.num_classes
    y = ds.labels[idx]
    return metrics(y, pred, C), confusion_matrix(y, pred, C)


def write_metrics(report, confusion, out_dir, extra=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    with (out / "confusion.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        C = confusion.shape[0]
        w.writerow(["true\\pred", *range(C)])
        for c in range(C):
            w.writerow([c, *confusion[c].tolist()])


FUSED_LAYER_ID = 255
WEIGHTS_LAYER_ID = 254


def export_embeddings(model, ds, out_dir, indices=None, batch_size=512):
    """Write per-layer latents as a PACCVIEW directory, plus fused latents and weights.

    The directory imports with :func:`pacc.views.import_views` (one view per
    layer, kind ``embedding``); ``fused.bin`` and ``fusion_weights.bin`` sit
    alongside with layer ids 255 and 254.
    """
    from .model import predict
    from .views import MultiviewDataset, ViewMatrix, export_views, write_matrix

    _check_dims(model, ds)
    idx = np.arange(ds.n) if indices is None else np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise EmptySplit("nothing to export")
    Z_parts, fused_parts, w_parts = [], [], []
    for start in range(0, idx.size, batch_size):
        rows = idx[start:start + batch_size]
        pred = predict(model, [np.asarray(v.data[rows], dtype=np.float64) for v in ds.views])
        Z_parts.append(pred.latents)
        fused_parts.append(pred.fused)
        w_parts.append(pred.weights)
    Z = [np.concatenate([p[i] for p in Z_parts]) for i in range(ds.m)]
    fused = np.concatenate(fused_parts)
    weights = np.concatenate(w_parts)
    emb = MultiviewDataset(
        views=[ViewMatrix(v.layer, z.astype(np.float32)) for v, z in zip(ds.views, Z)],
        labels=ds.labels[idx], class_count=ds.class_count,
        flow_index=[ds.flow_index[i] for i in idx] if ds.flow_index else [],
        label_names=ds.label_names, schemas=[], packets_per_flow=ds.packets_per_flow,
        fill_value=ds.fill_value, masked_fields=ds.masked_fields, kind="embedding",
    )
    out = export_views(emb, out_dir, extra_meta={
        "fused_file": "fused.bin", "fusion_weights_file": "fusion_weights.bin",
        "latent_dim": model.config.latent_dim})
    write_matrix(out / "fused.bin", fused, FUSED_LAYER_ID)
    write_matrix(out / "fusion_weights.bin", weights, WEIGHTS_LAYER_ID)
    return out
