"""Plug-in information estimators and redundancy diagnostics.

All quantities are in nats. Continuous inputs are discretized by projecting
onto the top principal components, quantile-binning each component, and
treating the tuple of bin codes as one discrete symbol.
"""
import csv
import json
import warnings
import zlib
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import (DegenerateRank, DegenerateRankWarning, EmptyDistribution, SingleClass,
                     SparseBinningWarning)

ZLIB_LEVEL = 6


def _as_counts(counts):
    c = np.asarray(counts, dtype=np.float64)
    if c.size == 0 or c.sum() < 1:
        raise EmptyDistribution("distribution has no mass")
    if (c < 0).any():
        raise ValueError("counts must be non-negative")
    return c


def _plogp_sum(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def discrete_entropy(counts):
    """Shannon entropy of a histogram (any shape, flattened)."""
    c = _as_counts(counts).ravel()
    return _plogp_sum(c / c.sum())


def mutual_information(joint):
    """I(A;B) from a 2-D contingency table."""
    c = _as_counts(joint)
    if c.ndim != 2:
        raise ValueError("joint must be 2-D")
    p = c / c.sum()
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float((p[nz] * np.log(p[nz] / (pa @ pb)[nz])).sum())


def conditional_mi(joint3):
    """I(A;B|Y) from a 3-D table with axes (A, B, Y)."""
    c = _as_counts(joint3)
    if c.ndim != 3:
        raise ValueError("joint3 must be 3-D with axes (A, B, Y)")
    total = c.sum()
    out = 0.0
    for y in range(c.shape[2]):
        sl = c[:, :, y]
        ny = sl.sum()
        if ny > 0:
            out += (ny / total) * mutual_information(sl)
    return out


def compact_codes(*columns):
    """Map each distinct tuple of the given integer columns to 0..K-1."""
    stacked = np.stack([np.asarray(c, dtype=np.int64).ravel() for c in columns], axis=1)
    _, inv = np.unique(stacked, axis=0, return_inverse=True)
    return inv.ravel().astype(np.int64)


def contingency(*codes):
    """Count table over compact code vectors (one axis per argument)."""
    codes = [compact_codes(c) for c in codes]
    shape = tuple(int(c.max()) + 1 if c.size else 0 for c in codes)
    flat = np.ravel_multi_index(codes, shape)
    return np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape).astype(np.float64)


def pca_project(X, k):
    """Scores on the top-``k`` principal directions of the centered data.

    Each direction is sign-fixed so its largest-magnitude loading is
    positive. Raises :class:`DegenerateRank` for rank-0 data and warns (and
    shrinks ``k``) when fewer than ``k`` directions carry variance.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 rows")
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"k={k} outside [1, min(N-1, d)={min(n - 1, d)}]")
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    tol = max(n, d) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum()) if s.size and s[0] > 0 else 0
    if rank == 0:
        raise DegenerateRank("data has no variance")
    if rank < k:
        warnings.warn(f"only {rank} non-degenerate directions, reducing k from {k}",
                      DegenerateRankWarning, stacklevel=2)
        k = rank
    comps = vt[:k]
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    comps = comps * signs[:, None]
    return Xc @ comps.T


def quantile_bin(x, bins):
    """Integer codes in ``[0, bins)`` from empirical-quantile edges.

    Edges are inverted-CDF quantiles at ``1/bins, ..., (bins-1)/bins`` (always
    data values, so duplicating the sample leaves codes unchanged); a value's
    code is the number of edges strictly below it, which keeps tied values in
    one bin.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        return np.zeros(0, dtype=np.int64)
    q = np.arange(1, bins) / bins
    edges = np.quantile(x, q, method="inverted_cdf")
    return np.searchsorted(edges, x, side="left").astype(np.int64)


def _as_matrix(X):
    data = getattr(X, "data", X)
    return np.asarray(data, dtype=np.float64)


def view_codes(X, pca_k=3, bins=8):
    """Discretize a view: PCA to ``pca_k`` dims, bin each, joint tuple code."""
    X = _as_matrix(X)
    n, d = X.shape
    k = max(1, min(pca_k, n - 1, d))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateRankWarning)
            proj = pca_project(X, k)
    except DegenerateRank:
        return np.zeros(n, dtype=np.int64)
    cols = [quantile_bin(proj[:, j], bins) for j in range(proj.shape[1])]
    codes = compact_codes(*cols)
    occupied = int(codes.max()) + 1
    if n < 10 * occupied:
        warnings.warn(f"N={n} is below 10x the {occupied} occupied joint cells; "
                      "plug-in estimates are biased upward", SparseBinningWarning, stacklevel=2)
    return codes


def view_mi(X, Y, pca_k=3, bins=8):
    """Plug-in I(X;Y) after PCA + quantile binning of X."""
    X = _as_matrix(X)
    if X.shape[0] < bins:
        raise ValueError(f"need N >= bins ({X.shape[0]} < {bins})")
    return mutual_information(contingency(view_codes(X, pca_k, bins), Y))


def _pair_cmi(ci, cj, Y):
    raw = conditional_mi(contingency(ci, cj, Y))
    h_i = conditional_entropy(ci, Y)
    h_j = conditional_entropy(cj, Y)
    denom = min(h_i, h_j)
    if denom <= 0:
        return 0.0
    return float(np.clip(raw / denom, 0.0, 1.0))


def conditional_entropy(codes, Y):
    """H(codes | Y) pooled over classes."""
    table = contingency(codes, Y)
    return discrete_entropy(table) - discrete_entropy(table.sum(axis=0))


def view_pair_cmi(X_i, X_j, Y, pca_k=3, bins=8):
    """I(X_i;X_j|Y) normalized by min(H(X_i|Y), H(X_j|Y)); 0/0 := 0."""
    return _pair_cmi(view_codes(X_i, pca_k, bins), view_codes(X_j, pca_k, bins), Y)


def compression_ratio(view, level=ZLIB_LEVEL):
    """Raw serialized bytes over zlib-compressed bytes.

    Ternary matrices ({-1, 0, 1}) are serialized as 2 bits per entry; any
    other matrix (learned embeddings) as little-endian float32.
    """
    data = _as_matrix(view)
    if data.size == 0:
        raise ValueError("compression_ratio needs a nonempty matrix")
    if np.isin(data, (-1.0, 0.0, 1.0)).all():
        raw = kernels.pack_ternary(data).tobytes()
    else:
        raw = np.ascontiguousarray(data, dtype="<f4").tobytes()
    return len(raw) / len(zlib.compress(raw, level))


def silhouette(points, labels):
    """Mean silhouette coefficient with Euclidean distance."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    _, compact = np.unique(np.asarray(labels), return_inverse=True)
    compact = compact.ravel()
    k = int(compact.max()) + 1 if compact.size else 0
    if k < 2:
        raise SingleClass("silhouette needs at least two classes")
    return float(kernels.silhouette_samples(X, compact, k).mean())


@dataclass
class RedundancyReport:
    layer_names: list
    pairwise_cmi: np.ndarray
    task_relevance: np.ndarray
    compression_ratio: np.ndarray
    silhouette: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "layer_names": list(self.layer_names),
            "pairwise_cmi": np.asarray(self.pairwise_cmi).tolist(),
            "task_relevance": np.asarray(self.task_relevance).tolist(),
            "compression_ratio": np.asarray(self.compression_ratio).tolist(),
            "silhouette": self.silhouette,
            "metadata": self.metadata,
        }

    def write(self, out_dir, stem="redundancy_report"):
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with (out / f"{stem}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["layer", *self.layer_names])
            for name, row in zip(self.layer_names, self.pairwise_cmi):
                w.writerow([name, *(f"{v:.10g}" for v in row)])


REPORT_SCHEMA = {
    "type": "object",
    "required": ["layer_names", "pairwise_cmi", "task_relevance", "compression_ratio",
                 "silhouette", "metadata"],
    "properties": {
        "layer_names": {"type": "array", "items": {"type": "string"}},
        "pairwise_cmi": {"type": "array",
                         "items": {"type": "array",
                                   "items": {"type": "number", "minimum": 0, "maximum": 1}}},
        "task_relevance": {"type": "array", "items": {"type": "number"}},
        "compression_ratio": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "silhouette": {"type": ["number", "null"], "minimum": -1, "maximum": 1},
        "metadata": {"type": "object"},
    },
}


def redundancy_report(views, Y, pca_k=3, bins=8, layer_names=None, silhouette_points=None):
    """Pairwise normalized CMI, per-view I(X;Y) and compression ratios.

    ``views`` is a list of matrices (or :class:`ViewMatrix`) or a
    :class:`MultiviewDataset`; when ``silhouette_points`` is given its mean
    silhouette under ``Y`` is included.
    """
    if hasattr(views, "views"):
        views = views.views
    views = list(views)
    m = len(views)
    if m < 1:
        raise ValueError("need at least one view")
    if layer_names is None:
        layer_names = [getattr(getattr(v, "layer", None), "name", None) or f"view{i}"
                       for i, v in enumerate(views)]
    Y = np.asarray(Y)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        codes = [view_codes(v, pca_k, bins) for v in views]
        cmi = np.eye(m)
        for i in range(m):
            for j in range(i + 1, m):
                cmi[i, j] = cmi[j, i] = _pair_cmi(codes[i], codes[j], Y)
        relevance = np.array([mutual_information(contingency(c, Y)) for c in codes])
        ratios = np.array([compression_ratio(v) for v in views])
        sil = None if silhouette_points is None else silhouette(silhouette_points, Y)
    notes = sorted({str(w.message) for w in caught})
    meta = {
        "estimator": "plug-in histogram after PCA + quantile binning",
        "pca_k": pca_k,
        "bins": bins,
        "log_base": "e (nats)",
        "cmi_normalizer": "min(H(code_i|Y), H(code_j|Y)) pooled over classes; 0/0 := 0",
        "binning": "inverted-CDF quantile edges; code = #edges strictly below value",
        "codec": f"zlib level {ZLIB_LEVEL} (deflate); ternary packed 2 bits/entry "
                 "(-1->10, 0->00, 1->01), other matrices as float32 LE",
        "n": int(Y.shape[0]),
        "warnings": notes,
    }
    return RedundancyReport(list(layer_names), cmi, relevance, ratios, sil, meta)


class NonRedundancy(NamedTuple):
    non_redundant: bool
    cmi_i_given_j: float
    cmi_j_given_i: float


def nonredundancy_check(X_i, X_j, Y, epsilon=0.05, pca_k=3, bins=8):
    """True when either view carries more than ``epsilon`` nats about Y given the other."""
    ci = view_codes(X_i, pca_k, bins)
    cj = view_codes(X_j, pca_k, bins)
    # I(A;Y|B): table axes (A, Y, B)
    i_given_j = conditional_mi(contingency(ci, Y, cj))
    j_given_i = conditional_mi(contingency(cj, Y, ci))
    return NonRedundancy(bool(i_given_j > epsilon or j_given_i > epsilon), i_given_j, j_given_i)
