"""The PACC network: per-layer encoders/decoders/heads, InfoNCE consensus,
uncertainty-aware fusion, and the joint objective.
"""
from dataclasses import asdict, dataclass
from typing import List, NamedTuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor, parameter
from .errors import (AllRowsDegenerate, BatchTooSmall, EmptyClass, LabelOutOfRange,
                     NonPositiveTemperature, ShapeMismatch)


@dataclass
class ModelConfig:
    input_dims: list
    num_classes: int
    latent_dim: int = 128
    hidden: tuple = (512, 256)
    decoder_hidden: int = 256
    proj_dim: int = 64
    gate_dim: int = 32
    gate_hidden: int = 16
    tau_nce: float = 0.1
    tau_fuse: float = 1.0
    lambda_proj: float = 1.0
    lambda_unc: float = 1.0
    dropout: float = 0.5
    fusion: str = "attention"  # "attention" or "concat" (plain concatenation)
    seed: int = 0

    def __post_init__(self):
        self.input_dims = [int(d) for d in self.input_dims]
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.input_dims:
            raise ValueError("at least one view required")
        if self.tau_nce <= 0 or self.tau_fuse <= 0:
            raise NonPositiveTemperature("temperatures must be > 0")
        if self.fusion not in ("attention", "concat"):
            raise ValueError(f"unknown fusion mode {self.fusion!r}")

    @property
    def m(self):
        return len(self.input_dims)

    def to_json(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class PACCModel:
    def __init__(self, config):
        self.config = config
        self.params = {}
        rng = np.random.default_rng(config.seed)
        D = config.latent_dim

        def dense(name, fan_in, fan_out, bias=True):
            self.params[f"{name}.W"] = parameter(_glorot(rng, fan_in, fan_out), f"{name}.W")
            if bias:
                self.params[f"{name}.b"] = parameter(np.zeros(fan_out), f"{name}.b")

        for i, d_f in enumerate(config.input_dims):
            sizes = [d_f, *config.hidden, D]
            for s in range(len(sizes) - 1):
                dense(f"enc{i}.{s}", sizes[s], sizes[s + 1])
            dense(f"dec{i}.0", D, config.decoder_hidden)
            dense(f"dec{i}.1", config.decoder_hidden, d_f)
            dense(f"head{i}", D, config.num_classes)
        dense("scorer", D, config.proj_dim)
        dense("gate.proj", D, config.gate_dim, bias=False)
        dense("gate.0", config.gate_dim, config.gate_hidden)
        dense("gate.1", config.gate_hidden, 1)
        dense("global", config.m * D, config.num_classes)
        # per-column input offsets, fixed before training (not optimized)
        self.input_means = [np.zeros(d) for d in config.input_dims]

    # -- parameter bookkeeping ---------------------------------------------------
    def parameters(self):
        return list(self.params.values())

    def named_arrays(self):
        """Trainable arrays followed by the fixed input offsets."""
        out = [(k, p.data) for k, p in self.params.items()]
        return out + [(f"input{i}.mean", mu) for i, mu in enumerate(self.input_means)]

    def set_input_means(self, views):
        """Center every view on the column means of ``views`` (typically the training split).

        Columns that never change (absent fields padded with the fill value)
        then contribute nothing to the first encoder layer.
        """
        if len(views) != self.config.m:
            raise ShapeMismatch(f"model has {self.config.m} views, got {len(views)}")
        self.input_means = [np.asarray(v, dtype=np.float64).mean(axis=0) for v in views]

    def groups(self):
        """Parameter names grouped by role."""
        out = {"encoders": [], "decoders": [], "heads": [], "scorer": [], "gate": [], "global": []}
        prefix = {"enc": "encoders", "dec": "decoders", "hea": "heads", "sco": "scorer",
                  "gat": "gate", "glo": "global"}
        for k in self.params:
            out[prefix[k[:3]]].append(k)
        return out

    def load_arrays(self, named):
        named = dict(named)
        for i, d_f in enumerate(self.config.input_dims):
            mu = named.pop(f"input{i}.mean", None)
            if mu is not None:
                if mu.shape != (d_f,):
                    raise ShapeMismatch(f"input{i}.mean: checkpoint {mu.shape} vs model ({d_f},)")
                self.input_means[i] = np.array(mu, dtype=np.float64)
        missing = set(self.params) - set(named)
        if missing:
            raise ShapeMismatch(f"checkpoint lacks parameters: {sorted(missing)[:3]}")
        for k, p in self.params.items():
            if named[k].shape != p.data.shape:
                raise ShapeMismatch(f"{k}: checkpoint {named[k].shape} vs model {p.data.shape}")
            p.data = np.array(named[k], dtype=np.float64)

    def copy_arrays(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def _dense(self, x, name):
        y = x @ self.params[f"{name}.W"]
        b = self.params.get(f"{name}.b")
        return y if b is None else y + b

    # -- sub-networks ------------------------------------------------------------
    def encode(self, i, x, train=False, dropout_seed=(0, 0)):
        cfg = self.config
        n_stages = len(cfg.hidden) + 1
        h = ag.as_tensor(np.asarray(x, dtype=np.float64) - self.input_means[i])
        for s in range(n_stages):
            h = self._dense(h, f"enc{i}.{s}")
            if s < n_stages - 1:
                h = ag.tanh(h)
                h = ag.dropout(h, cfg.dropout, train, (*dropout_seed, i, s))
        return h

    def encode_all(self, views, train=False, dropout_seed=(0, 0)):
        if len(views) != self.config.m:
            raise ShapeMismatch(f"model has {self.config.m} views, got {len(views)}")
        out = []
        for i, x in enumerate(views):
            x = np.asarray(x, dtype=np.float64)
            if x.ndim != 2 or x.shape[1] != self.config.input_dims[i]:
                raise ShapeMismatch(f"view {i}: expected (B, {self.config.input_dims[i]}), got {x.shape}")
            if x.shape[0] == 0:
                raise ShapeMismatch("empty batch")
            out.append(self.encode(i, x, train, dropout_seed))
        return out

    def decode(self, i, z):
        return self._dense(ag.tanh(self._dense(z, f"dec{i}.0")), f"dec{i}.1")

    def head_logits(self, i, z):
        return self._dense(z, f"head{i}")

    def project(self, z):
        return ag.tanh(self._dense(z, "scorer"))

    def gate_score(self, z):
        u = ag.tanh(self._dense(z, "gate.proj"))
        return ag.tanh(self._dense(ag.tanh(self._dense(u, "gate.0")), "gate.1"))

    # -- full forward ------------------------------------------------------------
    def forward(self, views, train=False, dropout_seed=(0, 0), decode=True):
        cfg = self.config
        Z = self.encode_all(views, train, dropout_seed)
        logits = [self.head_logits(i, z) for i, z in enumerate(Z)]
        log_probs = [ag.log_softmax(l) for l in logits]
        probs = [ag.softmax(l) for l in logits]
        if cfg.fusion == "attention":
            S = fusion_scores(self, Z, probs, log_probs)
            w = fusion_weights(S, cfg.tau_fuse)
            fused = fuse(Z, w)
        else:
            S = None
            w = Tensor(np.ones((Z[0].shape[0], cfg.m)))
            fused = ag.concat(Z, axis=1)
        global_logits = self._dense(fused, "global")
        recon = [self.decode(i, z) for i, z in enumerate(Z)] if decode else None
        return Forward(Z, recon, logits, log_probs, probs, S, w, fused, global_logits)


class Forward(NamedTuple):
    Z: list
    recon: list
    logits: list
    log_probs: list
    probs: list
    scores: Tensor
    weights: Tensor
    fused: Tensor
    global_logits: Tensor


# --- loss terms ------------------------------------------------------------------

def rec_loss(X, X_hat):
    """Mean cosine distance between rows; zero-norm rows are left out."""
    X = ag.as_tensor(X)
    X_hat = ag.as_tensor(X_hat)
    if X.shape != X_hat.shape:
        raise ShapeMismatch(f"rec_loss: {X.shape} vs {X_hat.shape}")
    nx = np.linalg.norm(X.data, axis=1)
    nh = np.linalg.norm(X_hat.data, axis=1)
    valid = (nx > 0) & (nh > 0)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise AllRowsDegenerate("every row of the reconstruction pair has zero norm")
    cos = ag.cosine_similarity(X, X_hat)
    out = ag.scale(ag.sum(ag.mul(cos, Tensor(valid.astype(np.float64)))), -1.0 / n_valid) + 1.0
    out.flags = {"excluded_rows": int(len(valid) - n_valid)}
    return out


def info_nce(Z_i, Z_j, score_fn, tau=0.1):
    """In-batch InfoNCE lower bound; positives are row-aligned pairs."""
    B = Z_i.shape[0]
    if B < 2:
        raise BatchTooSmall("InfoNCE needs a batch of at least 2")
    if Z_j.shape[0] != B:
        raise ShapeMismatch("InfoNCE views must share the batch")
    return _info_nce_projected(score_fn(Z_i), score_fn(Z_j), tau)


def _info_nce_projected(P_i, P_j, tau):
    B = P_i.shape[0]
    sims = ag.row_l2_normalize(P_i) @ ag.transpose(ag.row_l2_normalize(P_j))
    logp = ag.log_softmax(sims, tau)
    return ag.scale(ag.sum(ag.mul(logp, Tensor(np.eye(B)))), 1.0 / B)


def consensus_loss(Z, score_fn, tau=0.1):
    M = len(Z)
    if M < 2:
        return Tensor(0.0)
    if Z[0].shape[0] < 2:
        raise BatchTooSmall("InfoNCE needs a batch of at least 2")
    P = [score_fn(z) for z in Z]
    total = None
    for i in range(M):
        for j in range(i + 1, M):
            term = _info_nce_projected(P[i], P[j], tau)
            total = term if total is None else total + term
    return ag.scale(total, -2.0 / (M * (M - 1)))


def _onehot(y, C):
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= C):
        raise LabelOutOfRange(f"labels must lie in [0, {C})")
    out = np.zeros((y.shape[0], C))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def layer_ce(layer_logits, y):
    """Average over layers of the batch-mean cross-entropy."""
    M = len(layer_logits)
    B, C = layer_logits[0].shape
    onehot = Tensor(_onehot(y, C))
    total = None
    for logits in layer_logits:
        term = ag.sum(ag.mul(ag.log_softmax(logits), onehot))
        total = term if total is None else total + term
    return ag.scale(total, -1.0 / (M * B))


def fusion_scores(model, Z, probs, log_probs=None):
    """S = lambda_proj * s_proj + lambda_unc * s_unc, shape B x M.

    ``s_unc = sum_c p log p`` (negative prediction entropy).
    """
    cfg = model.config
    cols = []
    for i, z in enumerate(Z):
        lp = log_probs[i] if log_probs is not None else ag.log(probs[i])
        s_unc = ag.sum(ag.mul(probs[i], lp), axis=1, keepdims=True)
        s_proj = model.gate_score(z)
        cols.append(ag.scale(s_proj, cfg.lambda_proj) + ag.scale(s_unc, cfg.lambda_unc))
    return ag.concat(cols, axis=1)


def fusion_weights(S, tau=1.0):
    return ag.softmax(S, tau)


def fuse(Z, w):
    """Concatenate each layer block scaled per-sample by its fusion weight."""
    w = ag.as_tensor(w)
    if w.shape != (Z[0].shape[0], len(Z)):
        raise ShapeMismatch(f"weights {w.shape} do not match {len(Z)} views of batch {Z[0].shape[0]}")
    return ag.concat([ag.scale_rows(z, ag.columns(w, i)) for i, z in enumerate(Z)], axis=1)


def class_balance_weights(class_counts, beta, normalize=True):
    """Per-class weights (1 - beta) / (1 - beta**n_c), rescaled to mean 1."""
    n = np.asarray(class_counts, dtype=np.float64)
    if (n < 1).any():
        raise EmptyClass("every class needs at least one training sample")
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    lam = (1.0 - beta) / (1.0 - np.power(beta, n))
    return lam / lam.mean() if normalize else lam


def global_ce(logits, y, class_weights):
    B, C = logits.shape
    y = np.asarray(y, dtype=np.int64)
    onehot = _onehot(y, C)
    lam = np.asarray(class_weights, dtype=np.float64)[y]
    return ag.scale(ag.sum(ag.mul(ag.log_softmax(logits), Tensor(onehot * lam[:, None]))), -1.0 / B)


@dataclass
class LossFlags:
    rec: bool = True
    con: bool = True
    task_info: bool = True
    rec_weight: float = 1.0
    con_weight: float = 1.0
    ce_weight: float = 1.0
    global_weight: float = 1.0


@dataclass
class LossBreakdown:
    rec_per_layer: List[float]
    consensus: float
    layer_ce: float
    global_ce: float
    total: float

    @property
    def rec_mean(self):
        return float(np.mean(self.rec_per_layer)) if self.rec_per_layer else 0.0


def total_loss(model, views, y, class_weights, flags=None, train=False, dropout_seed=(0, 0)):
    """Joint objective; returns ``(objective tensor, LossBreakdown, Forward)``.

    Disabled terms are neither computed nor reported (they show as 0). The
    breakdown stores each term as it enters the total, multipliers included.
    """
    flags = flags or LossFlags()
    cfg = model.config
    out = model.forward(views, train, dropout_seed, decode=flags.rec)
    terms = []
    rec_vals = [0.0] * cfg.m
    if flags.rec:
        recs = [rec_loss(x, xh) for x, xh in zip(views, out.recon)]
        rec_vals = [flags.rec_weight * r.item() for r in recs]
        rec_sum = recs[0]
        for r in recs[1:]:
            rec_sum = rec_sum + r
        terms.append(ag.scale(rec_sum, flags.rec_weight / cfg.m))
    con_val = 0.0
    if flags.con and cfg.m > 1:
        con = ag.scale(consensus_loss(out.Z, model.project, cfg.tau_nce), flags.con_weight)
        con_val = con.item()
        terms.append(con)
    ce_val = 0.0
    if flags.task_info:
        ce = ag.scale(layer_ce(out.logits, y), flags.ce_weight)
        ce_val = ce.item()
        terms.append(ce)
    g = ag.scale(global_ce(out.global_logits, y, class_weights), flags.global_weight)
    terms.append(g)
    objective = terms[0]
    for t in terms[1:]:
        objective = objective + t
    breakdown = LossBreakdown(rec_vals, con_val, ce_val, g.item(), objective.item())
    return objective, breakdown, out


class Prediction(NamedTuple):
    classes: np.ndarray
    probs: np.ndarray
    layer_probs: np.ndarray  # M x B x C
    weights: np.ndarray  # B x M
    fused: np.ndarray
    latents: list


def predict(model, views):
    """Eval-mode prediction; argmax ties go to the lowest class index."""
    out = model.forward(views, train=False, decode=False)
    probs = ag.softmax(out.global_logits).data
    return Prediction(np.argmax(probs, axis=1), probs,
                      np.stack([p.data for p in out.probs]), out.weights.data, out.fused.data,
                      [z.data for z in out.Z])
