"""Shared fixtures for the model-level tests."""
import numpy as np

from pacc import autograd as ag
from pacc.model import LossFlags, ModelConfig, PACCModel, class_balance_weights, total_loss

# one summary line per acceptance criterion, printed at the end of the run
CRITERION_LINES = {}


def record_criterion(number, ok, detail):
    CRITERION_LINES[number] = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"


def tiny_problem(M=3, d_f=12, D=4, B=8, C=3, seed=0, **overrides):
    """A small model at a generic point: random biases so no unit sits at a symmetric spot."""
    rng = np.random.default_rng(seed)
    cfg = dict(input_dims=[d_f] * M, num_classes=C, latent_dim=D, hidden=(6,), decoder_hidden=5,
               proj_dim=3, gate_dim=3, gate_hidden=2, dropout=0.3, seed=seed)
    cfg.update(overrides)
    model = PACCModel(ModelConfig(**cfg))
    for name, p in model.params.items():
        if name.endswith(".b"):
            p.data = rng.normal(scale=0.3, size=p.data.shape)
    views = [rng.integers(-1, 2, size=(B, d_f)).astype(float) for _ in range(M)]
    model.set_input_means([v + rng.normal(scale=0.1, size=v.shape) for v in views])
    y = np.arange(B) % C
    lam = class_balance_weights(np.bincount(y, minlength=C), 0.9)
    return model, views, y, lam


def objective_fn(model, views, y, lam, flags=None):
    def f():
        obj, _, _ = total_loss(model, views, y, lam, flags or LossFlags(), train=True,
                               dropout_seed=(11, 0))
        return obj
    return f


def gradient_check(model, views, y, lam, h=1e-5, flags=None):
    """Worst elementwise relative error of analytic vs central-difference gradients."""
    f = objective_fn(model, views, y, lam, flags)
    params = model.parameters()
    ag.zero_grad(params)
    grads = ag.backward(f(), params)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        num = np.empty_like(flat)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            fp = f().item()
            flat[k] = old - h
            fm = f().item()
            flat[k] = old
            num[k] = (fp - fm) / (2 * h)
        g = g.reshape(-1)
        rel = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-8)
        worst = max(worst, float(rel.max()))
    return worst


# Ethernet / IPv4 / TCP frame written out byte by byte.
#   dst 00:11:22:33:44:55  src 66:77:88:99:aa:bb  type 0x0800
#   IPv4: ver 4, ihl 5, tos 0, len 42, id 0x1c46, DF, ttl 64, proto 6, csum 0x9c6f,
#         192.168.0.1 -> 192.168.0.199
#   TCP: 12345 -> 443, seq 1, ack 2, doff 5, flags PSH|ACK, win 65535, csum 0, urg 0
#   payload "hi"
FRAME_HEX = (
    "001122334455" "66778899aabb" "0800"
    "4500002a1c464000" "40069c6f" "c0a80001" "c0a800c7"
    "303901bb" "00000001" "00000002" "5018ffff" "00000000"
    "6869"
)
FRAME = bytes.fromhex(FRAME_HEX)


def direct_metrics(y_true, y_pred, C):
    """Loop-based reference with the 0/0 := 0 convention."""
    acc = sum(int(a == b) for a, b in zip(y_true, y_pred)) / len(y_true)
    P, R, F = [], [], []
    for c in range(C):
        tp = sum(1 for a, b in zip(y_true, y_pred) if a == c and b == c)
        fp = sum(1 for a, b in zip(y_true, y_pred) if a != c and b == c)
        fn = sum(1 for a, b in zip(y_true, y_pred) if a == c and b != c)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        P.append(p)
        R.append(r)
        F.append(2 * p * r / (p + r) if p + r else 0.0)
    return acc, sum(P) / C, sum(R) / C, sum(F) / C


def silhouette_direct(X, labels):
    """O(N^2) textbook silhouette; singleton clusters score 0."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    n = len(X)
    out = np.zeros(n)
    for i in range(n):
        d = np.sqrt(((X - X[i]) ** 2).sum(1))
        same = (labels == labels[i])
        if same.sum() == 1:
            continue
        a = d[same].sum() / (same.sum() - 1)
        b = min(d[labels == c].mean() for c in np.unique(labels) if c != labels[i])
        out[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return out.mean()
