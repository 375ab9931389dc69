"""Dense float64 tensors with reverse-mode differentiation, Adam, checkpoints.

The graph is implicit: every result keeps references to its parents and a
closure mapping the output gradient to parent gradients. Only bias-vector
addition broadcasts; everything else requires matching shapes.
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (FormatVersionMismatch, NonPositiveTemperature, NonScalarObjective,
                     ShapeMismatch)

LOG_EPS = 1e-12


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name", "flags")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.name = name
        self.flags = None

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return scale(self, 1.0 / c)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


# --- ops -----------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _node(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g))
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    if b.data.ndim == 2 and a.data.ndim == 1 and b.shape[1] == a.shape[0]:
        return _node(a.data + b.data, (a, b), lambda g: (g.sum(axis=0), g))
    raise ShapeMismatch(f"add: {a.shape} + {b.shape} (only bias-vector broadcasting)")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")
    A, B = a.data, b.data
    return _node(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def scale_rows(x, s):
    """Multiply row ``n`` of ``x`` (B x D) by ``s[n]`` (``s`` is B or B x 1)."""
    x, s = as_tensor(x), as_tensor(s)
    col = s.data.reshape(-1, 1)
    if x.data.ndim != 2 or col.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"scale_rows: {x.shape} by {s.shape}")
    X = x.data
    sshape = s.shape
    return _node(X * col, (x, s),
                 lambda g: (g * col, (g * X).sum(axis=1).reshape(sshape)))


def transpose(a):
    a = as_tensor(a)
    return _node(a.data.T, (a,), lambda g: (g.T,))


def columns(a, start, stop=None):
    """Column slice ``a[:, start:stop]`` (a single column when ``stop`` is None)."""
    a = as_tensor(a)
    stop = start + 1 if stop is None else stop
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _node(a.data[:, start:stop], (a,), back)


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a):
    """``log(max(x, 1e-12))``; the gradient is zero where the floor is active."""
    a = as_tensor(a)
    x = a.data
    safe = np.maximum(x, LOG_EPS)
    live = x > LOG_EPS
    return _node(np.log(safe), (a,), lambda g: (np.where(live, g / safe, 0.0),))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(out, (a,), back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    cuts = np.cumsum(sizes)[:-1]
    return _node(out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)))


def row_l2_normalize(a):
    """Divide each row by its L2 norm; all-zero rows stay zero (see ``flags``)."""
    a = as_tensor(a)
    X = a.data
    norm = np.sqrt((X * X).sum(axis=1, keepdims=True))
    zero = norm[:, 0] == 0.0
    safe = np.where(norm > 0, norm, 1.0)
    Y = np.where(norm > 0, X / safe, 0.0)

    def back(g):
        dot = (g * Y).sum(axis=1, keepdims=True)
        return (np.where(norm > 0, (g - Y * dot) / safe, 0.0),)

    out = _node(Y, (a,), back)
    out.flags = {"zero_rows": zero}
    return out


def _check_tau(tau):
    if not tau > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {tau}")


def softmax(a, tau=1.0):
    """Row-wise softmax of ``a / tau`` along the last axis."""
    _check_tau(tau)
    a = as_tensor(a)
    z = a.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)) / tau,)

    return _node(y, (a,), back)


def log_softmax(a, tau=1.0):
    _check_tau(tau)
    a = as_tensor(a)
    z = a.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def back(g):
        return ((g - p * g.sum(axis=-1, keepdims=True)) / tau,)

    return _node(y, (a,), back)


def dropout(a, p, train, seed):
    """Inverted dropout with a mask drawn from ``default_rng(seed)``.

    ``seed`` may be an int or a sequence of ints, e.g. ``(run_seed, step,
    tensor_id)``. Identity when ``train`` is false or ``p == 0``.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0, 1), got {p}")
    a = as_tensor(a)
    if not train or p == 0.0:
        return a
    rng = np.random.default_rng(seed)
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _node(a.data * keep, (a,), lambda g: (g * keep,))


def cosine_similarity(a, b):
    """Row-wise cosine similarity of two B x D tensors -> length-B vector."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "cosine_similarity")
    return sum(mul(row_l2_normalize(a), row_l2_normalize(b)), axis=1)


# --- backward --------------------------------------------------------------------

def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(objective, params=None):
    """Reverse pass from a scalar objective.

    Sets ``.grad`` on every reachable leaf that requires grad and returns the
    gradients of ``params`` in order (zeros for parameters the objective does
    not depend on).
    """
    if objective.data.size != 1:
        raise NonScalarObjective(f"objective must be scalar, got shape {objective.shape}")
    grads = {id(objective): np.ones_like(objective.data)}
    for node in reversed(_topological(objective)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    if params is None:
        return None
    out = []
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        out.append(p.grad)
    return out


def zero_grad(params):
    for p in params:
        p.grad = None


# --- Adam ------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params``; returns ``state``."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(grads) != len(params):
        raise ShapeMismatch("one gradient per parameter required")
    state.t += 1
    step_size = state.lr / (1.0 - state.beta1 ** state.t)
    vhat_scale = 1.0 / (1.0 - state.beta2 ** state.t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeMismatch(f"adam: parameter {p.shape} vs gradient {g.shape}")
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        kernels.adam_update(p.data, g, m, v, state.beta1, state.beta2, step_size, vhat_scale,
                            state.eps)
    return state


# --- checkpoints -----------------------------------------------------------------

CKPT_MAGIC = b"PACCCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, named_params, config):
    """Write ``[(name, ndarray), ...]`` and a JSON-serializable config."""
    cfg = json.dumps(config, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(cfg)), cfg,
             struct.pack("<I", len(named_params))]
    for name, arr in named_params:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    data = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def load_checkpoint(path):
    """Return ``(list of (name, ndarray), config dict)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise FormatVersionMismatch(f"{path}: not a PACCCKPT file")
    version, clen = struct.unpack_from("<II", raw, 8)
    if version != CKPT_VERSION:
        raise FormatVersionMismatch(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    pos = 16
    config = json.loads(raw[pos:pos + clen].decode())
    pos += clen
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    params = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
        params.append((name, arr))
    return params, config
