"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names ``ternary_bits``, ``pack_ternary``, ``silhouette_samples``
and ``adam_update`` dispatch to the numba variant unless ``PACC_DISABLE_NUMBA``
is set. Both variants are always importable so tests and ``benchmarks/`` can
compare them.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


# --- byte buffer -> {-1, 0, 1} bit matrix -----------------------------------

def ternary_bits_numpy(buf, valid, fill=-1.0):
    """Expand bytes to big-endian bits; bytes flagged invalid become ``fill``.

    ``buf`` and ``valid`` are ``(rows, nbytes)``; the result is
    ``(rows, 8 * nbytes)`` float32.
    """
    bits = np.unpackbits(np.ascontiguousarray(buf, dtype=np.uint8), axis=1).astype(np.float32)
    mask = np.repeat(np.asarray(valid, dtype=bool), 8, axis=1)
    bits[~mask] = fill
    return bits


@njit
def _ternary_bits_nb(buf, valid, fill):
    rows, nbytes = buf.shape
    out = np.empty((rows, nbytes * 8), dtype=np.float32)
    for r in range(rows):
        for b in range(nbytes):
            base = b * 8
            if valid[r, b]:
                byte = buf[r, b]
                for j in range(8):
                    out[r, base + j] = (byte >> (7 - j)) & 1
            else:
                for j in range(8):
                    out[r, base + j] = fill
    return out


def ternary_bits_numba(buf, valid, fill=-1.0):
    return _ternary_bits_nb(np.ascontiguousarray(buf, dtype=np.uint8),
                            np.ascontiguousarray(valid, dtype=np.bool_), np.float32(fill))


# --- 2-bit packing of ternary matrices ---------------------------------------
# -1 -> 0b10, 0 -> 0b00, 1 -> 0b01; four entries per byte, first entry in the
# high bits, trailing partial byte zero-padded.

def pack_ternary_numpy(values):
    v = np.asarray(values).ravel()
    codes = np.zeros(v.shape[0], dtype=np.uint8)
    codes[v == 1] = 1
    codes[v == -1] = 2
    pad = (-codes.shape[0]) % 4
    if pad:
        codes = np.concatenate([codes, np.zeros(pad, dtype=np.uint8)])
    q = codes.reshape(-1, 4)
    return (q[:, 0] << 6) | (q[:, 1] << 4) | (q[:, 2] << 2) | q[:, 3]


@njit
def _pack_ternary_nb(v):
    n = v.shape[0]
    out = np.zeros((n + 3) // 4, dtype=np.uint8)
    for i in range(n):
        x = v[i]
        if x == 1:
            c = 1
        elif x == -1:
            c = 2
        else:
            c = 0
        out[i >> 2] |= np.uint8(c << (6 - 2 * (i & 3)))
    return out


def pack_ternary_numba(values):
    return _pack_ternary_nb(np.ascontiguousarray(np.asarray(values).ravel(), dtype=np.float64))


# --- silhouette ----------------------------------------------------------------

def _silhouette_from_sums(sums, counts, labels):
    n = labels.shape[0]
    own = counts[labels]
    a = np.where(own > 1, sums[np.arange(n), labels] / np.maximum(own - 1, 1), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        means = sums / counts[None, :]
    means[np.arange(n), labels] = np.inf
    means[:, counts == 0] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.where(own > 1, s, 0.0)


def silhouette_samples_numpy(X, labels, n_labels, chunk_elems=4_000_000):
    """Per-point silhouette for compact integer labels in ``[0, n_labels)``."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = X.shape
    onehot = np.zeros((n, n_labels))
    onehot[np.arange(n), labels] = 1.0
    sums = np.empty((n, n_labels))
    step = max(1, chunk_elems // max(1, n * k))
    for i0 in range(0, n, step):
        diff = X[i0:i0 + step, None, :] - X[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        sums[i0:i0 + step] = dist @ onehot
    counts = np.bincount(labels, minlength=n_labels).astype(np.float64)
    return _silhouette_from_sums(sums, counts, labels)


@njit
def _class_distance_sums_nb(X, labels, n_labels):
    n, k = X.shape
    sums = np.zeros((n, n_labels))
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for t in range(k):
                d = X[i, t] - X[j, t]
                acc += d * d
            dist = np.sqrt(acc)
            sums[i, labels[j]] += dist
            sums[j, labels[i]] += dist
    return sums


def silhouette_samples_numba(X, labels, n_labels):
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    sums = _class_distance_sums_nb(X, labels, n_labels)
    counts = np.bincount(labels, minlength=n_labels).astype(np.float64)
    return _silhouette_from_sums(sums, counts, labels)


# --- Adam update ---------------------------------------------------------------
# In place on flat float64 arrays. ``step_size`` = lr / (1 - beta1**t) and
# ``vhat_scale`` = 1 / (1 - beta2**t).

def adam_update_numpy(p, g, m, v, beta1, beta2, step_size, vhat_scale, eps):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= step_size * m / (np.sqrt(v * vhat_scale) + eps)


@njit
def _adam_update_nb(p, g, m, v, beta1, beta2, step_size, vhat_scale, eps):
    for i in range(p.shape[0]):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        p[i] -= step_size * mi / (np.sqrt(vi * vhat_scale) + eps)


def adam_update_numba(p, g, m, v, beta1, beta2, step_size, vhat_scale, eps):
    _adam_update_nb(p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                    m.reshape(-1), v.reshape(-1), beta1, beta2, step_size, vhat_scale, eps)


if USE_NUMBA:
    adam_update = adam_update_numba
    ternary_bits = ternary_bits_numba
    pack_ternary = pack_ternary_numba
    silhouette_samples = silhouette_samples_numba
else:
    adam_update = adam_update_numpy
    ternary_bits = ternary_bits_numpy
    pack_ternary = pack_ternary_numpy
    silhouette_samples = silhouette_samples_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
