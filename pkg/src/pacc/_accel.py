"""Optional numba acceleration.

Set ``PACC_DISABLE_NUMBA=1`` to force the pure-numpy kernels. Numba is also
skipped silently when it is not importable.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("PACC_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(f=None, **options):
    """``numba.njit`` with ``cache=True``, or the identity when numba is absent."""
    options.setdefault("cache", True)

    def wrap(fn):
        if numba is None:
            return fn
        return numba.njit(**options)(fn)

    return wrap if f is None else wrap(f)


def set_threads(n):
    if numba is not None and n and n > 0:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


def configured_threads():
    raw = os.environ.get("PACC_THREADS", "").strip()
    try:
        return max(1, int(raw)) if raw else None
    except ValueError:
        return None
