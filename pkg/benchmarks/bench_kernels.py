"""Time the numba kernels against their pure-numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both variants are always importable; ``PACC_DISABLE_NUMBA=1`` only changes
which one the package dispatches to. Each kernel runs once before timing so
JIT compilation is excluded.
"""
import argparse
import timeit

import numpy as np

from pacc import kernels


def _cases(rng):
    buf = rng.integers(0, 256, size=(2000, 200), dtype=np.uint8)
    valid = rng.random((2000, 200)) < 0.7
    ternary = rng.integers(-1, 2, size=400_000).astype(np.float32)
    X = rng.normal(size=(2000, 32))
    labels = rng.integers(0, 4, 2000)
    n = 500_000
    p, g, m, v = rng.normal(size=n), rng.normal(size=n), np.zeros(n), np.zeros(n)
    adam = (0.9, 0.999, 1e-3, 1.0, 1e-8)
    return {
        "ternary_bits": (lambda: kernels.ternary_bits_numpy(buf, valid, -1.0),
                         lambda: kernels.ternary_bits_numba(buf, valid, -1.0)),
        "pack_ternary": (lambda: kernels.pack_ternary_numpy(ternary),
                         lambda: kernels.pack_ternary_numba(ternary)),
        "silhouette_samples": (lambda: kernels.silhouette_samples_numpy(X, labels, 4),
                               lambda: kernels.silhouette_samples_numba(X, labels, 4)),
        "adam_update": (lambda: kernels.adam_update_numpy(p, g, m, v, *adam),
                        lambda: kernels.adam_update_numba(p, g, m, v, *adam)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, (slow, fast) in _cases(rng).items():
        slow(), fast()  # warm up (and compile)
        t_np = min(timeit.repeat(slow, number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(fast, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20} {t_np:>10.2f} {t_nb:>10.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
