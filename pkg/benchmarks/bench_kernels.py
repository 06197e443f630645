"""Benchmark the compiled clustering kernels against the numpy fallback.

Runs ``lloyd`` and ``classix_aggregate`` from both backends on identical
inputs, checks that the results agree, and prints a timing table.

Usage::

    python3 benchmarks/bench_kernels.py [--repeats 5] [--seed 0]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lesionvae.cluster import _kernels_py

try:
    from lesionvae.cluster import _kernels  # type: ignore[attr-defined]
except ImportError:
    _kernels = None


def _blobs(rng: np.random.Generator, n: int, d: int, k: int) -> np.ndarray:
    centers = rng.uniform(-10.0, 10.0, size=(k, d))
    points = centers[rng.integers(0, k, size=n)] + rng.normal(0.0, 0.8, size=(n, d))
    return np.ascontiguousarray(points)


def _time(fn, *args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _check_lloyd(X: np.ndarray, centers: np.ndarray) -> None:
    la, ca, ia, _ = _kernels_py.lloyd(X, centers)
    lb, cb, ib, _ = _kernels.lloyd(X, centers)
    np.testing.assert_array_equal(la, lb)
    np.testing.assert_allclose(ca, cb, rtol=1e-12)
    np.testing.assert_allclose(ia, ib, rtol=1e-12)


def _check_aggregate(X: np.ndarray, scores: np.ndarray, radius: float) -> None:
    la, sa = _kernels_py.classix_aggregate(X, scores, radius)
    lb, sb = _kernels.classix_aggregate(X, scores, radius)
    np.testing.assert_array_equal(la, lb)
    np.testing.assert_array_equal(sa, sb)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats (best-of)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if _kernels is None:
        raise SystemExit("compiled extension not built; nothing to compare")

    rng = np.random.default_rng(args.seed)
    rows = []

    for n, d, k in [(500, 32, 4), (2000, 32, 8), (8000, 64, 16)]:
        X = _blobs(rng, n, d, k)
        centers = X[rng.choice(n, size=k, replace=False)]
        _check_lloyd(X, centers)
        t_py = _time(_kernels_py.lloyd, X, centers, repeats=args.repeats)
        t_c = _time(_kernels.lloyd, X, centers, repeats=args.repeats)
        rows.append((f"lloyd n={n} d={d} k={k}", t_py, t_c))

    for n, d in [(500, 32), (2000, 32), (8000, 64)]:
        X = _blobs(rng, n, d, 6)
        X = X - X.mean(axis=0)
        X /= np.median(np.linalg.norm(X, axis=1)) or 1.0
        u = np.linalg.svd(X, full_matrices=False)[2][0]
        scores = X @ u
        order = np.argsort(scores, kind="stable")
        Xs, ss = X[order], scores[order]
        _check_aggregate(Xs, ss, 0.3)
        t_py = _time(_kernels_py.classix_aggregate, Xs, ss, 0.3, repeats=args.repeats)
        t_c = _time(_kernels.classix_aggregate, Xs, ss, 0.3, repeats=args.repeats)
        rows.append((f"aggregate n={n} d={d}", t_py, t_c))

    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'python':>10}  {'compiled':>10}  {'speedup':>8}")
    for name, t_py, t_c in rows:
        print(f"{name:<{width}}  {t_py * 1e3:>8.2f}ms  {t_c * 1e3:>8.2f}ms  {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
