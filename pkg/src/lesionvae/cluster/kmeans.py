"""K-Means with k-means++ seeding, repeated restarts, and an elbow curve."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._backend import kernels
from .stats import ClusterReport, averaged_statistics

DEFAULT_RUNS = 50
MAX_ITER = 300
TOL = 1e-6


@dataclass
class KMeansResult:
    k: int
    labels: np.ndarray          # (n,) best run
    centers: np.ndarray         # (k, d) best run
    inertia: float              # best run
    n_iter: int                 # best run
    run_labels: np.ndarray      # (runs, n)
    run_inertias: np.ndarray    # (runs,)


def _as_points(latents) -> np.ndarray:
    X = np.ascontiguousarray(np.asarray(latents, dtype=np.float64))
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, d) array, got shape {X.shape}")
    return X


def _plusplus_seed(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[int(rng.integers(n))]
    d_sq = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d_sq.sum()
        if total <= 0.0:  # fewer distinct points than k
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d_sq / total))
        centers[j] = X[idx]
        d_sq = np.minimum(d_sq, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def kmeans(
    latents,
    k: int,
    runs: int = DEFAULT_RUNS,
    seed: int = 0,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
) -> KMeansResult:
    """Best-of-``runs`` Lloyd clustering; per-run seeds derive from ``seed``."""
    X = _as_points(latents)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    run_labels = np.empty((runs, n), dtype=np.int64)
    run_inertias = np.empty(runs)
    best = None
    for run in range(runs):
        rng = np.random.default_rng((seed, run))
        labels, centers, inertia, n_iter = kernels.lloyd(
            X, _plusplus_seed(X, k, rng), max_iter, tol
        )
        run_labels[run] = labels
        run_inertias[run] = inertia
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia, n_iter)
    labels, centers, inertia, n_iter = best
    return KMeansResult(
        k=k,
        labels=labels,
        centers=centers,
        inertia=float(inertia),
        n_iter=int(n_iter),
        run_labels=run_labels,
        run_inertias=run_inertias,
    )


def kmeans_report(
    latents,
    slice_ids: Sequence[str],
    patient_ids: Sequence[str],
    labels: Sequence[str],
    k: int,
    runs: int = DEFAULT_RUNS,
    seed: int = 0,
) -> ClusterReport:
    """Cluster report with best-run assignments and run-averaged statistics."""
    result = kmeans(latents, k, runs=runs, seed=seed)
    stats = averaged_statistics(result.run_labels, patient_ids, labels)
    return ClusterReport.from_arrays(
        slice_ids, result.labels, patient_ids, labels, statistics=stats
    )


def elbow(
    latents,
    k_range: Sequence[int],
    runs: int = 10,
    seed: int = 0,
) -> np.ndarray:
    """Best-of-runs inertia per k, returned as a (len(k_range), 2) table.

    Each k adds one extra run warm-started from the previous best centers plus
    the farthest point, which makes the reported curve non-increasing even
    with few random restarts.
    """
    X = _as_points(latents)
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    if ks[0] < 1 or ks[-1] > X.shape[0]:
        raise ValueError(f"k_range must lie in [1, {X.shape[0]}], got {ks}")
    curve = np.empty((len(ks), 2))
    prev_centers = None
    for row, k in enumerate(ks):
        result = kmeans(X, k, runs=runs, seed=seed)
        best_labels, best_centers, best_inertia = (
            result.labels,
            result.centers,
            result.inertia,
        )
        if prev_centers is not None and prev_centers.shape[0] < k:
            seeds = _grow_centers(X, prev_centers, k)
            labels, centers, inertia, _ = kernels.lloyd(X, seeds, MAX_ITER, TOL)
            if inertia < best_inertia:
                best_labels, best_centers, best_inertia = labels, centers, inertia
        curve[row] = (k, best_inertia)
        prev_centers = best_centers
    return curve


def _grow_centers(X: np.ndarray, centers: np.ndarray, k: int) -> np.ndarray:
    """Extend a center set to size k with the current farthest points."""
    centers = np.array(centers, copy=True)
    while centers.shape[0] < k:
        d_sq = np.min(
            np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2), axis=1
        )
        centers = np.vstack([centers, X[int(np.argmax(d_sq))]])
    return np.ascontiguousarray(centers)
