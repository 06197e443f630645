"""Pure-numpy clustering kernels.

Fallback implementations of the hot inner loops; the Cython module
``_kernels`` provides the compiled equivalents with identical signatures
and matching results.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def _assign(X: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # ||x - c||^2 = ||x||^2 - 2 x.c + ||c||^2; ||x||^2 dropped for argmin
    cross = X @ centers.T
    c_sq = np.einsum("kd,kd->k", centers, centers)
    scores = c_sq[None, :] - 2.0 * cross
    labels = np.argmin(scores, axis=1)
    d_sq = np.einsum("nd,nd->n", X, X) + scores[np.arange(X.shape[0]), labels]
    return labels, np.maximum(d_sq, 0.0)


def lloyd(
    X: np.ndarray,
    centers: np.ndarray,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray, float, int]:
    """Lloyd iterations from the given initial centers.

    Empty clusters are reseeded to the point farthest from its assigned
    center, which keeps per-iteration inertia non-increasing.  Stops when
    the largest centroid shift falls below `tol`.

    Returns (labels, centers, inertia, n_iter).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64)
    n, d = X.shape
    k = centers.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        labels, d_sq = _assign(X, centers)
        new_centers = np.zeros_like(centers)
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        np.add.at(new_centers, labels, X)
        empty = counts == 0
        for j in np.flatnonzero(empty):
            far = int(np.argmax(d_sq))
            new_centers[j] = X[far]
            d_sq[far] = 0.0
            counts[j] = 1.0
        new_centers /= counts[:, None]
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    labels, d_sq = _assign(X, centers)
    return labels, centers, float(d_sq.sum()), it


def classix_aggregate(
    X: np.ndarray, scores: np.ndarray, radius: float
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy sorted aggregation.

    `X` must be sorted by `scores` ascending.  A new group starts at the
    first unassigned point; subsequent unassigned points within `radius`
    of the group's starting point are absorbed.  The scan stops early once
    the score gap exceeds `radius`, valid because scores are projections
    onto a unit vector.

    Returns (group labels, group starting-point indices), both in sorted
    order coordinates.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    n = X.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    starts: list[int] = []
    r_sq = radius * radius
    group = 0
    for i in range(n):
        if labels[i] >= 0:
            continue
        labels[i] = group
        starts.append(i)
        xi = X[i]
        for j in range(i + 1, n):
            if scores[j] - scores[i] > radius:
                break
            if labels[j] >= 0:
                continue
            diff = X[j] - xi
            if diff @ diff <= r_sq:
                labels[j] = group
        group += 1
    return labels, np.asarray(starts, dtype=np.int64)
