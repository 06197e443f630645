"""Sorted greedy aggregation clustering with a density (radius) parameter.

Points are scaled, sorted along the first principal component, and greedily
aggregated: each unassigned point starts a group and absorbs later points
within ``radius``.  Groups whose starting points lie within 1.5 * radius are
merged, and groups below ``min_group_size`` are dissolved into the nearest
surviving cluster.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from ._backend import kernels
from .stats import ClusterReport, cluster_statistics

MERGE_FACTOR = 1.5


@dataclass
class ClassixResult:
    labels: np.ndarray          # (n,) final cluster ids, consecutive from 0
    n_clusters: int
    radius: float
    min_group_size: int
    n_groups_aggregation: int   # groups straight out of the greedy phase
    n_groups_merged: int        # after start-point merging, before min-size


def _scale(latents) -> np.ndarray:
    X = np.asarray(latents, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, d) array, got shape {X.shape}")
    X = X - X.mean(axis=0)
    norms = np.linalg.norm(X, axis=1)
    med = float(np.median(norms))
    if med > 0.0:
        X = X / med
    return np.ascontiguousarray(X)


def _pc1_scores(X: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    pc = vt[0]
    if pc[int(np.argmax(np.abs(pc)))] < 0:  # fix the SVD sign ambiguity
        pc = -pc
    return X @ pc


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def classix(latents, radius: float, min_group_size: int = 1) -> ClassixResult:
    if radius <= 0.0:
        raise ValueError(f"radius must be > 0, got {radius}")
    if min_group_size < 1:
        raise ValueError(f"min_group_size must be >= 1, got {min_group_size}")
    X = _scale(latents)
    n = X.shape[0]
    scores = _pc1_scores(X)
    order = np.argsort(scores, kind="stable")
    sorted_labels, starts = kernels.classix_aggregate(
        np.ascontiguousarray(X[order]), np.ascontiguousarray(scores[order]), radius
    )
    n_groups = int(starts.shape[0])

    # merge groups whose starting points fall within MERGE_FACTOR * radius
    start_points = X[order][starts]
    uf = _UnionFind(n_groups)
    limit_sq = (MERGE_FACTOR * radius) ** 2
    for i in range(n_groups):
        diffs = start_points[i + 1 :] - start_points[i]
        close = np.nonzero(np.sum(diffs * diffs, axis=1) <= limit_sq)[0]
        for j in close:
            uf.union(i, int(i + 1 + j))
    group_to_merged = np.array([uf.find(g) for g in range(n_groups)])
    labels = group_to_merged[np.asarray(sorted_labels)]
    inverse = np.empty(n, dtype=np.int64)
    inverse[order] = np.arange(n)
    labels = labels[inverse]
    n_merged = int(np.unique(labels).shape[0])

    labels = _dissolve_small(X, labels, min_group_size)
    labels = _relabel(labels)
    return ClassixResult(
        labels=labels,
        n_clusters=int(labels.max()) + 1,
        radius=float(radius),
        min_group_size=int(min_group_size),
        n_groups_aggregation=n_groups,
        n_groups_merged=n_merged,
    )


def _dissolve_small(X: np.ndarray, labels: np.ndarray, min_size: int) -> np.ndarray:
    if min_size <= 1:
        return labels
    ids, counts = np.unique(labels, return_counts=True)
    surviving = ids[counts >= min_size]
    if surviving.size == 0:
        surviving = ids[counts == counts.max()]  # nothing qualifies; keep largest
    if surviving.size == ids.size:
        return labels
    centroids = np.stack([X[labels == cid].mean(axis=0) for cid in surviving])
    labels = labels.copy()
    small = ~np.isin(labels, surviving)
    d_sq = np.sum((X[small, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels[small] = surviving[np.argmin(d_sq, axis=1)]
    return labels


def _relabel(labels: np.ndarray) -> np.ndarray:
    """Map cluster ids to 0..k-1 in order of first appearance."""
    mapping: Dict[int, int] = {}
    out = np.empty_like(labels)
    for i, cid in enumerate(labels):
        out[i] = mapping.setdefault(int(cid), len(mapping))
    return out


def classix_report(
    latents,
    slice_ids: Sequence[str],
    patient_ids: Sequence[str],
    labels: Sequence[str],
    radius: float,
    min_group_size: int = 1,
) -> ClusterReport:
    result = classix(latents, radius, min_group_size)
    return ClusterReport.from_arrays(slice_ids, result.labels, patient_ids, labels)


def density_grid_search(
    latents,
    labels: Sequence[str],
    radius_grid: Sequence[float],
    min_group_size: int = 1,
    patient_ids: Sequence[str] | None = None,
) -> Tuple[float, ClusterReport]:
    """Radius maximising the 75%-purity statistic; ties favour fewer clusters.

    ``patient_ids`` only feed the report's patient rows; they default to one
    patient per slice.
    """
    grid = [float(r) for r in radius_grid]
    if not grid:
        raise ValueError("radius_grid is empty")
    n = np.asarray(latents).shape[0]
    slice_ids = [f"s{i}" for i in range(n)]
    if patient_ids is None:
        patient_ids = slice_ids
    best = None
    for radius in grid:
        result = classix(latents, radius, min_group_size)
        stats = cluster_statistics(result.labels, patient_ids, labels)
        key = (stats["pct_clusters_above_75pct_one_class"], -result.n_clusters)
        if best is None or key > best[0]:
            report = ClusterReport.from_arrays(
                slice_ids, result.labels, patient_ids, labels, statistics=stats
            )
            best = (key, radius, report)
    return best[1], best[2]
