"""Latent-space clustering: K-Means, sorted-aggregation clustering, statistics.

The inner loops (Lloyd iterations, greedy aggregation) live in a compiled
extension when available; a pure-NumPy fallback with the same signatures is
used otherwise.  ``BACKEND`` records which one was selected at import time.
"""

from ._backend import BACKEND, kernels
from .kmeans import KMeansResult, elbow, kmeans, kmeans_report
from .classix import ClassixResult, classix, classix_report, density_grid_search
from .stats import (
    STATISTIC_KEYS,
    ClusterReport,
    averaged_statistics,
    cluster_statistics,
)
from .directions import (
    DirectionVector,
    find_direction,
    interpolate,
    project_simplex,
    traverse,
)

COMPILED: bool = BACKEND == "compiled"

__all__ = [
    "BACKEND",
    "COMPILED",
    "kernels",
    "KMeansResult",
    "kmeans",
    "kmeans_report",
    "elbow",
    "ClassixResult",
    "classix",
    "classix_report",
    "density_grid_search",
    "ClusterReport",
    "STATISTIC_KEYS",
    "cluster_statistics",
    "averaged_statistics",
    "DirectionVector",
    "find_direction",
    "project_simplex",
    "traverse",
    "interpolate",
]
