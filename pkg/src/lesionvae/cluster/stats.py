"""Cluster composition statistics over patients and class labels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence

import numpy as np

STATISTIC_KEYS = (
    "pct_patients_single_cluster",
    "pct_patients_50pct_one_cluster",
    "pct_patients_25pct_one_cluster",
    "pct_clusters_above_75pct_one_class",
    "pct_clusters_above_66_67pct_one_class",
)


@dataclass
class ClusterReport:
    """A clustering of slices plus the five composition statistics.

    ``histograms`` maps cluster id to a per-label count; each histogram sums
    to the cluster's size.  ``statistics`` values are percentages in [0, 100].
    """

    assignments: Dict[str, int]
    k: int
    histograms: Dict[int, Dict[str, int]] = field(repr=False)
    statistics: Dict[str, float]

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        for key in STATISTIC_KEYS:
            if key not in self.statistics:
                raise ValueError(f"missing statistic {key!r}")
        for key, value in self.statistics.items():
            if not 0.0 <= value <= 100.0:
                raise ValueError(f"statistic {key}={value} outside [0, 100]")

    @classmethod
    def from_arrays(
        cls,
        slice_ids: Sequence[str],
        cluster_ids: Sequence[int],
        patient_ids: Sequence[str],
        labels: Sequence[str],
        statistics: Mapping[str, float] | None = None,
    ) -> "ClusterReport":
        cluster_ids = [int(c) for c in cluster_ids]
        n = len(slice_ids)
        if not (len(cluster_ids) == len(patient_ids) == len(labels) == n):
            raise ValueError("slice/cluster/patient/label lengths differ")
        assignments = dict(zip(slice_ids, cluster_ids))
        if len(assignments) != n:
            raise ValueError("slice ids are not unique")
        histograms: Dict[int, Dict[str, int]] = {}
        for cid, label in zip(cluster_ids, labels):
            hist = histograms.setdefault(cid, {})
            hist[str(label)] = hist.get(str(label), 0) + 1
        if statistics is None:
            statistics = cluster_statistics(cluster_ids, patient_ids, labels)
        return cls(
            assignments=assignments,
            k=len(histograms),
            histograms=histograms,
            statistics=dict(statistics),
        )


def _patient_rows(cluster_ids: np.ndarray, patient_ids: Sequence[str]) -> Dict[str, float]:
    patients: Dict[str, list[int]] = {}
    for pid, cid in zip(patient_ids, cluster_ids):
        patients.setdefault(str(pid), []).append(int(cid))
    n_single = n_half = n_quarter = 0
    for members in patients.values():
        counts = np.bincount(np.asarray(members))
        top = int(counts.max())
        total = len(members)
        # integer comparisons keep the >= p% thresholds exact
        if top == total:
            n_single += 1
        if 2 * top >= total:
            n_half += 1
        if 4 * top >= total:
            n_quarter += 1
    n_patients = len(patients)
    return {
        "pct_patients_single_cluster": 100.0 * n_single / n_patients,
        "pct_patients_50pct_one_cluster": 100.0 * n_half / n_patients,
        "pct_patients_25pct_one_cluster": 100.0 * n_quarter / n_patients,
    }


def _purity_rows(cluster_ids: np.ndarray, labels: Sequence[str]) -> Dict[str, float]:
    clusters: Dict[int, Dict[str, int]] = {}
    for cid, label in zip(cluster_ids, labels):
        hist = clusters.setdefault(int(cid), {})
        hist[str(label)] = hist.get(str(label), 0) + 1
    # singleton clusters are trivially pure and excluded from both rows
    sized = [hist for hist in clusters.values() if sum(hist.values()) >= 2]
    if not sized:
        return {
            "pct_clusters_above_75pct_one_class": 0.0,
            "pct_clusters_above_66_67pct_one_class": 0.0,
        }
    n_75 = n_23 = 0
    for hist in sized:
        top = max(hist.values())
        size = sum(hist.values())
        if 4 * top >= 3 * size:
            n_75 += 1
        if 3 * top >= 2 * size:
            n_23 += 1
    return {
        "pct_clusters_above_75pct_one_class": 100.0 * n_75 / len(sized),
        "pct_clusters_above_66_67pct_one_class": 100.0 * n_23 / len(sized),
    }


def cluster_statistics(
    cluster_ids: Sequence[int],
    patient_ids: Sequence[str],
    labels: Sequence[str],
) -> Dict[str, float]:
    """Five composition statistics for one assignment.

    Patient rows: a patient counts toward the p% row iff some single cluster
    holds >= p% of that patient's slices.  Purity rows: fraction of clusters
    (with >= 2 members; 0.0 if none qualify) whose dominant class reaches the
    threshold.  Thresholds use integer arithmetic, so e.g. exactly 75% counts.
    """
    cids = np.asarray(cluster_ids, dtype=np.int64)
    if cids.ndim != 1 or cids.size == 0:
        raise ValueError("cluster_ids must be a non-empty 1-d sequence")
    if len(patient_ids) != cids.size or len(labels) != cids.size:
        raise ValueError("cluster/patient/label lengths differ")
    if cids.min() < 0:
        raise ValueError("cluster ids must be non-negative")
    out = _patient_rows(cids, patient_ids)
    out.update(_purity_rows(cids, labels))
    return out


def averaged_statistics(
    run_cluster_ids: np.ndarray,
    patient_ids: Sequence[str],
    labels: Sequence[str],
) -> Dict[str, float]:
    """Mean of each statistic over the rows of ``run_cluster_ids`` (runs, n)."""
    runs = np.asarray(run_cluster_ids)
    if runs.ndim != 2:
        raise ValueError("expected a (runs, n) assignment array")
    per_run = [cluster_statistics(row, patient_ids, labels) for row in runs]
    return {key: float(np.mean([s[key] for s in per_run])) for key in STATISTIC_KEYS}
