"""Reconstruction and classification evaluation metrics."""

from __future__ import annotations

import numpy as np
import torch

from .losses import ms_ssim, ssim


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc_score(probs, labels) -> float:
    """Area under the ROC curve via the rank statistic; ties count 1/2."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(int)
    if probs.shape != labels.shape:
        raise ValueError("probs and labels must have the same length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    ranks = _average_ranks(probs)
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def classification_report(probs, labels, tau: float = 0.5) -> dict:
    """AUC plus the tau-thresholded confusion-matrix metrics.

    Predictions are positive when p >= tau.  Precision and F1 fall back
    to 0 when their denominators are empty.
    """
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(int)
    pred = probs >= tau
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    specificity = tn / (tn + fp) if tn + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "auc": auc_score(probs, labels),
        "accuracy": (tp + tn) / labels.size,
        "precision": precision,
        "recall": recall,
        "specificity": specificity,
        "f1": f1,
    }


def reconstruction_report(x_set, y_set) -> dict:
    """Average SSIM, MSE and MAE between two image stacks in [0, 1]."""
    x = np.asarray(x_set, dtype=np.float32)
    y = np.asarray(y_set, dtype=np.float32)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    with torch.no_grad():
        ssim_mean = float(ssim(torch.from_numpy(x), torch.from_numpy(y)).mean())
    diff = x.astype(np.float64) - y.astype(np.float64)
    return {
        "ssim_mean": ssim_mean,
        "mse": float(np.mean(diff ** 2)),
        "mae": float(np.mean(np.abs(diff))),
    }


def ms_ssim_report(x_set, y_set) -> dict:
    """MS-SSIM mean plus the scale count actually used."""
    x = torch.from_numpy(np.asarray(x_set, dtype=np.float32))
    y = torch.from_numpy(np.asarray(y_set, dtype=np.float32))
    with torch.no_grad():
        values = ms_ssim(x, y)
    from .losses import ms_ssim_scales

    size = min(x.shape[-2], x.shape[-1])
    return {"ms_ssim_mean": float(values.mean()), "scales": ms_ssim_scales(size)}
