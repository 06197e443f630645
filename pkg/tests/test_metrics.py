"""Classification and reconstruction metric contracts."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lesionvae.metrics import (
    auc_score,
    classification_report,
    ms_ssim_report,
    reconstruction_report,
)


def _brute_force_auc(probs, labels):
    """Pairwise concordance count: ties score half."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = probs[labels == 1]
    neg = probs[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (pos.size * neg.size)


class TestAuc:
    def test_perfect_separation(self):
        assert auc_score([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_reversed_separation(self):
        assert auc_score([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0

    def test_ties_count_half(self):
        assert auc_score([0.5, 0.5], [1, 0]) == 0.5

    def test_single_class_raises(self):
        with pytest.raises(ValueError, match="single class"):
            auc_score([0.2, 0.9], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            auc_score([0.5], [1, 0])

    @given(st.integers(min_value=0, max_value=10_000))
    def test_matches_brute_force_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 30))
        probs = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=n)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert abs(auc_score(probs, labels) - _brute_force_auc(probs, labels)) < 1e-12

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        probs = rng.uniform(0.01, 0.99, size=40)
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        base = auc_score(probs, labels)
        assert auc_score(np.log(probs), labels) == base
        assert auc_score(probs**3, labels) == base


class TestClassificationReport:
    def test_three_point_fixture(self):
        # probs (0.9, 0.8, 0.3), labels (1, 0, 1), tau 0.5:
        # predictions (1, 1, 0) -> TP=1, FP=1, FN=1, TN=0
        rep = classification_report([0.9, 0.8, 0.3], [1, 0, 1], tau=0.5)
        assert rep["recall"] == 0.5
        assert rep["specificity"] == 0.0
        assert rep["auc"] == 0.5  # one concordant pair, one discordant
        assert abs(rep["accuracy"] - 1 / 3) < 1e-12  # (TP+TN)/3
        assert rep["precision"] == 0.5

    def test_all_positive_predictions(self):
        probs = np.full(10, 0.99)
        labels = np.array([1] * 6 + [0] * 4)
        rep = classification_report(probs, labels, tau=0.5)
        assert rep["accuracy"] == 0.6
        assert rep["recall"] == 1.0
        assert rep["specificity"] == 0.0

    def test_threshold_is_inclusive(self):
        rep = classification_report([0.6, 0.59], [1, 0], tau=0.6)
        assert rep["recall"] == 1.0 and rep["specificity"] == 1.0

    def test_zero_denominator_fallbacks(self):
        # nothing predicted positive: precision and F1 fall back to 0
        rep = classification_report([0.1, 0.2], [1, 0], tau=0.5)
        assert rep["precision"] == 0.0 and rep["f1"] == 0.0

    def test_perfect_classifier(self):
        rep = classification_report([0.9, 0.95, 0.1, 0.2], [1, 1, 0, 0], tau=0.5)
        for key in ("auc", "accuracy", "precision", "recall", "specificity", "f1"):
            assert rep[key] == 1.0

    def test_f1_formula(self):
        rep = classification_report([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0], tau=0.5)
        p, r = rep["precision"], rep["recall"]
        assert abs(rep["f1"] - 2 * p * r / (p + r)) < 1e-12


class TestReconstructionReport:
    def test_identical_sets(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, size=(4, 64, 64)).astype(np.float32)
        rep = reconstruction_report(x, x.copy())
        assert abs(rep["ssim_mean"] - 1.0) < 1e-6
        assert rep["mse"] == 0.0 and rep["mae"] == 0.0

    def test_constant_offset(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0.0, 0.8, size=(3, 64, 64))
        rep = reconstruction_report(x, x + 0.1)
        assert abs(rep["mae"] - 0.1) < 1e-6
        assert abs(rep["mse"] - 0.01) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            reconstruction_report(np.zeros((2, 8, 8)), np.zeros((3, 8, 8)))

    def test_ms_ssim_report_scales(self):
        x = np.random.default_rng(2).uniform(0, 1, size=(2, 64, 64))
        rep = ms_ssim_report(x, x)
        assert rep["scales"] == 4
        assert abs(rep["ms_ssim_mean"] - 1.0) < 1e-5
