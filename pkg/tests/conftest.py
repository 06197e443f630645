"""Shared fixtures: a small deterministic phantom cohort, preprocessed
once per session, plus the acceptance-summary reporting hook."""

from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from lesionvae import phantom, pipeline

settings.register_profile(
    "ci",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def phantom_dir(tmp_path_factory):
    """8 patients x 3 slices written as manifest + LTF1 files."""
    out = tmp_path_factory.mktemp("phantom")
    phantom.generate_dataset(8, 3, class_balance=0.5, seed=11, out_dir=out)
    return out


@pytest.fixture(scope="session")
def rois24(phantom_dir):
    rois, report = pipeline.preprocess_manifest(phantom_dir / "manifest.jsonl")
    assert report["kept"] == 24, report
    return rois


@pytest.fixture(scope="session")
def images24(rois24):
    return np.stack([r.image for r in rois24]).astype(np.float32)


@pytest.fixture(scope="session")
def labels24(rois24):
    return pipeline.binary_labels(rois24, task=1)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one pass/fail line per acceptance criterion after the run."""
    import sys

    mod = sys.modules.get("tests.test_acceptance") or sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None) if mod else None
    if not results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed, detail in results:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}: {detail}")
