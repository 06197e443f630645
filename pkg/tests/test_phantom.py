"""Synthetic lesion phantom: determinism, geometry and label ground truth."""

from __future__ import annotations

import json

import numpy as np
import pytest
from skimage import measure

from lesionvae import ltf, phantom, pipeline
from lesionvae.phantom import PhantomSpec, generate, generate_dataset


class TestSpecValidation:
    def test_radius_bounds(self):
        with pytest.raises(ValueError):
            PhantomSpec(radius_px=1.0)
        with pytest.raises(ValueError):
            PhantomSpec(radius_px=25.0)

    def test_unit_interval_fields(self):
        with pytest.raises(ValueError):
            PhantomSpec(radius_px=5.0, irregularity=1.2)
        with pytest.raises(ValueError):
            PhantomSpec(radius_px=5.0, noise_sd=0.5)

    @pytest.mark.parametrize(
        "radius,irr,label",
        [
            (10.0, 0.0, "malignant"),
            (9.9, 0.59, "benign"),
            (5.0, 0.6, "malignant"),
            (4.0, 0.0, "benign"),
        ],
    )
    def test_label_rule(self, radius, irr, label):
        assert PhantomSpec(radius_px=radius, irregularity=irr).label == label


class TestGenerate:
    def test_deterministic(self):
        spec = PhantomSpec(radius_px=7.0, irregularity=0.3, seed=123)
        a, b = generate(spec), generate(spec)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.mask, b.mask)

    def test_output_contract(self):
        roi = generate(PhantomSpec(radius_px=6.0, seed=1))
        assert roi.image.shape == (64, 64)
        assert roi.mask.shape == (64, 64)
        assert roi.image.min() >= 0.0 and roi.image.max() <= 1.0
        assert set(np.unique(roi.mask)) <= {0, 1}
        assert roi.mask_pixel_count == int(roi.mask.sum())

    def test_zero_irregularity_mask_is_a_disc(self):
        # circularity 4*pi*A/P^2 of the mask stays near 1 for round lesions
        for radius in (3.0, 6.0, 12.0):
            roi = generate(PhantomSpec(radius_px=radius, irregularity=0.0, seed=2))
            props = measure.regionprops(roi.mask.astype(int))
            assert len(props) == 1
            circ = 4 * np.pi * props[0].area / props[0].perimeter ** 2
            assert circ >= 0.9, f"radius {radius}: circularity {circ:.3f}"
            # area close to the analytic disc area
            assert abs(props[0].area - np.pi * radius**2) < 0.4 * radius + 6

    def test_mask_area_monotone_in_radius(self):
        areas = [
            generate(PhantomSpec(radius_px=r, irregularity=0.0, seed=3)).mask_pixel_count
            for r in (3.0, 5.0, 8.0, 12.0, 16.0)
        ]
        assert all(a < b for a, b in zip(areas, areas[1:]))

    def test_threshold_area_tracks_mask_area(self):
        # background < 0.5 < lesion, so thresholding the image recovers the mask
        roi = generate(
            PhantomSpec(radius_px=8.0, irregularity=0.2, noise_sd=0.0, seed=4)
        )
        thresh_area = int((roi.image > 0.5).sum())
        assert abs(thresh_area - roi.mask_pixel_count) <= 0.1 * roi.mask_pixel_count

    def test_bone_arc_adds_bright_corner(self):
        base = generate(PhantomSpec(radius_px=5.0, seed=5))
        boned = generate(PhantomSpec(radius_px=5.0, bone_arc=True, seed=5))
        assert (boned.image > 0.95).sum() > (base.image > 0.95).sum()
        np.testing.assert_array_equal(base.mask, boned.mask)


class TestDataset:
    def test_reproducible(self, tmp_path):
        e1, s1 = generate_dataset(4, 2, seed=9)
        e2, s2 = generate_dataset(4, 2, seed=9)
        assert e1 == e2
        assert s1 == s2

    def test_entry_and_id_shapes(self):
        entries, specs = generate_dataset(5, 3, class_balance=0.4, seed=1)
        assert len(entries) == 15 and len(specs) == 15
        assert entries[0]["patient_id"] == "P000"
        assert entries[0]["slice_id"] == "P000_S00"
        assert entries[4]["slice_id"] == "P001_S01"

    def test_scores_match_spec_labels(self):
        entries, specs = generate_dataset(6, 4, class_balance=0.5, seed=2)
        for entry, spec in zip(entries, specs):
            if spec.label == "malignant":
                assert entry["radiologist_score"] in (4, 5)
            else:
                assert entry["radiologist_score"] in (1, 2)

    def test_class_balance_counts(self):
        entries, specs = generate_dataset(10, 1, class_balance=0.3, seed=3)
        n_mal = sum(s.label == "malignant" for s in specs)
        assert n_mal == 3

    def test_patients_are_internally_consistent(self):
        entries, specs = generate_dataset(8, 5, seed=4)
        by_patient: dict[str, list] = {}
        for entry, spec in zip(entries, specs):
            by_patient.setdefault(entry["patient_id"], []).append(spec)
        for group in by_patient.values():
            assert len({s.label for s in group}) == 1
            radii = [s.radius_px for s in group]
            assert max(radii) - min(radii) <= 0.81  # jitter band

    def test_validation(self):
        with pytest.raises(ValueError):
            generate_dataset(0, 3)
        with pytest.raises(ValueError):
            generate_dataset(3, 3, class_balance=1.5)

    def test_on_disk_layout(self, phantom_dir):
        entries = pipeline.read_manifest(phantom_dir / "manifest.jsonl")
        assert len(entries) == 24
        for entry in entries[:3]:
            assert (phantom_dir / entry["pixel_file"]).is_file()
            assert (phantom_dir / entry["mask_file"]).is_file()
        specs = json.loads((phantom_dir / "phantom_specs.json").read_text())
        assert len(specs) == 24
        assert {"radius_px", "seed"} <= set(specs[0])

    def test_pipeline_reproduces_rendered_patch(self, phantom_dir):
        # HU files invert the default window, so preprocessing gives back
        # the rendered [0, 1] patch up to float32 storage error
        entries = pipeline.read_manifest(phantom_dir / "manifest.jsonl")
        specs = json.loads((phantom_dir / "phantom_specs.json").read_text())
        record = pipeline.load_record(entries[0], phantom_dir)
        roi = pipeline.extract_roi(record)
        rendered = generate(PhantomSpec(**specs[0]))
        np.testing.assert_allclose(roi.image, rendered.image, atol=1e-4)
        np.testing.assert_array_equal(roi.mask, rendered.mask)

    def test_hu_pixels_span_the_window(self, phantom_dir):
        entries = pipeline.read_manifest(phantom_dir / "manifest.jsonl")
        hu = ltf.read(phantom_dir / entries[0]["pixel_file"])
        assert hu.min() >= -1000.0 and hu.max() <= 400.0
