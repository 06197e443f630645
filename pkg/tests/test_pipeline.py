"""HU windowing, ROI extraction, exclusion rules, labelling and splits."""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lesionvae import ltf, pipeline
from lesionvae.pipeline import (
    Excluded,
    HuWindow,
    RoiSlice,
    SliceRecord,
    assign_label,
    binary_labels,
    extract_roi,
    filter_lesion,
    hu_window_scale,
    kfold_split,
    lesion_diameter_mm,
    patient_split,
    preprocess_manifest,
    task2_mask,
)


def _record(pixels, mask, score=4, spacing=1.0, pid="P0", sid="P0_S0"):
    return SliceRecord(
        patient_id=pid,
        slice_id=sid,
        pixels=np.asarray(pixels, dtype=np.float64),
        mask=np.asarray(mask),
        radiologist_score=score,
        pixel_spacing_mm=spacing,
    )


def _disc_mask(shape, centre, radius):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return (np.hypot(yy - centre[0], xx - centre[1]) <= radius).astype(np.uint8)


class TestHuWindow:
    def test_default_bounds(self):
        w = HuWindow()
        assert (w.lower, w.upper) == (-1000, 400)

    @pytest.mark.parametrize("lower,upper", [(400, -1000), (100, 100), (-3001, 0), (0, 3001)])
    def test_invalid_bounds(self, lower, upper):
        with pytest.raises(ValueError):
            HuWindow(lower, upper)

    def test_scale_boundary_values(self):
        w = HuWindow(-1000, 400)
        hu = np.array([-1000.0, 400.0, -300.0, -3000.0, 2000.0])
        np.testing.assert_allclose(
            hu_window_scale(hu, w), [0.0, 1.0, 0.5, 0.0, 1.0], atol=1e-12
        )

    def test_scale_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            hu_window_scale(np.array([0.0, np.nan]), HuWindow())

    @given(st.lists(st.floats(-3000, 3000), min_size=1, max_size=50))
    def test_scale_always_in_unit_interval(self, values):
        scaled = hu_window_scale(np.array(values), HuWindow(-600, 100))
        assert np.all(scaled >= 0.0) and np.all(scaled <= 1.0)

    def test_idempotent_on_scaled_data(self):
        # re-windowing already-scaled data with a [0, 1] window is a no-op
        scaled = hu_window_scale(np.linspace(-1200, 600, 64), HuWindow())
        again = hu_window_scale(scaled, HuWindow(0, 1))
        np.testing.assert_allclose(again, scaled, atol=1e-12)


class TestLabels:
    @pytest.mark.parametrize(
        "score,label",
        [(1, "benign"), (2, "benign"), (3, "ambiguous"), (4, "malignant"), (5, "malignant")],
    )
    def test_score_mapping(self, score, label):
        assert assign_label(score) == label

    @pytest.mark.parametrize("score", [0, 6, -1])
    def test_out_of_range_score(self, score):
        with pytest.raises(ValueError):
            assign_label(score)

    def test_record_validation(self):
        with pytest.raises(ValueError, match="mask shape"):
            _record(np.zeros((4, 4)), np.zeros((4, 5)))
        with pytest.raises(ValueError, match="score"):
            _record(np.zeros((4, 4)), np.zeros((4, 4)), score=7)


class TestExtractRoi:
    def test_centred_crop_contains_full_mask(self):
        pixels = np.full((128, 128), -1000.0)
        mask = _disc_mask((128, 128), (64, 64), 5)
        pixels[mask > 0] = 400.0
        roi = extract_roi(_record(pixels, mask))
        assert isinstance(roi, RoiSlice)
        assert roi.image.shape == (64, 64)
        assert roi.mask.sum() == mask.sum()
        assert roi.mask_pixel_count == int(mask.sum())
        # lesion pixels map to the window's upper bound
        assert roi.image[roi.mask > 0].min() == 1.0

    def test_crop_window_position(self):
        # bbox rows 10..19, cols 30..39 -> centre (14, 34) -> window top-left (=-18, 2)
        mask = np.zeros((100, 100), dtype=np.uint8)
        mask[10:20, 30:40] = 1
        roi = extract_roi(_record(np.zeros((100, 100)), mask))
        assert isinstance(roi, Excluded)  # top = 14 - 32 < 0
        mask = np.zeros((100, 100), dtype=np.uint8)
        mask[40:50, 40:50] = 1  # centre (44, 44), window rows 12..75
        roi = extract_roi(_record(np.zeros((100, 100)), mask))
        assert isinstance(roi, RoiSlice)
        assert roi.mask[32 - 4 : 32 + 6, 32 - 4 : 32 + 6].all()

    def test_empty_mask(self):
        out = extract_roi(_record(np.zeros((80, 80)), np.zeros((80, 80))))
        assert out == Excluded("no lesion")

    def test_oversized_bbox(self):
        mask = np.zeros((200, 200), dtype=np.uint8)
        mask[10:80, 90:110] = 1  # 70 x 20 bounding box
        out = extract_roi(_record(np.zeros((200, 200)), mask))
        assert out == Excluded("does not fit ROI")

    def test_window_off_edge(self):
        mask = _disc_mask((512, 512), (5, 5), 3)
        out = extract_roi(_record(np.zeros((512, 512)), mask))
        assert out == Excluded("window off edge")

    def test_already_cropped_64x64_kept_even_off_centre(self):
        # a 64x64 input is its own window, even when the lesion hugs a corner
        mask = np.zeros((64, 64), dtype=np.uint8)
        mask[0:6, 0:6] = 1
        roi = extract_roi(_record(np.full((64, 64), -300.0), mask))
        assert isinstance(roi, RoiSlice)
        np.testing.assert_array_equal(roi.mask, mask)
        np.testing.assert_allclose(roi.image, 0.5, atol=1e-12)

    def test_label_and_ids_propagate(self):
        mask = _disc_mask((64, 64), (32, 32), 4)
        roi = extract_roi(_record(np.zeros((64, 64)), mask, score=2, pid="P9", sid="P9_S1"))
        assert (roi.patient_id, roi.slice_id, roi.label) == ("P9", "P9_S1", "benign")


class TestExclusionRules:
    def test_diameter_rule(self):
        roi = RoiSlice("p", "s", np.zeros((64, 64)), np.zeros((64, 64)), "benign", 200)
        assert filter_lesion(roi, 2.5) == Excluded("less than 3 mm diameter")
        assert filter_lesion(roi, 10.0) is roi

    def test_pixel_count_rule(self):
        roi = RoiSlice("p", "s", np.zeros((64, 64)), np.zeros((64, 64)), "benign", 7)
        assert filter_lesion(roi, 10.0) == Excluded("less than 8 mask pixels")

    def test_diameter_measurement(self):
        mask = np.zeros((64, 64))
        mask[10:13, 20:29] = 1  # 3 rows x 9 cols
        assert lesion_diameter_mm(mask, 0.5) == 4.5
        assert lesion_diameter_mm(np.zeros((8, 8)), 1.0) == 0.0


class TestSplits:
    def test_patient_split_sizes_and_disjointness(self):
        plan = patient_split([f"P{i}" for i in range(10)], ratio=0.7, seed=3)
        assert len(plan.train_patients) == 7
        assert len(plan.test_patients) == 3
        assert not plan.train_patients & plan.test_patients

    def test_patient_split_deterministic(self):
        ids = [f"P{i}" for i in range(25)]
        a = patient_split(ids, seed=5)
        b = patient_split(ids, seed=5)
        assert a.train_patients == b.train_patients
        assert a.test_patients == b.test_patients

    def test_patient_split_validation(self):
        with pytest.raises(ValueError):
            patient_split(["P0"])
        with pytest.raises(ValueError):
            patient_split(["P0", "P1"], ratio=1.0)

    def test_kfold_partition_properties(self):
        n = 23
        folds = kfold_split(list(range(n)), k=5, seed=1)
        assert len(folds) == 5
        all_test = []
        for train, val, test in folds:
            parts = np.concatenate([train, val, test])
            assert parts.size == n
            np.testing.assert_array_equal(np.sort(parts), np.arange(n))
            assert not set(train) & set(val)
            assert not set(val) & set(test)
            all_test.append(test)
        # every slice is in the test part exactly once across folds
        np.testing.assert_array_equal(np.sort(np.concatenate(all_test)), np.arange(n))

    def test_kfold_ratio_roughly_3_1_1(self):
        folds = kfold_split(list(range(100)), k=5, seed=0)
        train, val, test = folds[0]
        assert (train.size, val.size, test.size) == (60, 20, 20)

    def test_kfold_ten_slices_base_sets_of_two(self):
        folds = kfold_split(list(range(10)), k=5, seed=2)
        for _, val, test in folds:
            assert val.size == 2 and test.size == 2

    def test_kfold_too_few_slices(self):
        with pytest.raises(ValueError):
            kfold_split(list(range(4)), k=5)

    @given(st.integers(min_value=5, max_value=60), st.integers(min_value=0, max_value=99))
    def test_kfold_always_partitions(self, n, seed):
        folds = kfold_split(list(range(n)), k=5, seed=seed)
        for train, val, test in folds:
            merged = np.sort(np.concatenate([train, val, test]))
            np.testing.assert_array_equal(merged, np.arange(n))


class TestManifestPipeline:
    def _write_manifest(self, root, rows):
        entries = []
        for i, (pixels, mask, score, spacing) in enumerate(rows):
            ltf.write(root / f"px{i}.ltf", pixels.astype(np.float32))
            ltf.write(root / f"mk{i}.ltf", mask.astype(np.uint8))
            entries.append(
                {
                    "patient_id": f"P{i}",
                    "slice_id": f"P{i}_S0",
                    "pixel_file": f"px{i}.ltf",
                    "mask_file": f"mk{i}.ltf",
                    "radiologist_score": score,
                    "pixel_spacing_mm": spacing,
                    "slice_thickness_mm": 1.0,
                }
            )
        path = root / "manifest.jsonl"
        with open(path, "w") as fh:
            for e in entries:
                fh.write(json.dumps(e) + "\n")
        return path

    def test_missing_manifest_key(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps({"patient_id": "P0"}) + "\n")
        with pytest.raises(ValueError, match="missing"):
            pipeline.read_manifest(path)

    def test_blank_lines_ignored(self, tmp_path):
        keep = _disc_mask((64, 64), (32, 32), 6)
        path = self._write_manifest(tmp_path, [(np.zeros((64, 64)), keep, 4, 1.0)])
        path.write_text(path.read_text() + "\n\n")
        assert len(pipeline.read_manifest(path)) == 1

    def test_exclusion_accounting(self, tmp_path):
        good = _disc_mask((64, 64), (32, 32), 6)
        tiny_diam = np.zeros((64, 64))
        tiny_diam[30:32, 30:32] = 1  # 2 px extent * 1.0 mm < 3 mm
        few_px = np.zeros((64, 64))
        few_px[30, 28:34] = 1  # 6 px but 6 mm long at 1.0 mm spacing... diameter ok
        rows = [
            (np.zeros((64, 64)), good, 4, 1.0),
            (np.zeros((64, 64)), tiny_diam, 4, 1.0),
            (np.zeros((64, 64)), few_px, 4, 1.0),
            (np.zeros((64, 64)), np.zeros((64, 64)), 4, 1.0),
        ]
        path = self._write_manifest(tmp_path, rows)
        kept, report = preprocess_manifest(path)
        assert report["kept"] == 1 and len(kept) == 1
        assert report["excluded"] == {
            "less than 3 mm diameter": 1,
            "less than 8 mask pixels": 1,
            "no lesion": 1,
        }
        assert report["total"] == 4

    def test_custom_window_applied(self, tmp_path):
        mask = _disc_mask((64, 64), (32, 32), 6)
        pixels = np.full((64, 64), 100.0)
        path = self._write_manifest(tmp_path, [(pixels, mask, 4, 1.0)])
        kept, _ = preprocess_manifest(path, window=HuWindow(0, 200))
        np.testing.assert_allclose(kept[0].image, 0.5, atol=1e-6)

    def test_phantom_cohort_all_kept(self, phantom_dir, rois24):
        assert len(rois24) == 24
        for roi in rois24:
            assert roi.image.shape == (64, 64)
            assert 0.0 <= roi.image.min() and roi.image.max() <= 1.0
            assert roi.mask_pixel_count >= 8
            assert roi.label in ("benign", "malignant")


class TestRoiStore:
    def test_save_load_round_trip(self, tmp_path, rois24):
        out = pipeline.save_rois(rois24, tmp_path / "rois")
        back = pipeline.load_rois(out)
        assert len(back) == len(rois24)
        for a, b in zip(rois24, back):
            assert (a.patient_id, a.slice_id, a.label) == (b.patient_id, b.slice_id, b.label)
            assert a.mask_pixel_count == b.mask_pixel_count
            np.testing.assert_array_equal(a.image.astype(np.float32), b.image)
            np.testing.assert_array_equal(a.mask.astype(np.uint8), b.mask)

    def test_store_dtypes(self, tmp_path, rois24):
        out = pipeline.save_rois(rois24, tmp_path / "rois")
        assert ltf.read(out / "images.ltf").dtype == np.float32
        assert ltf.read(out / "masks.ltf").dtype == np.uint8


class TestBinaryLabels:
    def _rois(self, labels):
        return [
            RoiSlice(f"p{i}", f"s{i}", np.zeros((2, 2)), np.zeros((2, 2)), lab, 9)
            for i, lab in enumerate(labels)
        ]

    def test_task1_ambiguous_is_negative(self):
        rois = self._rois(["benign", "ambiguous", "malignant"])
        np.testing.assert_array_equal(binary_labels(rois, task=1), [0, 0, 1])

    def test_task2_rejects_ambiguous(self):
        rois = self._rois(["benign", "ambiguous", "malignant"])
        with pytest.raises(ValueError, match="ambiguous"):
            binary_labels(rois, task=2)
        keep = task2_mask(rois)
        np.testing.assert_array_equal(keep, [True, False, True])
        filtered = [r for r, k in zip(rois, keep) if k]
        np.testing.assert_array_equal(binary_labels(filtered, task=2), [0, 1])

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            binary_labels(self._rois(["benign"]), task=3)
