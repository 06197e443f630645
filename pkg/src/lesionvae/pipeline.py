"""CT lesion patch ingestion: HU windowing, ROI extraction, exclusion
rules, labelling and patient-aware splitting.

Slices arrive through a line-delimited JSON manifest pointing at LTF1
pixel/mask files; every emitted ROI is a 64x64 patch scaled to [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ltf

ROI_SIZE = 64
MIN_MASK_PIXELS = 8
MIN_DIAMETER_MM = 3.0

# HU below -1000 is air, above 400 bone; lesions live in the tissue band.
DEFAULT_HU_WINDOW = (-1000, 400)

LABEL_BENIGN = "benign"
LABEL_AMBIGUOUS = "ambiguous"
LABEL_MALIGNANT = "malignant"


@dataclass(frozen=True)
class HuWindow:
    """Hounsfield windowing bounds, clamped-linear rescale to [0, 1]."""

    lower: int = DEFAULT_HU_WINDOW[0]
    upper: int = DEFAULT_HU_WINDOW[1]

    def __post_init__(self):
        if not (-3000 <= self.lower < self.upper <= 3000):
            raise ValueError(
                f"invalid HU window [{self.lower}, {self.upper}]: "
                "need -3000 <= lower < upper <= 3000"
            )


@dataclass
class SliceRecord:
    """One raw 2D lesion slice with HU pixels and its segmentation mask."""

    patient_id: str
    slice_id: str
    pixels: np.ndarray
    mask: np.ndarray
    radiologist_score: int
    pixel_spacing_mm: float = 1.0
    slice_thickness_mm: float = 1.0

    def __post_init__(self):
        if self.pixels.shape != self.mask.shape:
            raise ValueError(
                f"mask shape {self.mask.shape} != pixel shape {self.pixels.shape}"
            )
        if self.radiologist_score not in (1, 2, 3, 4, 5):
            raise ValueError(f"radiologist score {self.radiologist_score} not in 1..5")


@dataclass
class RoiSlice:
    """A windowed 64x64 patch with mask, label and bookkeeping fields."""

    patient_id: str
    slice_id: str
    image: np.ndarray
    mask: np.ndarray
    label: str
    mask_pixel_count: int


@dataclass(frozen=True)
class Excluded:
    """Marker for a slice dropped by an exclusion rule."""

    reason: str


@dataclass
class SplitPlan:
    """Patient-level train/test split plus 5-fold slice partitions."""

    train_patients: set
    test_patients: set
    folds: list = field(default_factory=list)
    seed: int = 0


def hu_window_scale(pixels: np.ndarray, window: HuWindow) -> np.ndarray:
    """Scale HU values into [0, 1] by clamped linear mapping over `window`."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if not np.all(np.isfinite(pixels)):
        bad = int(np.count_nonzero(~np.isfinite(pixels)))
        raise ValueError(f"{bad} non-finite HU pixel value(s)")
    scaled = (pixels - window.lower) / (window.upper - window.lower)
    return np.clip(scaled, 0.0, 1.0)


def assign_label(score: int) -> str:
    """Map the 1-5 radiologist score onto benign/ambiguous/malignant."""
    if score in (1, 2):
        return LABEL_BENIGN
    if score == 3:
        return LABEL_AMBIGUOUS
    if score in (4, 5):
        return LABEL_MALIGNANT
    raise ValueError(f"radiologist score {score} not in 1..5")


def extract_roi(
    record: SliceRecord,
    window: HuWindow | None = None,
    size: int = ROI_SIZE,
) -> RoiSlice | Excluded:
    """Crop a `size`x`size` window centred on the mask bounding box.

    Excludes the slice when the mask is empty, when the bounding box is
    larger than the ROI, or when the centred window would run off the
    image edge.
    """
    window = window or HuWindow()
    mask = np.asarray(record.mask) > 0
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return Excluded("no lesion")
    r0, r1 = int(rows[0]), int(rows[-1])
    c0, c1 = int(cols[0]), int(cols[-1])
    if (r1 - r0 + 1) > size or (c1 - c0 + 1) > size:
        return Excluded("does not fit ROI")
    h, w = mask.shape
    if (h, w) == (size, size):
        top, left = 0, 0  # already-cropped input: the patch is the window
    else:
        # bounding-box centre rounded down
        cr, cc = (r0 + r1) // 2, (c0 + c1) // 2
        top, left = cr - size // 2, cc - size // 2
        if top < 0 or left < 0 or top + size > h or left + size > w:
            return Excluded("window off edge")
    image = hu_window_scale(record.pixels, window)[top : top + size, left : left + size]
    roi_mask = mask[top : top + size, left : left + size].astype(np.uint8)
    return RoiSlice(
        patient_id=record.patient_id,
        slice_id=record.slice_id,
        image=image,
        mask=roi_mask,
        label=assign_label(record.radiologist_score),
        mask_pixel_count=int(roi_mask.sum()),
    )


def filter_lesion(roi: RoiSlice, diameter_mm: float) -> RoiSlice | Excluded:
    """Drop lesions under 3 mm diameter or under 8 mask pixels."""
    if diameter_mm < MIN_DIAMETER_MM:
        return Excluded("less than 3 mm diameter")
    if roi.mask_pixel_count < MIN_MASK_PIXELS:
        return Excluded("less than 8 mask pixels")
    return roi


def lesion_diameter_mm(mask: np.ndarray, pixel_spacing_mm: float) -> float:
    """Max mask extent along either axis times the in-plane spacing."""
    mask = np.asarray(mask) > 0
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return 0.0
    extent = max(rows[-1] - rows[0] + 1, cols[-1] - cols[0] + 1)
    return float(extent) * float(pixel_spacing_mm)


def patient_split(patients, ratio: float = 0.7, seed: int = 0) -> SplitPlan:
    """Randomly split patient ids into disjoint train/test sets."""
    ordered = sorted(patients)
    n = len(ordered)
    if n < 2:
        raise ValueError(f"need at least 2 patients, got {n}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio {ratio} outside (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(ratio * n))
    n_train = min(max(n_train, 1), n - 1)
    train = {ordered[i] for i in perm[:n_train]}
    test = {ordered[i] for i in perm[n_train:]}
    return SplitPlan(train_patients=train, test_patients=test, seed=seed)


def kfold_split(slices, k: int = 5, seed: int = 0) -> list:
    """Partition slices into k base sets and rotate them through 3:1:1
    train/val/test folds; each base set is the test set exactly once.

    Returns a list of (train_idx, val_idx, test_idx) index arrays.
    """
    n = len(slices)
    if n < k:
        raise ValueError(f"need at least {k} slices, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    base_sets = [np.sort(part) for part in np.array_split(perm, k)]
    folds = []
    for i in range(k):
        test = base_sets[i]
        val = base_sets[(i + 1) % k]
        train = np.sort(
            np.concatenate([base_sets[j] for j in range(k) if j not in (i, (i + 1) % k)])
        )
        folds.append((train, val, test))
    return folds


# ---------------------------------------------------------------------------
# Manifest ingestion


def read_manifest(path: str | Path) -> list[dict]:
    """Parse the line-delimited JSON dataset manifest."""
    required = {
        "patient_id",
        "slice_id",
        "pixel_file",
        "mask_file",
        "radiologist_score",
        "pixel_spacing_mm",
        "slice_thickness_mm",
    }
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            missing = required - entry.keys()
            if missing:
                raise ValueError(f"manifest line {lineno}: missing {sorted(missing)}")
            entries.append(entry)
    return entries


def load_record(entry: dict, root: str | Path) -> SliceRecord:
    root = Path(root)
    return SliceRecord(
        patient_id=str(entry["patient_id"]),
        slice_id=str(entry["slice_id"]),
        pixels=ltf.read(root / entry["pixel_file"]),
        mask=ltf.read(root / entry["mask_file"]),
        radiologist_score=int(entry["radiologist_score"]),
        pixel_spacing_mm=float(entry["pixel_spacing_mm"]),
        slice_thickness_mm=float(entry["slice_thickness_mm"]),
    )


def preprocess_manifest(
    manifest_path: str | Path,
    window: HuWindow | None = None,
    size: int = ROI_SIZE,
) -> tuple[list[RoiSlice], dict]:
    """Run window/crop/filter/label over every manifest entry.

    Size rules (3 mm, 8 px) are applied before the ROI-fit rules.  Returns
    the kept ROIs plus an exclusion-count report keyed by reason.
    """
    manifest_path = Path(manifest_path)
    window = window or HuWindow()
    root = manifest_path.parent
    kept: list[RoiSlice] = []
    exclusions: dict[str, int] = {}

    def exclude(reason: str) -> None:
        exclusions[reason] = exclusions.get(reason, 0) + 1

    for entry in read_manifest(manifest_path):
        record = load_record(entry, root)
        diameter = lesion_diameter_mm(record.mask, record.pixel_spacing_mm)
        if diameter == 0.0:
            exclude("no lesion")
            continue
        if diameter < MIN_DIAMETER_MM:
            exclude("less than 3 mm diameter")
            continue
        if int((np.asarray(record.mask) > 0).sum()) < MIN_MASK_PIXELS:
            exclude("less than 8 mask pixels")
            continue
        roi = extract_roi(record, window=window, size=size)
        if isinstance(roi, Excluded):
            exclude(roi.reason)
            continue
        kept.append(roi)
    report = {
        "kept": len(kept),
        "excluded": exclusions,
        "total": len(kept) + sum(exclusions.values()),
    }
    return kept, report


def save_rois(rois: list[RoiSlice], out_dir: str | Path) -> Path:
    """Write ROI images/masks as LTF1 stacks plus a JSON index.

    Images are stored as one float32 array of shape (n, 64, 64), masks as
    uint8 of the same shape; the index carries ids and labels in row order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = np.stack([r.image for r in rois]).astype(np.float32)
    masks = np.stack([r.mask for r in rois]).astype(np.uint8)
    ltf.write(out_dir / "images.ltf", images)
    ltf.write(out_dir / "masks.ltf", masks)
    index = {
        "patient_ids": [r.patient_id for r in rois],
        "slice_ids": [r.slice_id for r in rois],
        "labels": [r.label for r in rois],
        "mask_pixel_counts": [r.mask_pixel_count for r in rois],
    }
    (out_dir / "index.json").write_text(json.dumps(index, indent=1))
    return out_dir


def load_rois(in_dir: str | Path) -> list[RoiSlice]:
    in_dir = Path(in_dir)
    images = ltf.read(in_dir / "images.ltf")
    masks = ltf.read(in_dir / "masks.ltf")
    index = json.loads((in_dir / "index.json").read_text())
    return [
        RoiSlice(
            patient_id=index["patient_ids"][i],
            slice_id=index["slice_ids"][i],
            image=images[i],
            mask=masks[i],
            label=index["labels"][i],
            mask_pixel_count=index["mask_pixel_counts"][i],
        )
        for i in range(images.shape[0])
    ]


def binary_labels(rois, task: int = 1) -> np.ndarray:
    """Binary malignancy targets.

    Task 1: malignant vs non-malignant (benign and ambiguous negative).
    Task 2: malignant vs benign; raises if an ambiguous slice is passed,
    callers drop those rows first via `task2_mask`.
    """
    labels = np.array([r.label for r in rois])
    if task == 1:
        return (labels == LABEL_MALIGNANT).astype(np.int64)
    if task == 2:
        if np.any(labels == LABEL_AMBIGUOUS):
            raise ValueError("task 2 excludes ambiguous slices; filter them first")
        return (labels == LABEL_MALIGNANT).astype(np.int64)
    raise ValueError(f"unknown task {task}")


def task2_mask(rois) -> np.ndarray:
    return np.array([r.label != LABEL_AMBIGUOUS for r in rois])
