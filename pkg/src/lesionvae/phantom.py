"""Synthetic lesion-patch generator.

Produces deterministic 64x64 patches with controllable ground truth:
lesion radius, border irregularity, parenchyma texture density and
optional bone arcs in the patch corner.  Labels follow a fixed synthetic
rule (large or very irregular lesions are malignant) so downstream
classifiers have a learnable, non-clinical target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ltf
from .pipeline import (
    DEFAULT_HU_WINDOW,
    LABEL_BENIGN,
    LABEL_MALIGNANT,
    RoiSlice,
)

PATCH = 64
MALIGNANT_RADIUS = 10.0
MALIGNANT_IRREGULARITY = 0.6

# background stays below 0.5 and lesions above it so thresholded area is
# a usable size proxy for traversal checks; texture and noise are kept
# weak enough that reconstructions are not dominated by irreducible
# per-slice randomness
_BG_BASE = 0.08
_BG_TEXTURE = 0.12
_LESION_BASE = 0.62
_LESION_RANGE = 0.33
_BONE_VALUE = 0.97


@dataclass(frozen=True)
class PhantomSpec:
    """Ground-truth knobs for one synthetic patch."""

    radius_px: float
    irregularity: float = 0.0
    parenchyma_density: float = 0.5
    bone_arc: bool = False
    intensity: float = 0.7
    noise_sd: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if not 2.0 <= self.radius_px <= 24.0:
            raise ValueError(f"radius_px {self.radius_px} outside [2, 24]")
        for name in ("irregularity", "parenchyma_density", "intensity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")
        if not 0.0 <= self.noise_sd <= 0.2:
            raise ValueError(f"noise_sd {self.noise_sd} outside [0, 0.2]")

    @property
    def label(self) -> str:
        if self.radius_px >= MALIGNANT_RADIUS or self.irregularity >= MALIGNANT_IRREGULARITY:
            return LABEL_MALIGNANT
        return LABEL_BENIGN


def _smooth_field(rng: np.random.Generator, size: int = PATCH, coarse: int = 9) -> np.ndarray:
    """Bilinearly upsampled coarse noise grid, rescaled to [0, 1]."""
    grid = rng.standard_normal((coarse, coarse))
    src = np.linspace(0.0, coarse - 1.0, size)
    i0 = np.clip(src.astype(int), 0, coarse - 2)
    frac = src - i0
    rows = grid[i0, :] * (1 - frac)[:, None] + grid[i0 + 1, :] * frac[:, None]
    field = rows[:, i0] * (1 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :]
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)


def _boundary_radius(spec: PhantomSpec, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Angular lesion radius with seeded harmonic perturbation."""
    coeffs = rng.uniform(-1.0, 1.0, size=4)
    phases = rng.uniform(0.0, 2 * np.pi, size=4)
    norm = np.abs(coeffs).sum()
    p = np.zeros_like(theta)
    if norm > 0:
        for k, (a, phi) in enumerate(zip(coeffs, phases), start=2):
            p += a * np.cos(k * theta + phi)
        p /= norm
    return spec.radius_px * (1.0 + 0.35 * spec.irregularity * p)


def generate(spec: PhantomSpec) -> RoiSlice:
    """Render one deterministic 64x64 phantom patch with its lesion mask."""
    rng = np.random.default_rng(spec.seed)
    field = _smooth_field(rng)
    background = _BG_BASE + _BG_TEXTURE * spec.parenchyma_density * field

    yy, xx = np.mgrid[0:PATCH, 0:PATCH].astype(np.float64)
    cy = cx = (PATCH - 1) / 2.0
    dist = np.hypot(yy - cy, xx - cx)
    theta = np.arctan2(yy - cy, xx - cx)
    boundary = _boundary_radius(spec, theta, rng)
    mask = dist <= boundary
    # 1 px linear ramp softens the border without moving the mask edge
    alpha = np.clip(boundary - dist + 0.5, 0.0, 1.0)

    lesion_value = _LESION_BASE + _LESION_RANGE * spec.intensity
    image = background * (1.0 - alpha) + lesion_value * alpha

    if spec.bone_arc:
        corner = np.hypot(yy + 6.0, xx + 6.0)
        arc = np.abs(corner - 24.0) <= 2.5
        image[arc] = _BONE_VALUE

    image = image + rng.normal(0.0, spec.noise_sd, size=image.shape)
    image = np.clip(image, 0.0, 1.0)

    return RoiSlice(
        patient_id="phantom",
        slice_id=f"phantom_{spec.seed}",
        image=image,
        mask=mask.astype(np.uint8),
        label=spec.label,
        mask_pixel_count=int(mask.sum()),
    )


def _patient_base_spec(rng: np.random.Generator, malignant: bool) -> dict:
    """Patient-level spec around which slices jitter.

    Radii are kept clear of the malignancy threshold so per-slice jitter
    cannot flip the label.
    """
    if malignant:
        radius = rng.uniform(10.5, 16.0)
        irregularity = rng.uniform(0.15, 0.5)
    else:
        radius = rng.uniform(3.0, 9.5)
        irregularity = rng.uniform(0.0, 0.4)
    return {
        "radius_px": radius,
        "irregularity": irregularity,
        "parenchyma_density": rng.uniform(0.25, 0.85),
        "bone_arc": bool(rng.random() < 0.5),
        "intensity": rng.uniform(0.5, 1.0),
        "noise_sd": 0.005,
    }


def _jitter_spec(base: dict, rng: np.random.Generator, seed: int) -> PhantomSpec:
    return PhantomSpec(
        radius_px=float(np.clip(base["radius_px"] + rng.uniform(-0.4, 0.4), 2.0, 24.0)),
        irregularity=float(np.clip(base["irregularity"] + rng.uniform(-0.05, 0.05), 0.0, 1.0)),
        parenchyma_density=float(
            np.clip(base["parenchyma_density"] + rng.uniform(-0.05, 0.05), 0.0, 1.0)
        ),
        bone_arc=base["bone_arc"],
        intensity=float(np.clip(base["intensity"] + rng.uniform(-0.03, 0.03), 0.0, 1.0)),
        noise_sd=base["noise_sd"],
        seed=seed,
    )


def generate_dataset(
    n_patients: int,
    slices_per_patient: int,
    class_balance: float = 0.5,
    seed: int = 0,
    out_dir: str | Path | None = None,
    pixel_spacing_mm: float = 0.7,
) -> tuple[list[dict], list[PhantomSpec]]:
    """Build a phantom cohort and optionally write manifest + LTF1 files.

    Patients share a jittered base spec, so slices from the same patient
    are correlated.  Pixel files hold HU values obtained by inverting the
    default window, so the preprocessing pipeline reproduces the rendered
    [0, 1] patches exactly.
    """
    if n_patients < 1 or slices_per_patient < 1:
        raise ValueError("need at least one patient and one slice per patient")
    if not 0.0 <= class_balance <= 1.0:
        raise ValueError(f"class_balance {class_balance} outside [0, 1]")
    rng = np.random.default_rng(seed)
    n_malignant = int(round(class_balance * n_patients))
    flags = np.array([True] * n_malignant + [False] * (n_patients - n_malignant))
    rng.shuffle(flags)

    lower, upper = DEFAULT_HU_WINDOW
    entries: list[dict] = []
    specs: list[PhantomSpec] = []
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        (out_path / "slices").mkdir(parents=True, exist_ok=True)

    slice_seed = seed * 1_000_003 + 1
    for p in range(n_patients):
        malignant = bool(flags[p])
        base = _patient_base_spec(rng, malignant)
        patient_id = f"P{p:03d}"
        for s in range(slices_per_patient):
            spec = _jitter_spec(base, rng, seed=slice_seed)
            slice_seed += 1
            specs.append(spec)
            slice_id = f"{patient_id}_S{s:02d}"
            score = int(rng.choice([4, 5] if malignant else [1, 2]))
            entry = {
                "patient_id": patient_id,
                "slice_id": slice_id,
                "pixel_file": f"slices/{slice_id}_pixels.ltf",
                "mask_file": f"slices/{slice_id}_mask.ltf",
                "radiologist_score": score,
                "pixel_spacing_mm": pixel_spacing_mm,
                "slice_thickness_mm": round(float(rng.uniform(0.6, 5.0)), 2),
            }
            entries.append(entry)
            if out_path is not None:
                roi = generate(spec)
                hu = lower + roi.image * (upper - lower)
                ltf.write(out_path / entry["pixel_file"], hu.astype(np.float32))
                ltf.write(out_path / entry["mask_file"], roi.mask)

    if out_path is not None:
        with open(out_path / "manifest.jsonl", "w") as fh:
            for entry in entries:
                fh.write(json.dumps(entry) + "\n")
        spec_dump = [
            {**{k: getattr(sp, k) for k in (
                "radius_px", "irregularity", "parenchyma_density",
                "bone_arc", "intensity", "noise_sd", "seed")}}
            for sp in specs
        ]
        (out_path / "phantom_specs.json").write_text(json.dumps(spec_dump))
    return entries, specs
