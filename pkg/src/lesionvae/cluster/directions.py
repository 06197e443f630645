"""Latent direction arithmetic and decoded traversals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
import torch

SIMPLEX_ATOL = 1e-9


@dataclass
class DirectionVector:
    """A named latent direction: mean(group a) - mean(group b)."""

    name: str
    vector: np.ndarray
    group_a_ids: Tuple[str, ...] = ()
    group_b_ids: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1 or self.vector.size == 0:
            raise ValueError("direction vector must be a non-empty 1-d array")
        self.group_a_ids = tuple(self.group_a_ids)
        self.group_b_ids = tuple(self.group_b_ids)


def find_direction(
    latents_with,
    latents_without,
    name: str = "direction",
    ids_with: Sequence[str] = (),
    ids_without: Sequence[str] = (),
) -> DirectionVector:
    a = np.asarray(latents_with, dtype=np.float64)
    b = np.asarray(latents_without, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("each group must be a non-empty (n, L) array")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"latent sizes differ: {a.shape[1]} vs {b.shape[1]}")
    return DirectionVector(
        name=name,
        vector=a.mean(axis=0) - b.mean(axis=0),
        group_a_ids=tuple(ids_with),
        group_b_ids=tuple(ids_without),
    )


def project_simplex(z: torch.Tensor, atol: float = SIMPLEX_ATOL) -> torch.Tensor:
    """Clamp to >= 0 and renormalise over the last dim.

    Inputs already on the simplex (within ``atol``) are returned unchanged so
    that valid points survive bit-exactly.
    """
    sums = z.sum(dim=-1, keepdim=True)
    if bool((z >= 0).all()) and bool(((sums - 1.0).abs() <= atol).all()):
        return z
    w = z.clamp(min=0.0)
    s = w.sum(dim=-1, keepdim=True)
    uniform = torch.full_like(w, 1.0 / w.shape[-1])
    return torch.where(s > 0, w / s, uniform)


def _as_latent(z) -> torch.Tensor:
    t = z if isinstance(z, torch.Tensor) else torch.as_tensor(np.asarray(z))
    t = t.float()
    if t.ndim == 2 and t.shape[0] == 1:
        t = t[0]
    if t.ndim != 1:
        raise ValueError(f"expected a single latent vector, got shape {tuple(t.shape)}")
    return t


def _decode_one(decoder: Callable[[torch.Tensor], torch.Tensor], z: torch.Tensor) -> np.ndarray:
    if hasattr(decoder, "eval"):
        decoder.eval()
    with torch.no_grad():
        out = decoder(z.unsqueeze(0))
    if out.ndim != 4 or out.shape[0] != 1 or out.shape[1] != 1:
        raise ValueError(f"decoder must return (1, 1, H, W), got {tuple(out.shape)}")
    return out[0, 0].cpu().numpy()


def traverse(
    z0,
    direction,
    steps: Sequence[float],
    decoder: Callable[[torch.Tensor], torch.Tensor],
    simplex: bool = False,
) -> np.ndarray:
    """Frames decode(z0 + step * d), one per multiplier, as (n, H, W) float32.

    A multiplier of exactly 0 decodes ``z0`` itself, so that frame is
    bit-identical to the base reconstruction.  With ``simplex=True`` each
    point is re-projected onto the simplex before decoding.
    """
    z0 = _as_latent(z0)
    vec = direction.vector if isinstance(direction, DirectionVector) else direction
    d = torch.as_tensor(np.asarray(vec)).float()
    if d.shape != z0.shape:
        raise ValueError(f"direction shape {tuple(d.shape)} != latent shape {tuple(z0.shape)}")
    if len(steps) == 0:
        raise ValueError("steps is empty")
    frames = []
    for step in steps:
        z = z0 if float(step) == 0.0 else z0 + float(step) * d
        if simplex:
            z = project_simplex(z)
        frames.append(_decode_one(decoder, z))
    return np.stack(frames)


def interpolate(
    z_start,
    z_end,
    n_frames: int,
    decoder: Callable[[torch.Tensor], torch.Tensor],
    simplex: bool = False,
) -> np.ndarray:
    """Frames along (1-t)*start + t*end; endpoints decode the inputs exactly."""
    za = _as_latent(z_start)
    zb = _as_latent(z_end)
    if za.shape != zb.shape:
        raise ValueError(f"latent shapes differ: {tuple(za.shape)} vs {tuple(zb.shape)}")
    if n_frames < 2:
        raise ValueError(f"n_frames must be >= 2, got {n_frames}")
    frames = []
    for j in range(n_frames):
        if j == 0:
            z = za
        elif j == n_frames - 1:
            z = zb
        else:
            t = j / (n_frames - 1)
            z = (1.0 - t) * za + t * zb
        if simplex:
            z = project_simplex(z)
        frames.append(_decode_one(decoder, z))
    return np.stack(frames)
