"""Lossless raster artifacts: grayscale PNGs, tile grids, frame directories."""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import numpy as np
from PIL import Image


def to_uint8(image) -> np.ndarray:
    """Map a [0, 1] float image to uint8 grayscale."""
    arr = np.asarray(image, dtype=np.float64)
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path: str | Path, image) -> Path:
    arr = to_uint8(image)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d image, got shape {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="L").save(path, format="PNG")
    return path


def image_grid(images, n_cols: int = 8, pad: int = 2, pad_value: float = 0.0) -> np.ndarray:
    """Tile a (n, H, W) stack into one image, row-major with padding."""
    stack = np.asarray(images, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, H, W) stack, got {stack.shape}")
    if n_cols < 1 or pad < 0:
        raise ValueError("n_cols must be >= 1 and pad >= 0")
    n, h, w = stack.shape
    n_cols = min(n_cols, n)
    n_rows = (n + n_cols - 1) // n_cols
    grid = np.full(
        (n_rows * h + pad * (n_rows + 1), n_cols * w + pad * (n_cols + 1)),
        pad_value,
    )
    for i in range(n):
        r, c = divmod(i, n_cols)
        top = pad + r * (h + pad)
        left = pad + c * (w + pad)
        grid[top : top + h, left : left + w] = stack[i]
    return grid


def save_frames(out_dir: str | Path, frames: Sequence[np.ndarray]) -> List[Path]:
    """Write numbered frame_XXX.png files; external tools can assemble video."""
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, H, W) stack, got {frames.shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(frames.shape[0] - 1)))
    return [
        save_png(out_dir / f"frame_{i:0{width}d}.png", frame)
        for i, frame in enumerate(frames)
    ]
