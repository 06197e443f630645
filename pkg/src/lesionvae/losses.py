"""Composite VAE training loss and its reconstruction similarity terms.

The scalar objective is a weighted per-image sum

    (batch_size * base)^-1 * sum_i [ lambda * psi * L1_i
                                     + (1 - lambda) * gamma * (1 - SSIM_i)
                                     + a * beta_norm * KLD_i
                                     + bce_weight * BCE_i ]

where ``a`` is the linear KLD annealing factor and beta_norm scales beta
by latent_size / image_size.  SSIM enters as the dissimilarity 1 - SSIM
so that minimisation rewards good reconstructions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F
from torch import Tensor

SSIM_WIN_SIZE = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# reference MS-SSIM scale weights (5-scale form)
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
# smallest image side that still admits a meaningful local window
_MIN_SCALE_SIZE = 8


@dataclass(frozen=True)
class LossConfig:
    """All composite-loss hyperparameters plus the EM-phase BCE weight."""

    lambda_: float = 0.5
    psi: int = 1
    gamma: float = 1
    beta: float = 1.0
    anneal: bool = False
    ssim_variant: str = "ssim"
    base: int = 16
    batch_size: int = 32
    latent_size: int = 32
    image_size: int = 4096
    bce_weight: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ValueError(f"lambda {self.lambda_} outside [0, 1]")
        if self.psi not in (1, 2, 3):
            raise ValueError(f"psi {self.psi} not in {{1, 2, 3}}")
        if self.gamma not in (0, 1, self.batch_size):
            raise ValueError(f"gamma {self.gamma} not in {{0, 1, batch_size}}")
        if self.beta < 0:
            raise ValueError(f"beta {self.beta} must be non-negative")
        if self.ssim_variant not in ("ssim", "ms_ssim"):
            raise ValueError(f"unknown ssim variant {self.ssim_variant!r}")
        if self.base < 1 or self.batch_size < 1 or self.latent_size < 1:
            raise ValueError("base, batch_size and latent_size must be positive")
        if self.bce_weight < 0:
            raise ValueError(f"bce_weight {self.bce_weight} must be non-negative")

    @property
    def beta_norm(self) -> float:
        # recomputed on access so it can never go stale
        return self.beta * self.latent_size / self.image_size

    def with_batch_size(self, batch_size: int) -> "LossConfig":
        """Adjust for a ragged final batch, keeping gamma's sum semantics."""
        gamma = batch_size if self.gamma == self.batch_size and self.gamma not in (0, 1) else self.gamma
        return replace(self, batch_size=batch_size, gamma=gamma)


def annealing(epoch: int, total_epochs: int, enabled: bool = True) -> float:
    """Linear KLD annealing factor: 1 at epoch 0 down to 0 at the last epoch."""
    if not enabled:
        return 1.0
    if total_epochs < 1:
        raise ValueError(f"total_epochs {total_epochs} must be >= 1")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside 0..{total_epochs - 1}")
    if total_epochs == 1:
        return 1.0
    return 1.0 - epoch / (total_epochs - 1)


def _to_nchw(x: Tensor) -> Tensor:
    if x.dim() == 2:
        return x.unsqueeze(0).unsqueeze(0)
    if x.dim() == 3:
        return x.unsqueeze(1)
    if x.dim() == 4:
        return x
    raise ValueError(f"expected 2D-4D image tensor, got {x.dim()}D")


def _gaussian_window(win_size: int, sigma: float, dtype, device) -> Tensor:
    coords = torch.arange(win_size, dtype=dtype, device=device) - (win_size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return g.outer(g)


def _ssim_parts(x: Tensor, y: Tensor, win_size: int, sigma: float) -> tuple[Tensor, Tensor]:
    """Per-image luminance and contrast-structure terms (valid windows)."""
    c = x.shape[1]
    kernel = _gaussian_window(win_size, sigma, x.dtype, x.device)
    kernel = kernel.expand(c, 1, win_size, win_size)
    mu_x = F.conv2d(x, kernel, groups=c)
    mu_y = F.conv2d(y, kernel, groups=c)
    xx = F.conv2d(x * x, kernel, groups=c) - mu_x ** 2
    yy = F.conv2d(y * y, kernel, groups=c) - mu_y ** 2
    xy = F.conv2d(x * y, kernel, groups=c) - mu_x * mu_y
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    lum = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
    cs = (2 * xy + c2) / (xx + yy + c2)
    return lum.mean(dim=(1, 2, 3)), cs.mean(dim=(1, 2, 3))


def _effective_win(size: int, win_size: int) -> int:
    win = min(win_size, size)
    return win if win % 2 == 1 else win - 1


def ssim(x: Tensor, y: Tensor, win_size: int = SSIM_WIN_SIZE, sigma: float = SSIM_SIGMA) -> Tensor:
    """Mean windowed SSIM per image, Gaussian window, unit data range.

    The window shrinks to the largest odd size that fits when the image is
    smaller than `win_size`.
    """
    x, y = _to_nchw(x), _to_nchw(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    win = _effective_win(min(x.shape[-2], x.shape[-1]), win_size)
    lum, cs = _ssim_parts(x, y, win, sigma)
    return lum * cs


def ms_ssim_scales(size: int, win_size: int = SSIM_WIN_SIZE, max_scales: int = 5) -> int:
    """Number of dyadic scales whose downsampled side stays >= 8 px."""
    scales = 1
    while scales < max_scales and size // (2 ** scales) >= _MIN_SCALE_SIZE:
        scales += 1
    return scales


def ms_ssim(
    x: Tensor,
    y: Tensor,
    win_size: int = SSIM_WIN_SIZE,
    sigma: float = SSIM_SIGMA,
    scales: int | None = None,
) -> Tensor:
    """Multi-scale SSIM, product form with renormalised reference weights.

    Scales default to the maximum feasible count (4 on 64x64 inputs);
    contrast-structure terms are clamped at a small positive floor so the
    weighted product stays differentiable.
    """
    x, y = _to_nchw(x), _to_nchw(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    size = min(x.shape[-2], x.shape[-1])
    feasible = ms_ssim_scales(size, win_size)
    if scales is None:
        scales = feasible
    if not 1 <= scales <= feasible:
        raise ValueError(f"scales {scales} outside 1..{feasible} for size {size}")
    weights = torch.tensor(MS_SSIM_WEIGHTS[:scales], dtype=x.dtype, device=x.device)
    weights = weights / weights.sum()

    value = torch.ones(x.shape[0], dtype=x.dtype, device=x.device)
    for level in range(scales):
        win = _effective_win(min(x.shape[-2], x.shape[-1]), win_size)
        lum, cs = _ssim_parts(x, y, win, sigma)
        if level < scales - 1:
            value = value * torch.clamp(cs, min=1e-8) ** weights[level]
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
        elif scales == 1:
            value = value * lum * cs  # exponent 1: collapse to plain SSIM
        else:
            value = value * torch.clamp(lum * cs, min=1e-8) ** weights[level]
    return value


def _per_image_l1(x: Tensor, y: Tensor) -> Tensor:
    return (x - y).abs().flatten(1).mean(dim=1)


def _per_image_bce(probs: Tensor, labels: Tensor) -> Tensor:
    probs = probs.flatten().clamp(1e-7, 1 - 1e-7)
    labels = labels.flatten().to(probs.dtype)
    return -(labels * probs.log() + (1 - labels) * (1 - probs).log())


def composite_loss(
    images: Tensor,
    reconstructions: Tensor,
    posterior,
    cfg: LossConfig,
    epoch: int = 0,
    total_epochs: int = 1,
    mlp_probs: Tensor | None = None,
    labels: Tensor | None = None,
) -> tuple[Tensor, dict]:
    """Weighted composite objective; returns the scalar and a term breakdown.

    ``posterior`` is any object with a per-image ``kld()``.  The MLP
    probability/label pair must be supplied exactly when bce_weight > 0.
    """
    x = _to_nchw(images)
    y = _to_nchw(reconstructions)
    if x.shape != y.shape:
        raise ValueError(f"image shape {tuple(x.shape)} != reconstruction {tuple(y.shape)}")
    n = x.shape[0]
    if cfg.bce_weight > 0 and (mlp_probs is None or labels is None):
        raise ValueError("bce_weight > 0 requires mlp_probs and labels")
    if cfg.bce_weight == 0 and mlp_probs is not None:
        raise ValueError("mlp_probs supplied but bce_weight is 0")

    scale = 1.0 / (n * cfg.base)
    a = annealing(epoch, total_epochs, cfg.anneal)

    l1 = _per_image_l1(x, y)
    term_l1 = scale * cfg.lambda_ * cfg.psi * l1.sum()

    if cfg.gamma != 0 and cfg.lambda_ < 1.0:
        sim = ssim(x, y) if cfg.ssim_variant == "ssim" else ms_ssim(x, y)
        dissim = 1.0 - sim
    else:
        dissim = torch.zeros_like(l1)
    term_ssim = scale * (1.0 - cfg.lambda_) * cfg.gamma * dissim.sum()

    kld = posterior.kld()
    if kld.dim() == 0:
        kld = kld.unsqueeze(0)
    if kld.shape[0] != n:
        raise ValueError(f"posterior KLD has {kld.shape[0]} rows, expected {n}")
    term_kld = scale * a * cfg.beta_norm * kld.sum()

    if cfg.bce_weight > 0:
        bce = _per_image_bce(mlp_probs, labels)
        if bce.shape[0] != n:
            raise ValueError(f"BCE has {bce.shape[0]} rows, expected {n}")
        term_bce = scale * cfg.bce_weight * bce.sum()
    else:
        term_bce = torch.zeros((), dtype=x.dtype, device=x.device)

    names = ("l1", "ssim", "kld", "bce")
    terms = (term_l1, term_ssim, term_kld, term_bce)
    for name, term in zip(names, terms):
        if not torch.isfinite(term):
            raise ValueError(f"non-finite {name} term in composite loss")

    total = term_l1 + term_ssim + term_kld + term_bce
    breakdown = {name: float(term.detach()) for name, term in zip(names, terms)}
    breakdown["annealing"] = a
    breakdown["total"] = float(total.detach())
    return total, breakdown
