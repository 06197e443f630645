"""Encoder/decoder and MLP classifier computation graphs.

The encoder stacks stride-2 conv blocks (GELU + batch norm) with channel
widths base * {1, 2, 4, 8}.  The Gaussian latent heads are two separate
full-map conv layers for mu and log-variance; the Dirichlet head is a
single linear layer over the flattened feature map, softplus-transformed
to strictly positive concentrations.  The decoder mirrors the encoder: a
transposed-conv stage first, then bilinear-upsample + conv stages, ending
in a sigmoid with no batch norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .priors import (
    ALPHA_FLOOR,
    DirichletPosterior,
    GaussianPosterior,
    PriorConfig,
    make_prior_alpha,
)


@dataclass(frozen=True)
class VaeConfig:
    base: int = 16
    latent_size: int = 32
    prior: PriorConfig = field(default_factory=PriorConfig)
    input_size: int = 64
    n_blocks: int = 4

    def __post_init__(self):
        if self.base < 4:
            raise ValueError(f"base {self.base} must be >= 4")
        if self.latent_size < 2:
            raise ValueError(f"latent_size {self.latent_size} must be >= 2")
        if self.n_blocks < 1 or self.input_size % (2 ** self.n_blocks) != 0:
            raise ValueError(
                f"input_size {self.input_size} not divisible by 2^{self.n_blocks}"
            )

    @property
    def final_size(self) -> int:
        return self.input_size // (2 ** self.n_blocks)

    @property
    def channels(self) -> list[int]:
        return [self.base * (2 ** i) for i in range(self.n_blocks)]


@dataclass(frozen=True)
class MlpConfig:
    """Classifier head layout; layer_sizes ends with the single output."""

    layer_sizes: tuple = (128, 64, 32, 1)
    dropout_p: float = 0.2
    tau: float = 0.5

    def __post_init__(self):
        if len(self.layer_sizes) not in (4, 5):
            raise ValueError(f"need 4 or 5 layers, got {len(self.layer_sizes)}")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        if self.layer_sizes[-1] != 1:
            raise ValueError("last layer must output a single probability")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p {self.dropout_p} outside [0, 1)")
        if not 0.4 <= self.tau <= 0.6:
            raise ValueError(f"tau {self.tau} outside [0.4, 0.6]")


def _conv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1),
        nn.GELU(),
        nn.BatchNorm2d(c_out),
    )


class Encoder(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.channels
        blocks = [_conv_block(1, chans[0])]
        blocks += [_conv_block(chans[i - 1], chans[i]) for i in range(1, len(chans))]
        self.blocks = nn.Sequential(*blocks)
        s = cfg.final_size
        if cfg.prior.kind == "gaussian":
            self.head_mu = nn.Conv2d(chans[-1], cfg.latent_size, kernel_size=s)
            self.head_log_var = nn.Conv2d(chans[-1], cfg.latent_size, kernel_size=s)
        else:
            self.head_alpha = nn.Linear(chans[-1] * s * s, cfg.latent_size)
            prior_alpha = make_prior_alpha(cfg.prior, cfg.latent_size)
            self.register_buffer("prior_alpha", prior_alpha)

    def forward(self, x: Tensor):
        if x.dim() == 3:
            x = x.unsqueeze(1)
        if x.shape[-2:] != (self.cfg.input_size, self.cfg.input_size) or x.shape[1] != 1:
            raise ValueError(
                f"expected (N, 1, {self.cfg.input_size}, {self.cfg.input_size}), "
                f"got {tuple(x.shape)}"
            )
        h = self.blocks(x)
        if self.cfg.prior.kind == "gaussian":
            mu = self.head_mu(h).flatten(1)
            log_var = self.head_log_var(h).flatten(1)
            return GaussianPosterior(mu=mu, log_var=log_var)
        alpha = F.softplus(self.head_alpha(h.flatten(1))) + ALPHA_FLOOR
        return DirichletPosterior(alpha=alpha, prior_alpha=self.prior_alpha)


class Decoder(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.channels[::-1]
        s = cfg.final_size
        self.project = nn.Sequential(
            nn.ConvTranspose2d(cfg.latent_size, chans[0], kernel_size=s),
            nn.GELU(),
            nn.BatchNorm2d(chans[0]),
        )
        stages = []
        # first upsampling stage is transposed conv, the rest bilinear + conv
        for i in range(cfg.n_blocks):
            c_in = chans[i]
            c_out = chans[i + 1] if i + 1 < len(chans) else chans[-1]
            last = i == cfg.n_blocks - 1
            if last:
                c_out = 1
            if i == 0:
                stage = [
                    nn.ConvTranspose2d(
                        c_in, c_out, kernel_size=3, stride=2, padding=1, output_padding=1
                    )
                ]
            else:
                stage = [
                    nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
                    nn.Conv2d(c_in, c_out, kernel_size=3, padding=1),
                ]
            if last:
                stage.append(nn.Sigmoid())
            else:
                stage += [nn.GELU(), nn.BatchNorm2d(c_out)]
            stages.append(nn.Sequential(*stage))
        self.stages = nn.Sequential(*stages)

    def forward(self, z: Tensor) -> Tensor:
        if z.dim() == 1:
            z = z.unsqueeze(0)
        if z.shape[-1] != self.cfg.latent_size:
            raise ValueError(
                f"latent length {z.shape[-1]} != configured {self.cfg.latent_size}"
            )
        h = self.project(z.unsqueeze(-1).unsqueeze(-1))
        return self.stages(h)


class Vae(nn.Module):
    """Encoder + decoder pair; forward returns (reconstruction, posterior)."""

    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)

    def forward(self, x: Tensor):
        posterior = self.encoder(x)
        z = posterior.sample()
        return self.decoder(z), posterior

    def reconstruct(self, x: Tensor) -> Tensor:
        """Deterministic reconstruction from the posterior feature point."""
        posterior = self.encoder(x)
        return self.decoder(posterior.features())


class Mlp(nn.Module):
    """Malignancy classifier over latent vectors; outputs probabilities."""

    def __init__(self, input_size: int, cfg: MlpConfig):
        super().__init__()
        self.cfg = cfg
        layers = []
        prev = input_size
        for width in cfg.layer_sizes[:-1]:
            layers += [
                nn.Linear(prev, width),
                nn.GELU(),
                nn.Dropout(cfg.dropout_p),
                nn.BatchNorm1d(width),
            ]
            prev = width
        layers += [nn.Linear(prev, 1), nn.Sigmoid()]
        self.net = nn.Sequential(*layers)

    def forward(self, z: Tensor) -> Tensor:
        if z.dim() == 1:
            z = z.unsqueeze(0)
        return self.net(z).flatten()

    def predict(self, z: Tensor) -> Tensor:
        """Hard decisions: positive iff p >= tau."""
        return (self.forward(z) >= self.cfg.tau).long()


def mlp_forward(z: Tensor, model: Mlp) -> Tensor:
    return model(z)
