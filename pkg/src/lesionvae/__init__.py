"""CT lesion patch VAEs with Gaussian and Dirichlet priors.

Pipeline pieces: HU-window preprocessing into 64x64 ROIs, a synthetic lesion
phantom cohort, VAE training under a weighted composite loss (L1 + SSIM
dissimilarity + annealed KLD + optional classifier BCE), EM-style VAE/MLP
co-training, and latent-space analysis (clustering, direction discovery,
traversals).  The ``lesionvae`` CLI orchestrates everything end to end.
"""

__version__ = "0.1.0"

from .losses import LossConfig, composite_loss, ms_ssim, ssim
from .nets import Decoder, Encoder, Mlp, MlpConfig, Vae, VaeConfig
from .priors import (
    DirichletPosterior,
    GaussianPosterior,
    PriorConfig,
    dirichlet_kld,
    dirichlet_sample,
    gaussian_kld,
    gaussian_sample,
)

__all__ = [
    "__version__",
    "LossConfig",
    "composite_loss",
    "ssim",
    "ms_ssim",
    "VaeConfig",
    "MlpConfig",
    "Vae",
    "Encoder",
    "Decoder",
    "Mlp",
    "PriorConfig",
    "GaussianPosterior",
    "DirichletPosterior",
    "gaussian_sample",
    "gaussian_kld",
    "dirichlet_sample",
    "dirichlet_kld",
]
