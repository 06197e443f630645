"""Composite loss, SSIM/MS-SSIM terms, annealing and gradient checks."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from lesionvae.losses import (
    LossConfig,
    annealing,
    composite_loss,
    ms_ssim,
    ms_ssim_scales,
    ssim,
)
from lesionvae.priors import DirichletPosterior, GaussianPosterior

# SSIM of a constant-0 vs constant-1 image: C1/(1+C1) with C1 = 1e-4
SSIM_ZERO_ONE = 9.999000099990002e-05


def _posterior(n, latent=6, kind="gaussian", seed=0):
    g = torch.Generator().manual_seed(seed)
    if kind == "gaussian":
        return GaussianPosterior(
            mu=torch.randn(n, latent, generator=g, dtype=torch.float64),
            log_var=0.3 * torch.randn(n, latent, generator=g, dtype=torch.float64),
        )
    alpha = torch.rand(n, latent, generator=g, dtype=torch.float64) * 2 + 0.3
    return DirichletPosterior(
        alpha=alpha, prior_alpha=torch.full((latent,), 0.9, dtype=torch.float64)
    )


class TestAnnealing:
    def test_endpoints(self):
        assert annealing(0, 10) == 1.0
        assert annealing(9, 10) == 0.0
        assert annealing(5, 11) == 0.5

    def test_disabled(self):
        assert annealing(7, 10, enabled=False) == 1.0

    def test_single_epoch(self):
        assert annealing(0, 1) == 1.0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            annealing(10, 10)
        with pytest.raises(ValueError):
            annealing(-1, 10)


class TestLossConfig:
    def test_beta_norm_formula(self):
        cfg = LossConfig(beta=2.0, latent_size=128, image_size=4096)
        assert cfg.beta_norm == 0.0625

    def test_beta_norm_never_stale(self):
        from dataclasses import replace

        cfg = LossConfig(beta=4.0, latent_size=32, image_size=4096)
        assert replace(cfg, latent_size=64).beta_norm == 2 * cfg.beta_norm

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lambda_": 1.5},
            {"lambda_": -0.1},
            {"psi": 4},
            {"gamma": 7},
            {"beta": -1.0},
            {"ssim_variant": "psnr"},
            {"bce_weight": -0.5},
            {"base": 0},
        ],
    )
    def test_rejects_out_of_range(self, kwargs):
        with pytest.raises(ValueError):
            LossConfig(**kwargs)

    def test_gamma_may_equal_batch_size(self):
        cfg = LossConfig(gamma=16, batch_size=16)
        assert cfg.gamma == 16

    def test_with_batch_size_tracks_sum_mode(self):
        cfg = LossConfig(gamma=32, batch_size=32)
        ragged = cfg.with_batch_size(20)
        assert ragged.gamma == 20 and ragged.batch_size == 20

    def test_with_batch_size_keeps_mean_and_off_modes(self):
        assert LossConfig(gamma=1, batch_size=32).with_batch_size(20).gamma == 1
        assert LossConfig(gamma=0, batch_size=32).with_batch_size(20).gamma == 0


class TestSsim:
    def test_self_similarity(self):
        torch.manual_seed(0)
        x = torch.rand(3, 64, 64)
        torch.testing.assert_close(ssim(x, x), torch.ones(3), atol=1e-6, rtol=0)

    def test_constant_zero_vs_one(self):
        x = torch.zeros(1, 64, 64)
        y = torch.ones(1, 64, 64)
        assert abs(float(ssim(x, y)) - SSIM_ZERO_ONE) < 1e-6

    def test_symmetry(self):
        torch.manual_seed(1)
        for _ in range(10):
            x, y = torch.rand(2, 64, 64), torch.rand(2, 64, 64)
            torch.testing.assert_close(ssim(x, y), ssim(y, x), atol=1e-7, rtol=0)

    def test_range(self):
        torch.manual_seed(2)
        vals = ssim(torch.rand(8, 64, 64), torch.rand(8, 64, 64))
        assert (vals >= -1.0).all() and (vals <= 1.0).all()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(torch.zeros(1, 64, 64), torch.zeros(1, 32, 32))

    def test_window_shrinks_for_small_images(self):
        x = torch.rand(2, 8, 8)
        torch.testing.assert_close(ssim(x, x), torch.ones(2), atol=1e-6, rtol=0)

    def test_noise_decreases_similarity(self):
        torch.manual_seed(3)
        x = torch.rand(4, 64, 64)
        noisy = (x + 0.3 * torch.randn_like(x)).clamp(0, 1)
        assert float(ssim(x, noisy).mean()) < float(ssim(x, x).mean())


class TestMsSsim:
    def test_self_similarity(self):
        torch.manual_seed(0)
        x = torch.rand(2, 64, 64)
        torch.testing.assert_close(ms_ssim(x, x), torch.ones(2), atol=1e-5, rtol=0)

    def test_collapses_to_ssim_at_one_scale(self):
        torch.manual_seed(4)
        x, y = torch.rand(3, 64, 64), torch.rand(3, 64, 64)
        torch.testing.assert_close(ms_ssim(x, y, scales=1), ssim(x, y), atol=1e-6, rtol=0)

    def test_scale_count_for_sizes(self):
        assert ms_ssim_scales(64) == 4
        assert ms_ssim_scales(8) == 1
        assert ms_ssim_scales(256) == 5
        assert ms_ssim_scales(512) == 5  # capped at the 5 reference weights

    def test_scales_out_of_range(self):
        x = torch.rand(1, 64, 64)
        with pytest.raises(ValueError):
            ms_ssim(x, x, scales=5)

    def test_monotone_under_increasing_noise(self):
        torch.manual_seed(5)
        x = torch.rand(10, 64, 64)
        means = []
        for amp in (0.0, 0.1, 0.2, 0.4):
            noisy = (x + amp * torch.randn(100, 10, 64, 64).mean(dim=0)).clamp(0, 1)
            means.append(float(ms_ssim(x, noisy).mean()))
        assert all(a >= b for a, b in zip(means, means[1:])), means


class TestCompositeLoss:
    def _batch(self, n=4, size=16, seed=0):
        g = torch.Generator().manual_seed(seed)
        x = torch.rand(n, size, size, generator=g, dtype=torch.float64)
        y = torch.rand(n, size, size, generator=g, dtype=torch.float64)
        return x, y

    def test_pure_l1_mode(self):
        x, y = self._batch()
        cfg = LossConfig(lambda_=1.0, psi=2, gamma=0, beta=0.0, base=8, batch_size=4)
        total, parts = composite_loss(x, y, _posterior(4), cfg)
        expected = 2 * float((x - y).abs().mean()) / 8
        assert abs(float(total) - expected) < 1e-12
        assert parts["ssim"] == 0.0 and parts["kld"] == 0.0 and parts["bce"] == 0.0

    def test_perfect_reconstruction_has_zero_ssim_term(self):
        x, _ = self._batch()
        cfg = LossConfig(lambda_=0.0, gamma=1, beta=0.0, batch_size=4)
        total, parts = composite_loss(x, x.clone(), _posterior(4), cfg)
        assert abs(parts["ssim"]) < 1e-9
        assert abs(float(total)) < 1e-9

    def test_breakdown_sums_to_total(self):
        x, y = self._batch(seed=7)
        cfg = LossConfig(lambda_=0.4, psi=3, gamma=4, beta=5.0, batch_size=4, base=16)
        total, parts = composite_loss(x, y, _posterior(4), cfg, epoch=0, total_epochs=4)
        recomposed = parts["l1"] + parts["ssim"] + parts["kld"] + parts["bce"]
        assert abs(recomposed - parts["total"]) / abs(parts["total"]) < 1e-6
        assert abs(float(total) - parts["total"]) < 1e-12
        assert parts["annealing"] == 1.0

    def test_annealing_scales_kld_term(self):
        x, y = self._batch()
        post = _posterior(4)
        cfg = LossConfig(lambda_=0.5, gamma=0, beta=10.0, anneal=True, batch_size=4)
        _, first = composite_loss(x, y, post, cfg, epoch=0, total_epochs=5)
        _, mid = composite_loss(x, y, post, cfg, epoch=2, total_epochs=5)
        _, last = composite_loss(x, y, post, cfg, epoch=4, total_epochs=5)
        assert first["annealing"] == 1.0 and last["annealing"] == 0.0
        assert abs(mid["kld"] - 0.5 * first["kld"]) < 1e-12
        assert last["kld"] == 0.0

    def test_gamma_batch_mode_is_sum_semantics(self):
        x, y = self._batch()
        mean_cfg = LossConfig(lambda_=0.0, gamma=1, beta=0.0, batch_size=4)
        sum_cfg = LossConfig(lambda_=0.0, gamma=4, beta=0.0, batch_size=4)
        _, mean_parts = composite_loss(x, y, _posterior(4), mean_cfg)
        _, sum_parts = composite_loss(x, y, _posterior(4), sum_cfg)
        assert abs(sum_parts["ssim"] - 4 * mean_parts["ssim"]) < 1e-12

    def test_bce_pairing_validation(self):
        x, y = self._batch()
        with_bce = LossConfig(gamma=0, bce_weight=1.0, batch_size=4)
        without = LossConfig(gamma=0, bce_weight=0.0, batch_size=4)
        probs = torch.full((4,), 0.7, dtype=torch.float64)
        labels = torch.tensor([1.0, 0.0, 1.0, 0.0], dtype=torch.float64)
        with pytest.raises(ValueError, match="requires"):
            composite_loss(x, y, _posterior(4), with_bce)
        with pytest.raises(ValueError, match="bce_weight is 0"):
            composite_loss(x, y, _posterior(4), without, mlp_probs=probs, labels=labels)
        total, parts = composite_loss(
            x, y, _posterior(4), with_bce, mlp_probs=probs, labels=labels
        )
        expected_bce = -np.mean([np.log(0.7), np.log(0.3), np.log(0.7), np.log(0.3)])
        assert abs(parts["bce"] - expected_bce / 16) < 1e-9

    def test_non_finite_term_is_named(self):
        x, y = self._batch()
        post = GaussianPosterior(
            mu=torch.full((4, 6), torch.nan, dtype=torch.float64),
            log_var=torch.zeros(4, 6, dtype=torch.float64),
        )
        with pytest.raises(ValueError, match="kld"):
            composite_loss(x, y, post, LossConfig(gamma=0, batch_size=4))

    def test_kld_batch_mismatch(self):
        x, y = self._batch()
        with pytest.raises(ValueError, match="rows"):
            composite_loss(x, y, _posterior(3), LossConfig(gamma=0, batch_size=4))

    def test_nonnegative_on_unit_images(self):
        for seed in range(5):
            x, y = self._batch(seed=seed)
            cfg = LossConfig(lambda_=0.3, gamma=1, beta=2.0, batch_size=4)
            total, _ = composite_loss(x, y, _posterior(4, seed=seed), cfg)
            assert float(total) >= 0.0


class TestGradientVsFiniteDifferences:
    """Analytic d(loss)/d(reconstruction) against central differences."""

    def _check(self, cfg, kind, epoch=0, total_epochs=4, with_bce=False):
        g = torch.Generator().manual_seed(42)
        x = torch.rand(3, 8, 8, generator=g, dtype=torch.float64)
        y0 = torch.rand(3, 8, 8, generator=g, dtype=torch.float64) * 0.8 + 0.1
        post = _posterior(3, kind=kind, seed=1)
        probs = torch.tensor([0.6, 0.4, 0.7], dtype=torch.float64) if with_bce else None
        labels = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64) if with_bce else None

        def value(y):
            total, _ = composite_loss(
                x, y, post, cfg, epoch=epoch, total_epochs=total_epochs,
                mlp_probs=probs, labels=labels,
            )
            return total

        y = y0.clone().requires_grad_(True)
        value(y).backward()
        analytic = y.grad.detach().numpy()

        rng = np.random.default_rng(3)
        idx = [tuple(rng.integers(0, s) for s in y0.shape) for _ in range(12)]
        h = 1e-5
        fd = np.zeros(len(idx))
        for j, pos in enumerate(idx):
            plus, minus = y0.clone(), y0.clone()
            plus[pos] += h
            minus[pos] -= h
            fd[j] = (float(value(plus)) - float(value(minus))) / (2 * h)
        ana = np.array([analytic[pos] for pos in idx])
        denom = max(float(np.abs(fd).max()), 1e-9)
        assert np.abs(ana - fd).max() / denom < 1e-2, (ana, fd)

    def test_gaussian_anneal_off(self):
        cfg = LossConfig(lambda_=0.4, psi=2, gamma=1, beta=3.0, base=8,
                         batch_size=3, latent_size=6, image_size=64)
        self._check(cfg, "gaussian")

    def test_gaussian_anneal_on(self):
        cfg = LossConfig(lambda_=0.4, gamma=1, beta=3.0, anneal=True, base=8,
                         batch_size=3, latent_size=6, image_size=64)
        self._check(cfg, "gaussian", epoch=1, total_epochs=4)

    def test_dirichlet_anneal_off(self):
        cfg = LossConfig(lambda_=0.6, gamma=1, beta=2.0, base=8,
                         batch_size=3, latent_size=6, image_size=64)
        self._check(cfg, "dirichlet")

    def test_dirichlet_anneal_on_with_bce(self):
        cfg = LossConfig(lambda_=0.6, gamma=1, beta=2.0, anneal=True, base=8,
                         batch_size=3, latent_size=6, image_size=64, bce_weight=1.0)
        self._check(cfg, "dirichlet", epoch=2, total_epochs=4, with_bce=True)
