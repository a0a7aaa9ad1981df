import math

import numpy as np
import pytest

from weakprior_core import solver
from weakprior_core.core_model import ImageGrid, RngHandle
from weakprior_core.ddim_generator import DdimGenerator, NoiseSchedule, generate
from weakprior_core.errors import InvalidArgumentError, NonFiniteLossError
from weakprior_core.forward_ops import CoordinateMask, Dense, Observation, identity, observe
from weakprior_core.mixture_posterior import GaussianMixturePrior, exact_posterior
from weakprior_core.solver import (SolveConfig, compute_metrics, dps_baseline, fit_loss_and_grad, psnr,
                                   solve_latent, ssim)
from weakprior_core.sphere_opt import AdamSphereConfig, HoldoutConfig


def _single_gaussian(n=8, tau=0.3, seed=0):
    mean = RngHandle(seed).uniform(n) - 0.5
    return GaussianMixturePrior.create([1.0], mean[None, :], tau ** 2)


def _generator(prior, k=3):
    return DdimGenerator(NoiseSchedule.linear(1000), prior, k)


class TestMetrics:
    def test_psnr_value(self):
        x = np.zeros(100)
        assert psnr(x + 0.1, x) == pytest.approx(10 * math.log10(4 / 0.01))

    def test_psnr_identical_is_infinite(self):
        assert psnr(np.ones(4), np.ones(4)) == math.inf

    def test_psnr_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            psnr(np.zeros(3), np.zeros(4))

    def test_ssim_identical_is_one(self, rng):
        img = rng.uniform((16, 16, 3)) * 2 - 1
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_ssim_symmetric_and_bounded(self, rng):
        a, b = rng.uniform((12, 12, 3)), rng.uniform((12, 12, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)
        assert -1.0 <= ssim(a, b) < 1.0

    def test_ssim_accepts_grids_and_small_images(self, rng):
        g = ImageGrid.from_array(rng.uniform((4, 4, 1)))
        assert ssim(g, g) == pytest.approx(1.0)
        assert ssim(np.zeros((4, 4)), np.zeros((4, 4))) == pytest.approx(1.0)

    def test_ssim_drops_with_noise(self, rng):
        img = rng.uniform((16, 16, 3)) * 2 - 1
        assert ssim(img + 0.3 * rng.normal((16, 16, 3)), img) < ssim(img + 0.05 * rng.normal((16, 16, 3)), img)

    def test_compute_metrics_clips_estimate(self):
        x_true = np.full(12, 1.0)
        out = compute_metrics(["psnr", "ssim"], np.full(12, 5.0), x_true, (2, 2, 3))
        assert out["psnr"] == math.inf
        assert out["ssim"] == pytest.approx(1.0)

    def test_ssim_needs_shape(self):
        with pytest.raises(InvalidArgumentError):
            compute_metrics(["ssim"], np.zeros(4), np.zeros(4))


class TestFitGradient:
    def test_matches_finite_differences(self, rng):
        prior = GaussianMixturePrior.create([0.6, 0.4], rng.uniform((2, 6)) - 0.5, 0.05)
        gen = _generator(prior)
        op = Dense(rng.normal((4, 6)))
        y = rng.normal(4)
        z, h = rng.normal(6), rng.normal(6)
        _, _, grad = fit_loss_and_grad(gen, op, y, z)
        eps = 1e-6
        lp = fit_loss_and_grad(gen, op, y, z + eps * h)[1]
        lm = fit_loss_and_grad(gen, op, y, z - eps * h)[1]
        assert grad @ h == pytest.approx((lp - lm) / (2 * eps), rel=1e-6)


class TestSolveLatent:
    def _noiseless(self, seed=3):
        prior = _single_gaussian()
        gen = _generator(prior)
        rng = RngHandle(seed)
        z_star = rng.normal(8)
        x_star = generate(gen, z_star)
        op = Dense(np.vstack([np.eye(8)] * 3))
        return gen, z_star, x_star, Observation(op.apply(x_star), op, 0.0)

    def test_recovers_noiseless_signal(self):
        gen, z_star, x_star, obs = self._noiseless()
        config = SolveConfig(gen, AdamSphereConfig(lr=0.05, radius=float(np.linalg.norm(z_star))),
                             HoldoutConfig(fraction=0.1), iterations=1000, metrics=("psnr",))
        res = solve_latent(config, obs, RngHandle(4), x_star)
        np.testing.assert_allclose(res.x_hat, x_star, atol=1e-3)
        assert res.metrics["psnr"] > 50

    def test_trace_and_selection(self):
        gen, _, x_star, obs = self._noiseless()
        config = SolveConfig(gen, iterations=50, metrics=("psnr",))
        res = solve_latent(config, obs, RngHandle(4), x_star)
        assert len(res.trace) == 51
        assert [row.step for row in res.trace] == list(range(51))
        assert 0 <= res.selected_step <= 50
        assert all(math.isfinite(row.holdout_mse) for row in res.trace)

    def test_final_stopping_uses_last_iterate(self):
        gen, _, _, obs = self._noiseless()
        res = solve_latent(SolveConfig(gen, iterations=20, stopping="final"), obs, RngHandle(4))
        assert res.selected_step == 20
        assert math.isnan(res.trace[0].holdout_mse)
        assert res.metrics == {}

    def test_plain_adam_runs(self):
        gen, _, x_star, obs = self._noiseless()
        res = solve_latent(SolveConfig(gen, iterations=20, optimizer_kind="adam", metrics=("psnr",)),
                           obs, RngHandle(4), x_star)
        assert math.isfinite(res.metrics["psnr"])

    def test_same_seed_same_result(self):
        gen, _, _, obs = self._noiseless()
        cfg = SolveConfig(gen, iterations=30)
        a = solve_latent(cfg, obs, RngHandle(9))
        b = solve_latent(cfg, obs, RngHandle(9))
        np.testing.assert_array_equal(a.x_hat, b.x_hat)

    def test_non_finite_loss(self, monkeypatch):
        gen, _, _, obs = self._noiseless()
        monkeypatch.setattr(solver, "fit_loss_and_grad", lambda g, a, y, z: (z, math.nan, z))
        with pytest.raises(NonFiniteLossError) as exc:
            solve_latent(SolveConfig(gen, iterations=5), obs, RngHandle(1))
        assert exc.value.step == 0

    def test_dimension_mismatch(self):
        gen = _generator(_single_gaussian(n=8))
        obs = Observation(np.zeros(3), CoordinateMask([0, 1, 2], 9), 0.1)
        with pytest.raises(InvalidArgumentError):
            solve_latent(SolveConfig(gen), obs, RngHandle(0))

    def test_config_validation(self):
        gen = _generator(_single_gaussian())
        with pytest.raises(InvalidArgumentError):
            SolveConfig(gen, iterations=0)
        with pytest.raises(InvalidArgumentError):
            SolveConfig(gen, optimizer_kind="sgd")
        with pytest.raises(InvalidArgumentError):
            SolveConfig(gen, metrics=("lpips",))


class TestDps:
    def test_zero_guidance_is_plain_generation(self):
        prior = _single_gaussian()
        gen = _generator(prior, 10)
        obs = observe(identity(8), prior.means[0], 0.1, RngHandle(1))
        res = dps_baseline(gen, obs, 0.0, RngHandle(5), metrics=())
        np.testing.assert_array_equal(res.x_hat, generate(gen, RngHandle(5).normal(8)))

    def test_negative_guidance_rejected(self):
        prior = _single_gaussian()
        obs = observe(identity(8), prior.means[0], 0.1, RngHandle(1))
        with pytest.raises(InvalidArgumentError):
            dps_baseline(_generator(prior), obs, -1.0, RngHandle(0))

    def test_more_steps_approach_posterior_mean(self):
        prior = _single_gaussian(n=8, tau=0.5, seed=7)
        dist = {}
        for steps in (5, 20, 100):
            gen = _generator(prior, steps)
            total = 0.0
            for world in RngHandle(31).split(8):
                x_star = prior.means[0] + 0.5 * world.normal(8)
                obs = observe(identity(8), x_star, 0.01, world)
                target = exact_posterior(prior, obs).mean()
                res = dps_baseline(gen, obs, 0.1, world, metrics=())
                total += float(np.linalg.norm(res.x_hat - target))
            dist[steps] = total / 8
        assert dist[5] > dist[20] > dist[100]
