import time

import numpy as np
import pytest
from scipy.stats import ncx2, norm

import app_cli
from weakprior_core.consistency import (ball_mass, consistency_sweep, default_ball_radius, gaussian_ball_mass)
from weakprior_core.core_model import RngHandle
from weakprior_core.errors import InvalidArgumentError
from weakprior_core.experiments import run_consistency
from weakprior_core.forward_ops import identity
from weakprior_core.mixture_posterior import GaussianMixturePrior, prior_as_mixture


def _mc_mass(mean, cov, center, radius, count=400_000, seed=0):
    draws = mean + RngHandle(seed).normal((count, mean.size)) @ np.linalg.cholesky(cov).T
    return float(np.mean(np.sum((draws - center) ** 2, axis=1) <= radius * radius))


class TestGaussianBallMass:
    def test_isotropic_is_noncentral_chi2(self):
        mean, center = np.array([0.3, -0.4, 0.1]), np.zeros(3)
        got = gaussian_ball_mass(mean, 0.25 * np.eye(3), center, 1.2)
        assert got == pytest.approx(ncx2.cdf(1.44 / 0.25, df=3, nc=0.26 / 0.25), rel=1e-12)

    def test_one_dimension(self):
        got = gaussian_ball_mass(np.array([0.5]), np.array([[4.0]]), np.array([0.0]), 1.0)
        assert got == pytest.approx(norm.cdf(0.25) - norm.cdf(-0.75), rel=1e-8)

    @pytest.mark.parametrize("mean, cov", [
        ([0.3, -0.2], [[0.5, 0.2], [0.2, 0.3]]),
        ([0.1, 0.0, -0.3], [[0.4, 0.1, 0.0], [0.1, 0.2, 0.05], [0.0, 0.05, 0.6]]),
    ])
    def test_anisotropic_matches_monte_carlo(self, mean, cov):
        mean, cov = np.array(mean), np.array(cov)
        center = np.zeros(mean.size)
        assert gaussian_ball_mass(mean, cov, center, 1.0) == pytest.approx(_mc_mass(mean, cov, center, 1.0),
                                                                          abs=0.005)

    def test_degenerate_covariance(self):
        assert gaussian_ball_mass(np.array([0.1, 0.1]), np.zeros((2, 2)), np.zeros(2), 0.5) == 1.0
        assert gaussian_ball_mass(np.array([1.0, 1.0]), np.zeros((2, 2)), np.zeros(2), 0.5) == 0.0


class TestBallMass:
    def test_exact_path_has_zero_error(self):
        prior = GaussianMixturePrior.create([0.5, 0.5], [[0.0, 0.0], [2.0, 0.0]], 0.2)
        mass, se = ball_mass(prior_as_mixture(prior), [0.0, 0.0], 0.8)
        assert se == 0.0
        want = 0.5 * ncx2.cdf(0.64 / 0.2, df=2, nc=0.0) + 0.5 * ncx2.cdf(0.64 / 0.2, df=2, nc=4.0 / 0.2)
        assert mass == pytest.approx(want, rel=1e-8)

    def test_monte_carlo_path_close_to_exact(self):
        prior = GaussianMixturePrior.create([1.0], [np.full(5, 0.2)], 0.3)
        mass, se = ball_mass(prior_as_mixture(prior), np.zeros(5), 1.5, RngHandle(3), samples=100_000)
        exact = ncx2.cdf(2.25 / 0.3, df=5, nc=0.2 / 0.3)
        assert se > 0
        assert abs(mass - exact) <= 4 * se

    def test_radius_must_be_positive(self):
        prior = GaussianMixturePrior.create([1.0], [[0.0]], 1.0)
        with pytest.raises(InvalidArgumentError):
            ball_mass(prior_as_mixture(prior), [0.0], 0.0)

    def test_default_radius(self):
        a = GaussianMixturePrior.create([0.5, 0.5], [[0.0, 0.0], [3.0, 4.0]], 1.0)
        b = GaussianMixturePrior.create([0.5, 0.5], [[0.0, 0.0], [0.0, 2.0]], 1.0)
        assert default_ball_radius(a, b) == pytest.approx(1.0)
        with pytest.raises(InvalidArgumentError):
            default_ball_radius(GaussianMixturePrior.create([1.0], [[0.0, 0.0]], 1.0))


class TestConsistencySweep:
    def _priors(self):
        prior_a = GaussianMixturePrior.create([0.6, 0.4], [[0.0, 0.0], [1.0, 1.0]], 0.09)
        prior_b = GaussianMixturePrior.create([0.5, 0.5], [[-1.0, 0.5], [0.5, -1.0]], 0.25)
        return prior_a, prior_b

    def test_mass_concentrates_under_both_priors(self):
        prior_a, prior_b = self._priors()
        rows = consistency_sweep(prior_a, prior_b, [0.05, -0.05], identity(2), 0.5, [0, 1, 10, 400], None,
                                 RngHandle(4), replicates=4)
        assert [r.N for r in rows] == [0, 1, 10, 400]
        assert rows[-1].mass_a >= 0.99
        assert rows[-1].mass_b >= 0.99
        assert rows[-1].mass_a > rows[0].mass_a
        assert rows[-1].mass_b > rows[0].mass_b

    def test_zero_measurements_give_prior_mass(self):
        prior_a, prior_b = self._priors()
        x_star = np.array([0.05, -0.05])
        radius = default_ball_radius(prior_a, prior_b)
        rows = consistency_sweep(prior_a, prior_b, x_star, identity(2), 0.5, [0, 5], None, RngHandle(5),
                                 replicates=3)
        assert rows[0].mass_a == pytest.approx(ball_mass(prior_as_mixture(prior_a), x_star, radius)[0], rel=1e-12)
        assert rows[0].mass_b == pytest.approx(ball_mass(prior_as_mixture(prior_b), x_star, radius)[0], rel=1e-12)
        assert rows[0].se_a == pytest.approx(0.0, abs=1e-12)

    def test_same_seed_same_rows(self):
        prior_a, prior_b = self._priors()
        args = (prior_a, prior_b, [0.0, 0.0], identity(2), 0.5, [1, 4], 0.5)
        assert consistency_sweep(*args, RngHandle(6), replicates=2) == consistency_sweep(*args, RngHandle(6),
                                                                                          replicates=2)

    def test_validation(self):
        prior_a, prior_b = self._priors()
        with pytest.raises(InvalidArgumentError):
            consistency_sweep(prior_a, prior_b, [0.0, 0.0], identity(2), 0.5, [4, 2], None, RngHandle(0))
        with pytest.raises(InvalidArgumentError):
            consistency_sweep(prior_a, prior_b, [0.0, 0.0], identity(2), 0.5, [1], None, RngHandle(0), replicates=0)
        other = GaussianMixturePrior.create([1.0], [[0.0, 0.0, 0.0]], 1.0)
        with pytest.raises(InvalidArgumentError):
            consistency_sweep(prior_a, other, [0.0, 0.0], identity(2), 0.5, [1], 1.0, RngHandle(0))


class TestQuadratureAccuracy:
    @pytest.mark.parametrize("n, scale, shift", [(2, 0.25, 0.3), (3, 0.25, 0.3), (2, 1e-4, 0.01), (3, 4.0, 2.0)])
    def test_nearly_isotropic_matches_noncentral_chi2(self, n, scale, shift):
        cov = scale * (np.eye(n) + 1e-9 * np.diag(np.arange(n)))
        mean, center = np.full(n, shift), np.zeros(n)
        want = ncx2.cdf(1.0 / scale, df=n, nc=n * shift * shift / scale)
        assert gaussian_ball_mass(mean, cov, center, 1.0) == pytest.approx(want, rel=1e-6, abs=1e-10)

    def test_ball_far_from_a_tight_component(self):
        cov = np.diag([1e-6, 2e-6])
        assert gaussian_ball_mass(np.array([3.0, 0.0]), cov, np.zeros(2), 1.0) == pytest.approx(0.0, abs=1e-12)
        assert gaussian_ball_mass(np.array([0.2, 0.0]), cov, np.zeros(2), 1.0) == pytest.approx(1.0, abs=1e-12)


class TestConsistencyPreset:
    def test_preset_runs_quickly_and_concentrates(self):
        start = time.perf_counter()
        out = run_consistency(app_cli.load_config("consistency"), RngHandle(0))
        assert time.perf_counter() - start < 30.0
        assert out.summary["final_mass_a"] >= 0.99
        assert out.summary["final_mass_b"] >= 0.99
        assert out.summary["monotone_a"] and out.summary["monotone_b"]
