import json

import numpy as np
import pytest

import app_cli
from weakprior_core.core_model import ImageGrid, RngHandle, save_image, save_vector
from weakprior_core.ddim_generator import DdimGenerator, NoiseSchedule
from weakprior_core.experiments import run_bench, run_collapse_sweep, run_failure_sweep, run_solve
from weakprior_core.forward_ops import make_random_mask, null_space_part, observe
from weakprior_core.solver import SolveConfig, psnr, solve_latent
from weakprior_core.sphere_opt import AdamSphereConfig, HoldoutConfig
from weakprior_core.worlds import make_image_world, sample_world

SHAPE = (16, 16, 3)


def _config(subcommand, **overrides):
    cfg = app_cli.load_config(subcommand)
    cfg.update(overrides)
    return cfg


class TestFailureSweep:
    @pytest.fixture(scope="class")
    def summary(self):
        cfg = _config("failure-sweep", worlds=4, iterations=200, dps=False, gap_trials=4)
        return run_failure_sweep(cfg, RngHandle(0)).summary

    def test_box_gap_grows_with_box(self, summary):
        assert summary["box_gap_spearman"] >= 0.8

    def test_coarser_sr_hurts_more(self, summary):
        gaps = summary["sr_gaps"]
        assert gaps["x16-analog"] > gaps["x4-analog"]
        assert summary["sr_sensitivity_increasing"]

    def test_score_gap_shrinks_with_box(self, summary):
        assert summary["box_delta_non_increasing"]

    def test_simulated_solve_with_hidden_shift_prior(self):
        cfg = _config("solve", prior="hidden_shift", iterations=5)
        cfg["observation"] = None
        out = run_solve(cfg, RngHandle(1))
        assert set(out.summary["metrics"]) == {"psnr", "ssim"}


class TestSolveFromFiles:
    def _files(self, tmp_path, n=16):
        rng = RngHandle(2)
        means = np.stack([np.full(n, -0.5), np.full(n, 0.5)])
        x = (means[1] + 0.05 * rng.normal(n)).astype(np.float32).astype(np.float64)
        save_vector(tmp_path / "y.wpv", x + 0.01 * rng.normal(n))
        save_image(tmp_path / "x.wpl", ImageGrid(2, 4, 2, x))
        return {
            "observation": {"y_file": "y.wpv", "operator": {"kind": "identity", "n": n}, "sigma": 0.01,
                            "x_true_file": "x.wpl"},
            "generator": {"prior": {"weights": [0.5, 0.5], "means": means.tolist(), "tau2": 0.0025},
                          "T": 1000, "k": 3, "schedule": "linear"},
        }

    def test_non_image_dimension_reports_psnr_only(self, tmp_path):
        cfg = _config("solve", iterations=40, **self._files(tmp_path))
        out = run_solve(cfg, RngHandle(3), base_dir=str(tmp_path))
        assert list(out.summary["metrics"]) == ["psnr"]
        assert "x_hat.wpv" in out.vectors
        assert not out.images
        json.dumps(out.summary)


class TestInpaintingBaseline:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matched_solve_beats_mean_fill(self, seed):
        rng = RngHandle(seed)
        prior = make_image_world(SHAPE, 4, 0.1, rng, separation=0.05)
        images, _ = sample_world(prior, rng, 1)
        x = images[0]
        op = make_random_mask(SHAPE, 0.3, rng)
        obs = observe(op, x, 0.01, rng)
        gen = DdimGenerator(NoiseSchedule.linear(1000), prior, 3)
        config = SolveConfig(gen, AdamSphereConfig(lr=0.02), HoldoutConfig(fraction=0.1, k=5), 300, shape=SHAPE)
        solved = solve_latent(config, obs, rng, x).metrics["psnr"]
        fill = op.adjoint(obs.y) + null_space_part(op, np.full(op.n, float(obs.y.mean())))
        assert solved >= psnr(fill, x) + 3.0


class TestBench:
    def test_reweighting_barely_matters(self):
        cfg = _config("bench", worlds=20, priors=["matched", "mismatched"])
        cfg["tasks"] = {"inpaint": cfg["tasks"]["inpaint"]}
        rows = run_bench(cfg, RngHandle(4)).summary["robustness"]
        assert [r["task"] for r in rows] == ["inpaint"]
        assert rows[0]["same_mode_rate"] >= 0.95
        assert rows[0]["median_psnr_diff"] <= 2.0


class TestCollapseSweep:
    def test_log_mass_falls_at_the_predicted_rate(self):
        cfg = _config("collapse-sweep", repeats=16, instances=2000)
        summary = run_collapse_sweep(cfg, RngHandle(5)).summary
        assert summary["delta_theory"] == pytest.approx(0.25)
        assert summary["fitted_slope"] < 0
        assert summary["slope_rel_error"] <= 0.15
        assert summary["sweep_violations"] == 0
        assert summary["instance_violations"] == 0
        assert summary["identifiable_instances"] > 0
