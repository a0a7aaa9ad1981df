# weakprior_core/solver.py
"""Inverse-problem solvers on top of the DDIM generator, and reconstruction metrics.

solve_latent minimizes the fit-set MSE |A_fit G(z) - y_fit|^2 / |fit| over the
initial noise z with AdamSphere, watching the holdout MSE for early stopping.
dps_baseline runs the same DDIM loop with a guidance step after every update.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core_model import ImageGrid, RngHandle, vec64
from .ddim_generator import (DdimGenerator, hessian_product, ddim_step, generate, linearize,
                             tweedie_x0)
from .errors import InvalidArgumentError, NonFiniteLossError
from .forward_ops import LinearOperator, Observation
from .sphere_opt import (AdamSphereConfig, HoldoutConfig, adam_sphere_step, adam_step, holdout_split,
                         init_state, make_stopping_rule)

log = logging.getLogger(__name__)

METRICS = ("psnr", "ssim")
OPTIMIZERS = ("adam_sphere", "adam")
STOPPING = ("holdout_topk", "final")


@dataclass(frozen=True)
class SolveConfig:
    generator: DdimGenerator
    optimizer: AdamSphereConfig = field(default_factory=AdamSphereConfig)
    holdout: HoldoutConfig = field(default_factory=HoldoutConfig)
    iterations: int = 1000
    metrics: Tuple[str, ...] = METRICS
    optimizer_kind: str = "adam_sphere"
    stopping: str = "holdout_topk"
    shape: Optional[Tuple[int, int, int]] = None
    value_range: Tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgumentError(f"iterations must be >= 1, got {self.iterations}")
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise InvalidArgumentError(f"unknown metrics {sorted(unknown)}; valid: {', '.join(METRICS)}")
        if self.optimizer_kind not in OPTIMIZERS:
            raise InvalidArgumentError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer_kind!r}")
        if self.stopping not in STOPPING:
            raise InvalidArgumentError(f"stopping must be one of {STOPPING}, got {self.stopping!r}")


class TraceRow(NamedTuple):
    step: int
    fit_mse: float
    holdout_mse: float
    z_norm: float


@dataclass
class SolveResult:
    x_hat: np.ndarray
    selected_step: int
    trace: List[TraceRow]
    metrics: Dict[str, float]
    wall_time: float
    z: Optional[np.ndarray] = None


# ---------- Metrics ----------
def psnr(x_hat, x_ref, peak: float = 2.0) -> float:
    """10 log10(peak^2 / MSE); +inf for identical inputs."""
    x_hat, x_ref = np.asarray(x_hat, dtype=np.float64), np.asarray(x_ref, dtype=np.float64)
    if x_hat.shape != x_ref.shape:
        raise InvalidArgumentError(f"shape mismatch {x_hat.shape} vs {x_ref.shape}")
    mse = float(np.mean((x_hat - x_ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _as_image(x) -> np.ndarray:
    if isinstance(x, ImageGrid):
        return x.as_array()
    arr = np.asarray(x, dtype=np.float64)
    return arr[:, :, None] if arr.ndim == 2 else arr


def ssim(x_hat, x_ref, peak: float = 2.0, window: int = 8) -> float:
    """Single-scale SSIM over all stride-1 square windows, averaged over windows and channels."""
    a, b = _as_image(x_hat), _as_image(x_ref)
    if a.shape != b.shape or a.ndim != 3:
        raise InvalidArgumentError(f"ssim needs equal (h, w, c) shapes, got {a.shape} and {b.shape}")
    win = min(window, a.shape[0], a.shape[1])
    ddof = 1 if win * win > 1 else 0
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    wa = sliding_window_view(a, (win, win), axis=(0, 1))
    wb = sliding_window_view(b, (win, win), axis=(0, 1))
    mu_a, mu_b = wa.mean(axis=(-2, -1)), wb.mean(axis=(-2, -1))
    da, db = wa - mu_a[..., None, None], wb - mu_b[..., None, None]
    norm = win * win - ddof
    var_a = (da * da).sum(axis=(-2, -1)) / norm
    var_b = (db * db).sum(axis=(-2, -1)) / norm
    cov = (da * db).sum(axis=(-2, -1)) / norm
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def compute_metrics(names: Sequence[str], x_hat: np.ndarray, x_true: np.ndarray,
                    shape=None, value_range=(-1.0, 1.0)) -> Dict[str, float]:
    peak = float(value_range[1] - value_range[0])
    x_clip = np.clip(x_hat, value_range[0], value_range[1])
    out = {}
    for name in names:
        if name == "psnr":
            out["psnr"] = psnr(x_clip, x_true, peak)
        elif name == "ssim":
            if shape is None:
                raise InvalidArgumentError("ssim needs an image shape")
            out["ssim"] = ssim(x_clip.reshape(shape), np.asarray(x_true).reshape(shape), peak)
    return out


# ---------- Latent optimization ----------
def fit_loss_and_grad(gen: DdimGenerator, a_fit: LinearOperator, y_fit: np.ndarray, z: np.ndarray):
    """(G(z), mean squared fit residual, its gradient in z)."""
    x, pullback = linearize(gen, z)
    resid = a_fit.apply(x) - y_fit
    loss = float(np.mean(resid * resid))
    grad = pullback(a_fit.adjoint(resid)) * (2.0 / resid.size)
    return x, loss, grad


def _holdout_mse(a_ho: Optional[LinearOperator], y_ho: Optional[np.ndarray], x: np.ndarray) -> float:
    if a_ho is None:
        return math.nan
    r = a_ho.apply(x) - y_ho
    return float(np.mean(r * r))


def solve_latent(config: SolveConfig, obs: Observation, rng: RngHandle,
                 x_true: Optional[np.ndarray] = None) -> SolveResult:
    """Optimize the initial noise of G; metrics are filled only when x_true is given.

    Rows of y are split into fit and holdout sets (for masks these are the
    observed pixels). With stopping="final" every row is fitted and the last
    iterate is returned.
    """
    gen = config.generator
    if obs.operator.n != gen.n:
        raise InvalidArgumentError(f"operator input dimension {obs.operator.n} != generator dimension {gen.n}")
    t0 = time.perf_counter()
    rows = np.arange(obs.m)
    if config.stopping == "holdout_topk":
        fit_rows, ho_rows = holdout_split(rows, config.holdout)
        a_ho, y_ho = obs.operator.rows(ho_rows), obs.y[ho_rows]
    else:
        fit_rows, a_ho, y_ho = rows, None, None
    a_fit = obs.operator.rows(fit_rows) if fit_rows.size < obs.m else obs.operator
    y_fit = obs.y[fit_rows]

    state = init_state(rng.normal(gen.n), config.optimizer)
    step_fn = adam_sphere_step if config.optimizer_kind == "adam_sphere" else adam_step
    rule = make_stopping_rule(config.stopping, config.holdout, rng)
    trace: List[TraceRow] = []
    for it in range(config.iterations + 1):
        x, loss, grad = fit_loss_and_grad(gen, a_fit, y_fit, state.z)
        z_norm = float(np.linalg.norm(state.z))
        if not math.isfinite(loss):
            raise NonFiniteLossError(it, z_norm, loss)
        ho = _holdout_mse(a_ho, y_ho, x)
        trace.append(TraceRow(it, loss, ho, z_norm))
        rule.observe(it, ho, state.z)
        if it < config.iterations:
            state = step_fn(state, config.optimizer, grad)

    z_sel, step_sel = rule.select()
    x_hat = generate(gen, z_sel)
    metrics = {}
    if x_true is not None:
        metrics = compute_metrics(config.metrics, x_hat, vec64(x_true, "x_true"), config.shape, config.value_range)
    wall = time.perf_counter() - t0
    log.debug("solve_latent: selected step %d of %d (fit %.3g)", step_sel, config.iterations, trace[step_sel].fit_mse)
    return SolveResult(x_hat, int(step_sel), trace, metrics, wall, z_sel)


# ---------- DPS baseline ----------
def dps_baseline(generator: DdimGenerator, obs: Observation, zeta: float, rng: RngHandle,
                 x_true: Optional[np.ndarray] = None, metrics: Sequence[str] = METRICS,
                 shape=None, value_range=(-1.0, 1.0)) -> SolveResult:
    """DDIM loop with guidance x <- x - zeta grad_x |y - A x0(x)| after every step.

    The gradient runs through the analytic Tweedie estimate
    x0 = (x + (1 - abar) score(x)) / sqrt(abar). zeta = 0 reproduces generate(z).
    """
    if zeta < 0:
        raise InvalidArgumentError(f"guidance scale must be >= 0, got {zeta}")
    t0 = time.perf_counter()
    op = obs.operator
    prior = generator.data_prior
    x = rng.normal(generator.n)
    trace: List[TraceRow] = []
    for i, (ab, ab_next) in enumerate(generator.levels()):
        x_next, terms = ddim_step(prior, x, ab, ab_next)
        x0 = tweedie_x0(x, terms[3], ab)
        resid = obs.y - op.apply(x0)
        rn = float(np.linalg.norm(resid))
        if not math.isfinite(rn):
            raise NonFiniteLossError(i, float(np.linalg.norm(x)), rn)
        if zeta > 0 and rn > 0:
            w = -op.adjoint(resid) / rn
            grad = (w + (1.0 - ab) * hessian_product(terms, w)) / math.sqrt(ab)
            x_next = x_next - zeta * grad
        trace.append(TraceRow(i, rn * rn / obs.m, math.nan, float(np.linalg.norm(x))))
        x = x_next
    out = {}
    if x_true is not None:
        out = compute_metrics(metrics, x, vec64(x_true, "x_true"), shape, value_range)
    return SolveResult(x, len(trace), trace, out, time.perf_counter() - t0)
