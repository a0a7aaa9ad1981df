# weakprior_core/ddim_generator.py
"""A k-step deterministic DDIM sampler driven by the analytic score of a Gaussian mixture.

The diffused marginal of the mixture at noise level abar is
    p_t(x) = sum_j w_j N(x; sqrt(abar) mu_j, v_j I),  v_j = abar tau_j^2 + 1 - abar,
so the score and its Jacobian are closed form and G(z) is differentiable exactly.

Each DDIM step is x' = a x + b score(x) with scalar coefficients, so
pullbacks compose as g <- a g + b H g with H the (symmetric) score Jacobian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy.special import logsumexp

from .core_model import RngHandle, check_length, vec64
from .errors import InvalidArgumentError
from .mixture_posterior import GaussianMixturePrior


# ---------- Noise schedules ----------
@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """alpha_bar[t] for t = 0..T with alpha_bar[0] = 1, strictly decreasing."""
    alpha_bar: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 2 or ab[0] != 1.0:
            raise InvalidArgumentError("alpha_bar must start at 1 and cover t = 0..T")
        if np.any(np.diff(ab) >= 0) or ab[-1] <= 0:
            raise InvalidArgumentError("alpha_bar must decrease strictly and stay positive")
        ab.flags.writeable = False
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, T)
        return cls(np.concatenate([[1.0], np.cumprod(1.0 - betas)]), "linear")

    @classmethod
    def cosine(cls, T: int = 1000, s: float = 0.008) -> "NoiseSchedule":
        t = np.arange(T + 1) / T
        f = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 1e-8, 0.999)
        return cls(np.concatenate([[1.0], np.cumprod(1.0 - betas)]), "cosine")

    @classmethod
    def build(cls, kind: str = "linear", T: int = 1000) -> "NoiseSchedule":
        if kind == "linear":
            return cls.linear(T)
        if kind == "cosine":
            return cls.cosine(T)
        raise InvalidArgumentError(f"unknown schedule {kind!r}; valid: linear, cosine")

    def steps(self, k: int) -> np.ndarray:
        """Inference subsequence t_1 = T > ... > t_k >= 1, evenly spaced."""
        if not 1 <= k <= self.T:
            raise InvalidArgumentError(f"step count must be in [1, {self.T}], got {k}")
        return np.rint(np.linspace(self.T, 1, k)).astype(np.int64)

    def __getitem__(self, t: int) -> float:
        return float(self.alpha_bar[t])


# ---------- Analytic score ----------
def _score_terms(prior: GaussianMixturePrior, x: np.ndarray, ab: float):
    """Responsibilities r, scaled offsets u_j = (sqrt(ab) mu_j - x) / v_j, variances v and the score."""
    v = ab * prior.tau2 + (1.0 - ab)
    diff = math.sqrt(ab) * prior.means - x[..., None, :]
    logr = prior.log_weights - 0.5 * np.sum(diff * diff, axis=-1) / v - 0.5 * prior.n * np.log(v)
    r = np.exp(logr - logsumexp(logr, axis=-1, keepdims=True))
    u = diff / v[:, None]
    s = np.einsum("...j,...jn->...n", r, u)
    return r, u, v, s


def mixture_score(prior: GaussianMixturePrior, x: np.ndarray, ab: float) -> np.ndarray:
    """grad log p_t(x) at noise level abar = ab; x may carry a leading batch axis."""
    return _score_terms(prior, np.asarray(x, dtype=np.float64), ab)[3]


def mixture_log_density(prior: GaussianMixturePrior, x: np.ndarray, ab: float) -> float:
    v = ab * prior.tau2 + (1.0 - ab)
    diff = math.sqrt(ab) * prior.means - np.asarray(x, dtype=np.float64)
    terms = (prior.log_weights - 0.5 * np.sum(diff * diff, axis=-1) / v
             - 0.5 * prior.n * np.log(2.0 * math.pi * v))
    return float(logsumexp(terms))


def hessian_product(terms, g: np.ndarray) -> np.ndarray:
    """Score Jacobian times g: -(sum r_j / v_j) g + sum r_j u_j (u_j . g) - s (s . g)."""
    r, u, v, s = terms
    return -float(np.sum(r / v)) * g + (r * (u @ g)) @ u - s * float(s @ g)


def score_hessian_product(prior: GaussianMixturePrior, x: np.ndarray, ab: float, g: np.ndarray) -> np.ndarray:
    return hessian_product(_score_terms(prior, np.asarray(x, dtype=np.float64), ab), np.asarray(g, dtype=np.float64))


def ddim_coefficients(ab: float, ab_next: float) -> Tuple[float, float]:
    """x_next = a x + b score(x); ab_next = 1 is the final map to the Tweedie estimate."""
    ratio = math.sqrt(ab_next / ab)
    return ratio, ratio * (1.0 - ab) - math.sqrt((1.0 - ab_next) * (1.0 - ab))


def tweedie_x0(x: np.ndarray, score: np.ndarray, ab: float) -> np.ndarray:
    return (x + (1.0 - ab) * score) / math.sqrt(ab)


# ---------- Generator ----------
@dataclass(frozen=True, eq=False)
class DdimGenerator:
    schedule: NoiseSchedule
    data_prior: GaussianMixturePrior
    k: int = 3

    def __post_init__(self):
        object.__setattr__(self, "_steps", self.schedule.steps(int(self.k)))

    @property
    def n(self) -> int:
        return self.data_prior.n

    @property
    def timesteps(self) -> np.ndarray:
        return self._steps

    def levels(self) -> List[Tuple[float, float]]:
        """(abar_t, abar_next) for every step; the last pair ends at abar_0 = 1."""
        abs_ = [self.schedule[int(t)] for t in self._steps] + [1.0]
        return list(zip(abs_[:-1], abs_[1:]))

    def with_prior(self, prior: GaussianMixturePrior) -> "DdimGenerator":
        return DdimGenerator(self.schedule, prior, self.k)

    def with_steps(self, k: int) -> "DdimGenerator":
        return DdimGenerator(self.schedule, self.data_prior, k)

    def descriptor(self, means_file) -> Dict:
        return {"T": self.schedule.T, "k": int(self.k), "schedule": self.schedule.kind,
                "prior": self.data_prior.descriptor(means_file)}

    @classmethod
    def from_descriptor(cls, desc: Dict, base_dir=".") -> "DdimGenerator":
        try:
            schedule = NoiseSchedule.build(desc.get("schedule", "linear"), int(desc.get("T", 1000)))
            prior = GaussianMixturePrior.from_descriptor(desc["prior"], base_dir)
        except KeyError as e:
            raise InvalidArgumentError(f"generator descriptor is missing key {e}") from None
        return cls(schedule, prior, int(desc.get("k", 3)))


def analytic_score(gen: DdimGenerator, x, t: int) -> np.ndarray:
    if not 0 <= t <= gen.schedule.T:
        raise InvalidArgumentError(f"t must be in [0, {gen.schedule.T}], got {t}")
    x = check_length(vec64(x, "x"), gen.n, "x")
    return mixture_score(gen.data_prior, x, gen.schedule[t])


def ddim_step(prior: GaussianMixturePrior, x: np.ndarray, ab: float, ab_next: float):
    """One deterministic step; returns the new state and the score terms at x."""
    terms = _score_terms(prior, x, ab)
    a, b = ddim_coefficients(ab, ab_next)
    return a * x + b * terms[3], terms


def _forward(gen: DdimGenerator, z: np.ndarray):
    x = z
    cache = []
    for ab, ab_next in gen.levels():
        x_next, terms = ddim_step(gen.data_prior, x, ab, ab_next)
        cache.append((terms, ddim_coefficients(ab, ab_next)))
        x = x_next
    return x, cache


def _check_z(gen: DdimGenerator, z) -> np.ndarray:
    return check_length(vec64(z, "z"), gen.n, "z")


def generate(gen: DdimGenerator, z) -> np.ndarray:
    """G(z): x_{t_1} = z, k DDIM steps, final step to the Tweedie estimate. Accepts (B, n) batches."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = _check_z(gen, z)
    else:
        check_length(z, gen.n, "z")
    x = z
    for ab, ab_next in gen.levels():
        x = ddim_step(gen.data_prior, x, ab, ab_next)[0]
    return x


def linearize(gen: DdimGenerator, z) -> Tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """G(z) and a pullback cotangent -> (dG/dz)^T cotangent sharing one forward pass."""
    x, cache = _forward(gen, _check_z(gen, z))

    def pullback(cotangent) -> np.ndarray:
        g = check_length(np.asarray(cotangent, dtype=np.float64), gen.n, "cotangent")
        for terms, (a, b) in reversed(cache):
            g = a * g + b * hessian_product(terms, g)
        return g

    return x, pullback


def generate_vjp(gen: DdimGenerator, z, cotangent) -> np.ndarray:
    return linearize(gen, z)[1](cotangent)


def generate_jvp(gen: DdimGenerator, z, tangent) -> np.ndarray:
    _, cache = _forward(gen, _check_z(gen, z))
    h = check_length(np.asarray(tangent, dtype=np.float64), gen.n, "tangent")
    for terms, (a, b) in cache:
        h = a * h + b * hessian_product(terms, h)
    return h


def sample_prior(gen: DdimGenerator, rng: RngHandle, count: int) -> np.ndarray:
    """(count, n) array of G(z_i) for i.i.d. standard normal z_i."""
    if count < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    return generate(gen, rng.normal((count, gen.n)))
