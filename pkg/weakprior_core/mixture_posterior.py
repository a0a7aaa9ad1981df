# weakprior_core/mixture_posterior.py
"""Exact posteriors for isotropic Gaussian-mixture priors under y = A x + N(0, sigma^2 I).

Everything that touches mixture weights is done in log-space: the collapse
bound exp(-delta * m) leaves double range long before m reaches the sizes
the bound is about.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from .core_model import RngHandle, check_length, load_vector, save_vector, vec64
from .errors import DegenerateModelError, InvalidArgumentError
from .forward_ops import LinearOperator, Observation, ScaledIdentity

log = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12
TIE_TOL = 1e-9
_LOG_2PI = math.log(2.0 * math.pi)


# ---------- Prior ----------
@dataclass(frozen=True, eq=False)
class GaussianMixturePrior:
    """pi(x) = sum_j w_j N(x; mu_j, tau_j^2 I_n)."""
    weights: np.ndarray
    means: np.ndarray
    tau2: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        t2 = np.broadcast_to(np.asarray(self.tau2, dtype=np.float64), w.shape).copy()
        if mu.shape[0] != w.size:
            raise InvalidArgumentError(f"{w.size} weights but {mu.shape[0]} means")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidArgumentError(f"weights must be >= 0 and sum to 1 (sum={w.sum()!r})")
        if np.any(~(t2 > 0)):
            raise InvalidArgumentError("component variances tau_j^2 must be > 0")
        if not np.all(np.isfinite(mu)):
            raise InvalidArgumentError("means contain NaN or Inf")
        for name, arr in (("weights", w), ("means", mu), ("tau2", t2)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def create(cls, weights, means, tau2) -> "GaussianMixturePrior":
        """Build from unnormalized weights; tau2 may be a scalar."""
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.size == 0 or np.any(w < 0) or not w.sum() > 0:
            raise InvalidArgumentError("weights must be non-negative with a positive sum")
        return cls(w / w.sum(), np.array(means, dtype=np.float64, copy=True), tau2)

    @property
    def M(self) -> int:
        return self.weights.size

    @property
    def n(self) -> int:
        return self.means.shape[1]

    @property
    def homogeneous(self) -> bool:
        return bool(np.all(self.tau2 == self.tau2[0]))

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def weight_ratio_constant(self) -> float:
        """C = max_{i,j} w_i / w_j over components with positive weight."""
        w = self.weights[self.active]
        return float(w.max() / w.min())

    def permuted(self, order: Sequence[int]) -> "GaussianMixturePrior":
        order = np.asarray(order)
        return GaussianMixturePrior(self.weights[order], self.means[order], self.tau2[order])

    def with_weights(self, weights) -> "GaussianMixturePrior":
        return GaussianMixturePrior.create(weights, self.means, self.tau2)

    def descriptor(self, means_file) -> Dict:
        save_vector(means_file, self.means.reshape(-1))
        return {"weights": self.weights.tolist(), "means_file": str(means_file),
                "tau2": self.tau2.tolist()}

    @classmethod
    def from_descriptor(cls, desc: Dict, base_dir=".") -> "GaussianMixturePrior":
        try:
            weights = np.asarray(desc["weights"], dtype=np.float64)
            tau2 = desc["tau2"]
            if "means" in desc:
                means = np.asarray(desc["means"], dtype=np.float64)
            else:
                flat = load_vector(Path(base_dir) / desc["means_file"])
                if flat.size % weights.size:
                    raise InvalidArgumentError(
                        f"means file holds {flat.size} values, not a multiple of M={weights.size}")
                means = flat.reshape(weights.size, -1)
        except KeyError as e:
            raise InvalidArgumentError(f"prior descriptor is missing key {e}") from None
        return cls.create(weights, means, tau2)


# ---------- Measurement covariances ----------
def _cholesky(mat: np.ndarray) -> Tuple[np.ndarray, bool]:
    try:
        return la.cho_factor(mat, lower=True, check_finite=False)
    except la.LinAlgError:
        m = mat.shape[0]
        jitter = 1e-10 * np.trace(mat) / m
        if not jitter > 0:
            raise DegenerateModelError("measurement covariance is singular (sigma = 0 and tau = 0)") from None
        log.warning("covariance not positive definite; adding jitter %.3g", jitter)
        try:
            return la.cho_factor(mat + jitter * np.eye(m), lower=True, check_finite=False)
        except la.LinAlgError:
            raise DegenerateModelError("measurement covariance singular even after jitter") from None


class _MeasurementCovariance:
    """Sigma_j = sigma^2 I_m + tau_j^2 A A^T with solve and log-determinant."""

    def __init__(self, aat, sigma2: float, tau2: float, m: int):
        if isinstance(aat, ScaledIdentity):
            self.scale = sigma2 + tau2 * aat.c
            if not self.scale > 0:
                raise DegenerateModelError("measurement covariance is singular (sigma = 0 and tau = 0)")
            self.logdet = m * math.log(self.scale)
            self._cho = None
        else:
            self._cho = _cholesky(sigma2 * np.eye(m) + tau2 * aat.matrix)
            self.logdet = 2.0 * float(np.sum(np.log(np.diag(self._cho[0]))))

    def solve(self, r: np.ndarray) -> np.ndarray:
        if self._cho is None:
            return r / self.scale
        return la.cho_solve(self._cho, r, check_finite=False)

    def quad(self, r: np.ndarray) -> float:
        return float(r @ self.solve(r))


def _covariances(prior: GaussianMixturePrior, obs: Observation) -> List[_MeasurementCovariance]:
    aat = obs.operator.aat_structure()
    sigma2 = obs.noise_sigma ** 2
    cache: Dict[float, _MeasurementCovariance] = {}
    out = []
    for t2 in prior.tau2:
        key = float(t2)
        if key not in cache:
            cache[key] = _MeasurementCovariance(aat, sigma2, key, obs.m)
        out.append(cache[key])
    return out


def _check_dims(prior: GaussianMixturePrior, op: LinearOperator) -> None:
    if prior.n != op.n:
        raise InvalidArgumentError(f"prior dimension {prior.n} != operator input dimension {op.n}")


# ---------- Scores and gaps ----------
def component_scores(prior: GaussianMixturePrior, obs: Observation) -> Tuple[np.ndarray, np.ndarray]:
    """Scores s_j = |Sigma_j^{-1/2}(y - A mu_j)|^2 / 2 and selection scores s_j + log det(Sigma_j) / 2."""
    _check_dims(prior, obs.operator)
    covs = _covariances(prior, obs)
    resid = obs.y - obs.operator.apply(prior.means)
    s = np.array([0.5 * cov.quad(r) for cov, r in zip(covs, resid)])
    ell = s + 0.5 * np.array([cov.logdet for cov in covs])
    return s, ell


class ScoreGap(NamedTuple):
    delta: float
    j_star: int
    identifiable: bool
    single_component: bool = False


def per_dim_gap(scores, m: int) -> ScoreGap:
    """delta = (s_(2) - s_(1)) / m; lowest index wins ties, which are flagged non-identifiable."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise InvalidArgumentError("need at least one score")
    j = int(np.argmin(scores))
    if scores.size == 1:
        return ScoreGap(math.inf, j, True, True)
    first, second = np.partition(scores, 1)[:2]
    diff = float(second - first)
    if diff < TIE_TOL * m:
        return ScoreGap(0.0, j, False)
    return ScoreGap(diff / m, j, True)


# ---------- Posterior ----------
@dataclass(frozen=True, eq=False)
class PosteriorCovariance:
    """Either tau2 I - kappa A^T A (kept structured) or an explicit n x n matrix."""
    n: int
    tau2: float = 0.0
    kappa: float = 0.0
    operator: Optional[LinearOperator] = None
    matrix: Optional[np.ndarray] = None

    def dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        out = self.tau2 * np.eye(self.n)
        if self.kappa and self.operator is not None:
            a = self.operator.to_dense()
            out -= self.kappa * (a.T @ a)
        return out

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix @ v
        out = self.tau2 * v
        if self.kappa and self.operator is not None:
            out = out - self.kappa * self.operator.adjoint(self.operator.apply(v))
        return out


@dataclass(frozen=True, eq=False)
class PosteriorMixture:
    log_weights: np.ndarray
    means: np.ndarray
    covariances: List[PosteriorCovariance]
    j_star: int
    delta: float
    identifiable: bool
    scores: np.ndarray
    selection_scores: np.ndarray
    m: int
    score_delta: float = math.nan
    meta: Dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def M(self) -> int:
        return self.log_weights.size

    @property
    def n(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def log_p_not_jstar(self) -> float:
        others = np.delete(self.log_weights, self.j_star)
        others = others[np.isfinite(others)]
        return float(logsumexp(others)) if others.size else -math.inf

    def winner(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.means[self.j_star], self.covariances[self.j_star].dense()

    def log_pdf(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        terms = []
        for j in range(self.M):
            if not np.isfinite(self.log_weights[j]):
                continue
            dist = multivariate_normal(self.means[j], self.covariances[j].dense(), allow_singular=True)
            terms.append(self.log_weights[j] + dist.logpdf(points).reshape(-1))
        return logsumexp(np.stack(terms), axis=0)

    def sample(self, rng: RngHandle, count: int) -> np.ndarray:
        comp = rng.choice(self.M, count, replace=True, p=self.weights / self.weights.sum())
        out = np.empty((count, self.n))
        for j in np.unique(comp):
            rows = np.flatnonzero(comp == j)
            vals, vecs = la.eigh(self.covariances[j].dense())
            root = vecs * np.sqrt(np.clip(vals, 0.0, None))
            out[rows] = self.means[j] + rng.normal((rows.size, self.n)) @ root.T
        return out


def _finalize(prior: GaussianMixturePrior, s, ell, means, covs, m, meta=None) -> PosteriorMixture:
    log_post = prior.log_weights - ell - 0.5 * m * _LOG_2PI
    lw = log_post - logsumexp(log_post)
    active = prior.active
    gap = per_dim_gap(ell[active], m)
    score_gap = per_dim_gap(s[active], m)
    if not gap.identifiable:
        log.debug("non-identifiable instance: selection-score tie at m=%d", m)
    return PosteriorMixture(lw, means, covs, int(active[gap.j_star]), gap.delta, gap.identifiable,
                            s, ell, int(m), score_gap.delta, meta or {})


def exact_posterior(prior: GaussianMixturePrior, obs: Observation) -> PosteriorMixture:
    """Posterior mixture in winner form: m_j = mu_j + tau_j^2 A^T Sigma_j^{-1}(y - A mu_j),
    C_j = tau_j^2 I - tau_j^4 A^T Sigma_j^{-1} A."""
    _check_dims(prior, obs.operator)
    if not obs.noise_sigma > 0:
        raise DegenerateModelError("exact posterior needs sigma > 0")
    op = obs.operator
    aat = op.aat_structure()
    covs_meas = _covariances(prior, obs)
    resid = obs.y - op.apply(prior.means)
    s = np.empty(prior.M)
    ell = np.empty(prior.M)
    means = np.empty_like(prior.means)
    post_covs: List[PosteriorCovariance] = []
    dense_a = None
    for j, (cov, r) in enumerate(zip(covs_meas, resid)):
        t2 = float(prior.tau2[j])
        solved = cov.solve(r)
        s[j] = 0.5 * float(r @ solved)
        ell[j] = s[j] + 0.5 * cov.logdet
        means[j] = prior.means[j] + t2 * op.adjoint(solved)
        if isinstance(aat, ScaledIdentity):
            post_covs.append(PosteriorCovariance(prior.n, t2, t2 * t2 / cov.scale, op))
        else:
            if dense_a is None:
                dense_a = op.to_dense()
            c = t2 * np.eye(prior.n) - t2 * t2 * (dense_a.T @ cov.solve(dense_a))
            post_covs.append(PosteriorCovariance(prior.n, matrix=0.5 * (c + c.T)))
    return _finalize(prior, s, ell, means, post_covs, obs.m)


def information_form(prior: GaussianMixturePrior, obs: Observation) -> Tuple[np.ndarray, np.ndarray]:
    """Dense precision-form moments C_j = (tau_j^{-2} I + sigma^{-2} A^T A)^{-1},
    m_j = C_j (mu_j / tau_j^2 + A^T y / sigma^2)."""
    _check_dims(prior, obs.operator)
    if not obs.noise_sigma > 0:
        raise DegenerateModelError("information form needs sigma > 0")
    a = obs.operator.to_dense()
    s2 = obs.noise_sigma ** 2
    ata = a.T @ a / s2
    aty = a.T @ obs.y / s2
    eye = np.eye(prior.n)
    means = np.empty_like(prior.means)
    covs = np.empty((prior.M, prior.n, prior.n))
    for j in range(prior.M):
        prec = eye / prior.tau2[j] + ata
        covs[j] = la.solve(prec, eye, assume_a="pos")
        means[j] = covs[j] @ (prior.means[j] / prior.tau2[j] + aty)
    return means, covs


def prior_as_mixture(prior: GaussianMixturePrior) -> PosteriorMixture:
    """The prior itself in posterior form (no data)."""
    covs = [PosteriorCovariance(prior.n, float(t2)) for t2 in prior.tau2]
    zeros = np.zeros(prior.M)
    return PosteriorMixture(prior.log_weights, prior.means.copy(), covs, int(np.argmax(prior.weights)),
                            math.nan, False, zeros, zeros, 0)


def posterior_for_iid_stack(prior: GaussianMixturePrior, operator: LinearOperator,
                            y_list: Sequence[np.ndarray], sigma: float) -> PosteriorMixture:
    """Posterior after N i.i.d. observations y_i = A x + eps_i, from sufficient statistics.

    Uses N, sum |y_i|^2, the mean observation and A^T A; cost does not grow with N
    once the statistics are accumulated.
    """
    if len(y_list) == 0:
        raise InvalidArgumentError("need at least one observation")
    if not sigma > 0:
        raise DegenerateModelError("stacked posterior needs sigma > 0")
    _check_dims(prior, operator)
    ys = np.stack([check_length(vec64(y, "y"), operator.m, "y") for y in y_list])
    count, m = ys.shape
    y_bar = ys.mean(axis=0)
    syy = float(np.sum(ys * ys))
    a = operator.to_dense()
    ata = a.T @ a
    aty = a.T @ y_bar
    s2 = sigma * sigma
    eye = np.eye(prior.n)
    s = np.empty(prior.M)
    ell = np.empty(prior.M)
    means = np.empty_like(prior.means)
    covs: List[PosteriorCovariance] = []
    for j in range(prior.M):
        t2 = float(prior.tau2[j])
        mu = prior.means[j]
        cho = _cholesky(eye / t2 + (count / s2) * ata)
        amu = a @ mu
        rr = syy - 2.0 * count * float(y_bar @ amu) + count * float(amu @ amu)
        g = count * (aty - ata @ mu)
        quad = rr / s2 - float(g @ la.cho_solve(cho, g)) / (s2 * s2)
        logdet_prec = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
        logdet = count * m * math.log(s2) + prior.n * math.log(t2) + logdet_prec
        s[j] = 0.5 * quad
        ell[j] = s[j] + 0.5 * logdet
        means[j] = la.cho_solve(cho, mu / t2 + (count / s2) * aty)
        c = la.cho_solve(cho, eye)
        covs.append(PosteriorCovariance(prior.n, matrix=0.5 * (c + c.T)))
    return _finalize(prior, s, ell, means, covs, count * m, {"N": count})


# ---------- Collapse ----------
@dataclass(frozen=True)
class CollapseReport:
    p_not_jstar: float
    log_p_not_jstar: float
    bound: float
    log_bound: float
    tv_to_winner: float
    C: float
    delta0: float
    m: int
    M: int
    j_star: int
    identifiable: bool
    bound_holds: bool
    tv_grid: Optional[float] = None

    def as_dict(self) -> Dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def grid_tv(post: PosteriorMixture, points_per_axis: int = 801, span: float = 8.0) -> float:
    """TV(posterior, winning Gaussian) by quadrature on a grid; n <= 2 only."""
    if post.n > 2:
        raise InvalidArgumentError("grid TV is only available for n <= 2")
    stds = np.array([np.sqrt(np.clip(np.diag(c.dense()), 1e-300, None)) for c in post.covariances])
    lo = np.min(post.means - span * stds, axis=0)
    hi = np.max(post.means + span * stds, axis=0)
    axes = [np.linspace(lo[i], hi[i], points_per_axis) for i in range(post.n)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    cell = float(np.prod([ax[1] - ax[0] for ax in axes]))
    p = np.exp(post.log_pdf(grid))
    mean, cov = post.winner()
    q = multivariate_normal(mean, cov, allow_singular=True).pdf(grid).reshape(-1)
    return 0.5 * float(np.sum(np.abs(p - q))) * cell


def collapse_report(prior: GaussianMixturePrior, obs: Observation, delta0: Optional[float] = None,
                    with_grid_tv: bool = False) -> CollapseReport:
    """P(J != j*) against C M exp(-delta0 m); delta0 defaults to the observed gap.

    The TV distance to the winning Gaussian is reported as the certified bound
    sum_{j != j*} w~_j.
    """
    post = exact_posterior(prior, obs)
    C = prior.weight_ratio_constant()
    M = int(prior.active.size)
    d0 = post.delta if delta0 is None else float(delta0)
    log_p = post.log_p_not_jstar()
    p = float(min(1.0, math.exp(log_p))) if log_p > -math.inf else 0.0
    log_bound = math.log(C) + math.log(M) - d0 * post.m if d0 < math.inf else -math.inf
    bound = math.exp(log_bound) if log_bound < 700 else math.inf
    holds = log_p <= log_bound + 1e-9 if log_bound > -math.inf else p == 0.0
    tv_g = grid_tv(post) if with_grid_tv and post.n <= 2 else None
    if not post.identifiable:
        log.debug("assumption of a unique, separated minimizer fails (delta=0)")
    return CollapseReport(p, log_p, bound, log_bound, p, C, d0, post.m, M, post.j_star,
                          post.identifiable, bool(holds), tv_g)
