# weakprior_core/consistency.py
"""Posterior consistency under i.i.d. repeated measurements: ball mass around x* as N grows."""
from __future__ import annotations

import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
from joblib import Parallel, delayed
from scipy.special import roots_legendre
from scipy.stats import ncx2, norm

from .core_model import RngHandle, check_length, vec64
from .errors import InvalidArgumentError
from .forward_ops import LinearOperator
from .mixture_posterior import (GaussianMixturePrior, PosteriorMixture, posterior_for_iid_stack,
                                prior_as_mixture)

log = logging.getLogger(__name__)

EXACT_MAX_DIM = 3
MC_SAMPLES = 100_000
QUAD_NODES = 256
_Z_LIMIT = 12.0
_NODES, _WEIGHTS = roots_legendre(QUAD_NODES)


# ---------- Ball mass ----------
def _ellipsoid_mass(r2, lams: np.ndarray, bs: np.ndarray) -> np.ndarray:
    """P(sum_i lam_i (Z_i + b_i)^2 <= r2) elementwise over an array of r2.

    The last coordinate is integrated out with z = -b + reach sin(theta), which
    leaves r2 cos(theta)^2 for the rest and keeps the integrand smooth, so a
    fixed Gauss-Legendre rule in theta suffices.
    """
    r2 = np.asarray(r2, dtype=np.float64)
    pos = r2 > 0.0
    r2 = np.where(pos, r2, 0.0)
    if lams.size == 1:
        half = np.sqrt(r2 / lams[0])
        return np.where(pos, norm.cdf(half - bs[0]) - norm.cdf(-half - bs[0]), 0.0)
    lam, b = lams[-1], bs[-1]
    reach = np.sqrt(r2 / lam)
    safe = np.where(reach > 0.0, reach, 1.0)
    lo = np.arcsin(np.clip((b - _Z_LIMIT) / safe, -1.0, 1.0))
    hi = np.arcsin(np.clip((b + _Z_LIMIT) / safe, -1.0, 1.0))
    half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
    theta = np.expand_dims(mid, -1) + np.expand_dims(half, -1) * _NODES
    cos = np.cos(theta)
    inner = _ellipsoid_mass(np.expand_dims(r2, -1) * cos * cos, lams[:-1], bs[:-1])
    reach = np.expand_dims(reach, -1)
    vals = norm.pdf(-b + reach * np.sin(theta)) * reach * cos * inner
    return np.where(pos, np.clip(half * (vals @ _WEIGHTS), 0.0, 1.0), 0.0)


def gaussian_ball_mass(mean: np.ndarray, cov: np.ndarray, center: np.ndarray, radius: float) -> float:
    """P(|X - center| <= radius) for X ~ N(mean, cov), exact for small n."""
    offset = mean - center
    n = offset.size
    scale = float(np.trace(cov)) / n
    if scale <= 0.0:
        return float(offset @ offset <= radius * radius)
    if np.allclose(cov, scale * np.eye(n), rtol=0.0, atol=1e-12 * scale):
        return float(ncx2.cdf(radius * radius / scale, df=n, nc=float(offset @ offset) / scale))
    lams, vecs = la.eigh(cov)
    proj = vecs.T @ offset
    keep = lams > 1e-14 * lams.max()
    r2 = radius * radius - float(np.sum(proj[~keep] ** 2))
    lams, proj = lams[keep], proj[keep]
    return float(_ellipsoid_mass(r2, lams, proj / np.sqrt(lams)))


def ball_mass(post: PosteriorMixture, center, radius: float, rng: Optional[RngHandle] = None,
              samples: int = MC_SAMPLES) -> Tuple[float, float]:
    """(mass, standard error) of {|x - center| <= radius}; SE is 0 on the exact path (n <= 3)."""
    center = check_length(vec64(center, "center"), post.n, "center")
    if not radius > 0:
        raise InvalidArgumentError(f"ball radius must be > 0, got {radius}")
    if post.n <= EXACT_MAX_DIM:
        w = post.weights
        mass = sum(w[j] * gaussian_ball_mass(post.means[j], post.covariances[j].dense(), center, radius)
                   for j in range(post.M) if w[j] > 0)
        return float(min(mass, 1.0)), 0.0
    rng = rng if rng is not None else RngHandle(0)
    draws = post.sample(rng, samples)
    inside = np.sum((draws - center) ** 2, axis=1) <= radius * radius
    p = float(inside.mean())
    return p, math.sqrt(p * (1.0 - p) / samples)


def default_ball_radius(*priors: GaussianMixturePrior) -> float:
    """Half the smallest distance between two means of the same prior."""
    dists = []
    for prior in priors:
        mu = prior.means
        for i in range(prior.M):
            for j in range(i + 1, prior.M):
                dists.append(float(np.linalg.norm(mu[i] - mu[j])))
    if not dists:
        raise InvalidArgumentError("single-component priors need an explicit ball radius")
    return 0.5 * min(dists)


# ---------- Sweep ----------
class ConsistencyRow(NamedTuple):
    N: int
    mass_a: float
    se_a: float
    mass_b: float
    se_b: float


def _posterior(prior, operator, ys, sigma, count) -> PosteriorMixture:
    if count == 0:
        return prior_as_mixture(prior)
    return posterior_for_iid_stack(prior, operator, ys[:count], sigma)


def _replicate(prior_a, prior_b, x_star, operator, sigma, n_list, radius, samples, rng: RngHandle):
    clean = operator.apply(x_star)
    ys = clean + sigma * rng.normal((max(n_list), operator.m)) if max(n_list) > 0 else np.empty((0, operator.m))
    out = np.empty((len(n_list), 4))
    for i, count in enumerate(n_list):
        mass_a, se_a = ball_mass(_posterior(prior_a, operator, ys, sigma, count), x_star, radius, rng, samples)
        mass_b, se_b = ball_mass(_posterior(prior_b, operator, ys, sigma, count), x_star, radius, rng, samples)
        out[i] = (mass_a, se_a, mass_b, se_b)
    return out


def consistency_sweep(prior_a: GaussianMixturePrior, prior_b: GaussianMixturePrior, x_star, operator: LinearOperator,
                      sigma: float, n_list: Sequence[int], ball_radius: Optional[float], rng: RngHandle,
                      replicates: int = 16, samples: int = MC_SAMPLES, n_jobs: int = 1) -> List[ConsistencyRow]:
    """Ball mass around x* under both priors for every N in n_list.

    Each replicate draws one sequence y_1..y_Nmax, and every N uses its first N
    entries. Masses are averaged over replicates; the SE combines the
    across-replicate spread with any Monte-Carlo error.
    """
    if prior_a.n != prior_b.n:
        raise InvalidArgumentError(f"priors disagree in dimension ({prior_a.n} vs {prior_b.n})")
    x_star = check_length(vec64(x_star, "x_star"), prior_a.n, "x_star")
    n_list = [int(v) for v in n_list]
    if not n_list or n_list[0] < 0 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidArgumentError("N list must be non-empty, non-negative and increasing")
    if replicates < 1:
        raise InvalidArgumentError("replicates must be >= 1")
    radius = default_ball_radius(prior_a, prior_b) if ball_radius is None else float(ball_radius)
    streams = rng.split(replicates)
    runs = np.stack(Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_replicate)(prior_a, prior_b, x_star, operator, sigma, n_list, radius, samples, s)
        for s in streams))                                                     # (R, len(N), 4)
    rows = []
    for i, count in enumerate(n_list):
        cols = []
        for k in (0, 2):
            vals, mc = runs[:, i, k], runs[:, i, k + 1]
            spread = vals.std(ddof=1) ** 2 / replicates if replicates > 1 else 0.0
            cols += [float(vals.mean()), math.sqrt(spread + float(np.mean(mc ** 2)) / replicates)]
        rows.append(ConsistencyRow(count, *cols))
    log.info("consistency: mass at N=%d is %.4f (A) / %.4f (B)", rows[-1].N, rows[-1].mass_a, rows[-1].mass_b)
    return rows
