# weakprior_core/identifiability.py
"""Checks of the per-dimension score-gap assumption.

dataset_gap_stats   gap of every image of a dataset against the others under a random mask
hoeffding_validate  Monte-Carlo frequency of a small gap vs the Hoeffding-style bound
box_gap_sweep       how the gap shrinks as a centered box hides the region where means differ
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .core_model import RngHandle, SyntheticDataset
from .errors import InvalidArgumentError
from .forward_ops import Observation, image_shape, make_box_mask, make_random_mask, observe
from .mixture_posterior import GaussianMixturePrior, component_scores, per_dim_gap

log = logging.getLogger(__name__)

CHUNK = 4096


# ---------- Dataset gap statistics ----------
@dataclass(frozen=True)
class GapStats:
    gaps: np.ndarray = field(repr=False)
    mse_gaps: np.ndarray = field(repr=False)
    mean: float
    std: float
    min: float
    keep_fraction: float
    label: str
    self_win_rate: float
    ties: int

    def as_dict(self) -> Dict:
        return {"dataset": self.label, "keep_fraction": self.keep_fraction, "images": int(self.gaps.size),
                "mean": self.mean, "std": self.std, "min": self.min,
                "mse_gap_mean": float(self.mse_gaps.mean()), "mse_gap_min": float(self.mse_gaps.min()),
                "self_win_rate": self.self_win_rate, "ties": self.ties}


def dataset_gap_stats(dataset: SyntheticDataset, keep_fraction: float, sigma: float, tau: float,
                      rng: RngHandle) -> GapStats:
    """Mask each image with a fresh random mask, score every dataset image as a candidate mean.

    Scores are s_j = |y - A x_j|^2 / (2 (sigma^2 + tau^2)); the gap is (s_(2) - s_(1)) / m.
    The unnormalized per-pixel MSE gap is reported alongside.
    """
    if len(dataset) < 2:
        raise InvalidArgumentError("gap statistics need at least two images (no runner-up otherwise)")
    X = dataset.stacked()
    scale = 2.0 * (sigma * sigma + tau * tau)
    if not scale > 0:
        raise InvalidArgumentError("sigma and tau cannot both be zero")
    gaps = np.empty(len(dataset))
    wins = 0
    ties = 0
    for i in range(len(dataset)):
        mask = make_random_mask(dataset.shape, keep_fraction, rng)
        obs = observe(mask, X[i], sigma, rng)
        resid = obs.y - X[:, mask.indices]
        gap = per_dim_gap(np.sum(resid * resid, axis=1) / scale, obs.m)
        gaps[i] = gap.delta
        wins += gap.j_star == i
        ties += not gap.identifiable
    stats = GapStats(gaps, gaps * scale, float(gaps.mean()), float(gaps.std()), float(gaps.min()),
                     float(keep_fraction), dataset.label, wins / len(dataset), ties)
    log.info("gap stats on %s: mean %.4g (std %.4g), min %.4g", dataset.label, stats.mean, stats.std, stats.min)
    return stats


# ---------- Hoeffding validation ----------
@dataclass(frozen=True)
class HoeffdingCheck:
    separation: float
    m: int
    M: int
    n: int
    sigma: float
    tau: float
    trials: int
    threshold: float
    failures: int
    frequency: float
    bound: float
    se: float
    within_bound: bool
    concentration_frequency: float
    concentration_bound: float
    concentration_within: bool

    def as_dict(self) -> Dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def separation(means: np.ndarray, j_star: int) -> float:
    """min_{j != j*} |mu_j - mu_{j*}|^2 / n."""
    d = np.mean((means - means[j_star]) ** 2, axis=1)
    return float(np.delete(d, j_star).min())


def hoeffding_bound(m: int, M: int, sep: float, sigma: float, tau: float) -> float:
    return (2 * (M - 1) * math.exp(-m * sep * sep / 32.0)
            + 2 * (M - 1) * math.exp(-m * sep * sep / (32.0 * (sigma * sigma + tau * tau))))


def make_separated_means(n: int, M: int, sep: float, rng: RngHandle, support: float = 0.5) -> np.ndarray:
    """mu_0 = 0 and M - 1 means with |mu_j|^2 / n = sep exactly.

    Each non-zero mean has entries +-a on a random `support` fraction of the
    coordinates, so a random m-subset sees a fluctuating separation.
    """
    k = max(1, int(round(support * n)))
    a = math.sqrt(sep * n / k)
    if a > 1.0:
        raise InvalidArgumentError(f"separation {sep} needs entries of size {a:.3g} > 1; widen the support")
    means = np.zeros((M, n))
    for j in range(1, M):
        idx = rng.choice(n, k, replace=False)
        means[j, idx] = a * np.where(rng.uniform(k) < 0.5, -1.0, 1.0)
    return means


def _hoeffding_chunk(means, j_star, m, sigma, tau, count, threshold, half_sep, rng: RngHandle):
    M, n = means.shape
    omega = np.argsort(rng.uniform((count, n)), axis=1)[:, :m]
    mu = means[:, omega].transpose(1, 0, 2)                        # (count, M, m)
    y = mu[:, j_star] + tau * rng.normal((count, m)) + sigma * rng.normal((count, m))
    s = np.sum((y[:, None, :] - mu) ** 2, axis=-1) / (2.0 * (sigma * sigma + tau * tau))
    others = np.delete(np.arange(M), j_star)
    margin = np.min(s[:, others] - s[:, [j_star]], axis=1) / m
    d_hat = np.mean((mu - mu[:, [j_star]]) ** 2, axis=-1)[:, others]
    d_true = np.mean((means - means[j_star]) ** 2, axis=1)[others]
    far = np.abs(d_hat - d_true) >= half_sep
    return int(np.sum(margin < threshold)), far.sum(axis=0)


def hoeffding_validate(means, j_star: int, m: int, sigma: float, tau: float, trials: int,
                       rng: RngHandle, n_jobs: int = 1) -> HoeffdingCheck:
    """Frequency of min_j (s_j - s_{j*}) / m < sep / (8 (sigma^2 + tau^2)) over random
    (mask, signal noise, measurement noise) draws, against the two-term exponential bound."""
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    M, n = means.shape
    if M < 2:
        raise InvalidArgumentError("need at least two means")
    if np.any(np.abs(means) > 1.0):
        raise InvalidArgumentError("mean entries must satisfy |mu| <= 1")
    if not 1 <= m <= n:
        raise InvalidArgumentError(f"m must be in [1, {n}], got {m}")
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    sep = separation(means, j_star)
    threshold = sep / (8.0 * (sigma * sigma + tau * tau))
    sizes = [CHUNK] * (trials // CHUNK) + ([trials % CHUNK] if trials % CHUNK else [])
    streams = rng.split(len(sizes))
    parts = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_hoeffding_chunk)(means, j_star, m, sigma, tau, c, threshold, sep / 2.0, s)
        for c, s in zip(sizes, streams))
    failures = sum(p[0] for p in parts)
    far = np.sum([p[1] for p in parts], axis=0)
    freq = failures / trials
    bound = hoeffding_bound(m, M, sep, sigma, tau)
    pb = min(bound, 1.0)
    se = math.sqrt(pb * (1.0 - pb) / trials)
    conc_freq = float(far.max() / trials)
    conc_bound = 2.0 * math.exp(-m * sep * sep / 32.0)
    pc = min(conc_bound, 1.0)
    conc_se = math.sqrt(pc * (1.0 - pc) / trials)
    check = HoeffdingCheck(sep, m, M, n, sigma, tau, trials, threshold, failures, freq, bound, se,
                           freq <= bound + 3 * se, conc_freq, conc_bound, conc_freq <= conc_bound + 3 * conc_se)
    log.info("hoeffding: %d/%d failures (%.4g) vs bound %.4g", failures, trials, freq, bound)
    return check


# ---------- Box inpainting sweep ----------
class BoxGapRow(NamedTuple):
    fraction: float
    mean_delta: float
    min_delta: float
    m: int
    ties: int


def box_difference_prior(world: GaussianMixturePrior, shape, difference_fraction: float,
                         spread: float = 0.15) -> GaussianMixturePrior:
    """Means equal to the first world mean outside a centered box and offset by
    evenly spaced constants inside it."""
    box = make_box_mask(shape, difference_fraction)
    ref = world.means[0]
    inside = np.ones(world.n, dtype=bool)
    inside[box.indices] = False
    levels = np.linspace(-spread, spread, world.M) if world.M > 1 else np.zeros(1)
    means = np.tile(ref, (world.M, 1))
    means[:, inside] += levels[:, None]
    return GaussianMixturePrior(world.weights, means, world.tau2)


def box_gap_sweep(image_world: GaussianMixturePrior, shape, box_fractions: Sequence[float], sigma: float,
                  rng: RngHandle, trials: int = 8, difference_fraction: Optional[float] = None) -> List[BoxGapRow]:
    """Mean gap delta(y) per box fraction on instances whose means differ only inside a box.

    Each trial draws one signal and one full-length noise vector reused by
    every fraction, so rows are comparable.
    """
    fractions = [float(f) for f in box_fractions]
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise InvalidArgumentError("box fractions must be increasing")
    image_shape(shape)
    diff_frac = max(fractions) if difference_fraction is None else float(difference_fraction)
    prior = box_difference_prior(image_world, shape, diff_frac)
    masks = [make_box_mask(shape, f) for f in fractions]
    deltas = np.empty((len(fractions), trials))
    ties = np.zeros(len(fractions), dtype=int)
    for t in range(trials):
        j = int(rng.choice(prior.M, 1, p=prior.weights)[0])
        x = prior.means[j] + math.sqrt(prior.tau2[j]) * rng.normal(prior.n)
        noise = rng.normal(prior.n)
        for i, mask in enumerate(masks):
            y = mask.apply(x) + sigma * noise[mask.indices]
            _, ell = component_scores(prior, Observation(y, mask, sigma))
            gap = per_dim_gap(ell, mask.m)
            deltas[i, t] = gap.delta
            ties[i] += not gap.identifiable
    rows = [BoxGapRow(f, float(deltas[i].mean()), float(deltas[i].min()), masks[i].m, int(ties[i]))
            for i, f in enumerate(fractions)]
    log.info("box sweep: %s", ", ".join(f"{r.fraction:g}->{r.mean_delta:.4g}" for r in rows))
    return rows
