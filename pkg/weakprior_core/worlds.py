# weakprior_core/worlds.py
"""Synthetic Gaussian-mixture image worlds and the mismatched priors built from them."""
from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .core_model import ImageGrid, RngHandle, SyntheticDataset
from .errors import InvalidArgumentError
from .forward_ops import LinearOperator, image_shape, null_space_part
from .mixture_posterior import GaussianMixturePrior

MEAN_LIMIT = 0.8
_MAX_TRIES = 200


def smooth_field(shape, rng: RngHandle, cell: int = 4, limit: float = MEAN_LIMIT) -> np.ndarray:
    """Flattened h x w x c image: uniform noise on a coarse grid, linearly upsampled."""
    h, w, c = image_shape(shape)
    ch, cw = max(1, math.ceil(h / cell)), max(1, math.ceil(w / cell))
    coarse = rng.uniform((ch, cw, c)) * 2.0 * limit - limit
    if (ch, cw) == (h, w):
        return coarse.reshape(-1)
    fine = ndimage.zoom(coarse, (h / ch, w / cw, 1), order=1, mode="nearest", grid_mode=True)
    return np.clip(fine[:h, :w, :], -limit, limit).reshape(-1)


def min_separation(means: np.ndarray) -> float:
    """min_{i != j} |mu_i - mu_j|^2 / n."""
    if means.shape[0] < 2:
        return math.inf
    d = ((means[:, None, :] - means[None, :, :]) ** 2).mean(axis=-1)
    return float(d[~np.eye(means.shape[0], dtype=bool)].min())


def make_image_world(shape, M: int, tau: float, rng: RngHandle, separation: Optional[float] = None,
                     weights: Optional[Sequence[float]] = None) -> GaussianMixturePrior:
    """M smooth mean images in [-0.8, 0.8]; resampled until every pair is `separation` apart per pixel."""
    if M < 1:
        raise InvalidArgumentError(f"M must be >= 1, got {M}")
    h, w, c = image_shape(shape)
    for _ in range(_MAX_TRIES):
        means = np.stack([smooth_field((h, w, c), rng) for _ in range(M)])
        if separation is None or min_separation(means) >= separation:
            break
    else:
        raise InvalidArgumentError(f"could not draw {M} means with separation {separation}")
    w_ = np.full(M, 1.0 / M) if weights is None else weights
    return GaussianMixturePrior.create(w_, means, float(tau) ** 2)


def sample_world(prior: GaussianMixturePrior, rng: RngHandle, count: int) -> Tuple[np.ndarray, np.ndarray]:
    """(count, n) images clipped to [-1, 1] and their component labels."""
    labels = rng.choice(prior.M, count, replace=True, p=prior.weights)
    noise = rng.normal((count, prior.n)) * np.sqrt(prior.tau2[labels])[:, None]
    return np.clip(prior.means[labels] + noise, -1.0, 1.0), labels


def world_dataset(prior: GaussianMixturePrior, shape, rng: RngHandle, count: int,
                  label: str = "gmm-world") -> SyntheticDataset:
    images, _ = sample_world(prior, rng, count)
    return SyntheticDataset([ImageGrid.from_vector(x, shape) for x in images], label)


def reweighted_prior(prior: GaussianMixturePrior, C: float, rng: RngHandle) -> GaussianMixturePrior:
    """Same means, fresh weights with max/min ratio at most C."""
    if C < 1:
        raise InvalidArgumentError(f"weight ratio C must be >= 1, got {C}")
    logw = rng.uniform(prior.M) * math.log(C)
    return prior.with_weights(np.exp(logw))


def shifted_prior(prior: GaussianMixturePrior, shape, rng: RngHandle, strength: float) -> GaussianMixturePrior:
    """Means moved by a smooth random field of amplitude `strength` (the out-of-domain prior)."""
    shift = np.stack([smooth_field(shape, rng, limit=strength) for _ in range(prior.M)])
    means = np.clip(prior.means + shift, -1.0, 1.0)
    return GaussianMixturePrior(prior.weights, means, prior.tau2)


def hidden_shift_prior(prior: GaussianMixturePrior, operator: LinearOperator, shape, rng: RngHandle,
                       strength: float) -> GaussianMixturePrior:
    """Means moved by +-strength on a smooth sign pattern, kept only where `operator` is blind.

    The shift lies in the null space of A, so data never corrects it and its
    size grows with how little the operator measures.
    """
    if operator.n != prior.n:
        raise InvalidArgumentError(f"operator input dimension {operator.n} != prior dimension {prior.n}")
    shift = np.stack([null_space_part(operator, strength * np.sign(smooth_field(shape, rng)))
                      for _ in range(prior.M)])
    means = np.clip(prior.means + shift, -1.0, 1.0)
    return GaussianMixturePrior(prior.weights, means, prior.tau2)


def nearest_mode(prior: GaussianMixturePrior, x: np.ndarray) -> int:
    return int(np.argmin(((prior.means - x) ** 2).sum(axis=1)))
