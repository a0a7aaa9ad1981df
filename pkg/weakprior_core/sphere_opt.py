# weakprior_core/sphere_opt.py
"""AdamSphere: Adam on the sphere |z| = r, plus holdout splits and top-K early stopping."""
from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Protocol, Tuple, Union

import numpy as np

from .core_model import RngHandle, vec64
from .errors import InvalidArgumentError, InvalidStateError

log = logging.getLogger(__name__)

RETRACTIONS = ("normalize", "expmap")
SELECT_MODES = ("latest", "best", "random")
_MAX_HALVINGS = 8


# ---------- Optimizer ----------
@dataclass(frozen=True)
class AdamSphereConfig:
    lr: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    radius: Union[str, float] = "init_norm"   # "init_norm", "sqrt_d" or a positive number
    retraction: str = "normalize"

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be > 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidArgumentError(f"{name} must be in [0, 1)")
        if self.retraction not in RETRACTIONS:
            raise InvalidArgumentError(f"retraction must be one of {RETRACTIONS}, got {self.retraction!r}")
        if isinstance(self.radius, str):
            if self.radius not in ("init_norm", "sqrt_d"):
                raise InvalidArgumentError(f"radius must be 'init_norm', 'sqrt_d' or a number, got {self.radius!r}")
        elif not self.radius > 0:
            raise InvalidArgumentError(f"radius must be > 0, got {self.radius}")

    @classmethod
    def from_dict(cls, d: Dict) -> "AdamSphereConfig":
        radius = d.get("radius", "init_norm")
        return cls(lr=float(d.get("lr", 0.02)), beta1=float(d.get("beta1", 0.9)),
                   beta2=float(d.get("beta2", 0.999)), eps=float(d.get("eps", 1e-8)),
                   radius=radius if isinstance(radius, str) else float(radius),
                   retraction=str(d.get("retraction", "normalize")))

    def resolve_radius(self, z0: np.ndarray) -> float:
        if self.radius == "init_norm":
            return float(np.linalg.norm(z0))
        if self.radius == "sqrt_d":
            return math.sqrt(z0.size)
        return float(self.radius)


@dataclass
class SphereRunState:
    z: np.ndarray
    m: np.ndarray
    v: np.ndarray
    r: float
    step: int = 0
    losses: List[float] = field(default_factory=list)


def init_state(z0, config: AdamSphereConfig) -> SphereRunState:
    """Put z0 on the sphere of the configured radius with zero moments."""
    z0 = vec64(z0, "z0")
    norm = float(np.linalg.norm(z0))
    if norm == 0:
        raise InvalidArgumentError("initial point must be non-zero")
    r = config.resolve_radius(z0)
    return SphereRunState(r * z0 / norm, np.zeros_like(z0), np.zeros_like(z0), r)


def tangent_project(z: np.ndarray, g: np.ndarray, r: float) -> np.ndarray:
    """g - (<g, z> / r^2) z."""
    if not r > 0:
        raise InvalidArgumentError(f"radius must be > 0, got {r}")
    return g - (float(g @ z) / (r * r)) * z


def _moments(state: SphereRunState, config: AdamSphereConfig, g: np.ndarray):
    t = state.step + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * g
    v = config.beta2 * state.v + (1.0 - config.beta2) * g * g
    m_hat = m / (1.0 - config.beta1 ** t)
    v_hat = v / (1.0 - config.beta2 ** t)
    return m, v, m_hat / (np.sqrt(v_hat) + config.eps)


def _retract(z: np.ndarray, d: np.ndarray, lr: float, r: float, kind: str) -> Optional[np.ndarray]:
    if kind == "expmap":
        dn = float(np.linalg.norm(d))
        if dn == 0.0:
            return z.copy()
        theta = lr * dn / r
        return math.cos(theta) * z - r * math.sin(theta) * d / dn
    cand = z - lr * d
    norm = float(np.linalg.norm(cand))
    if norm <= 1e-300 * max(r, 1.0):
        return None
    return r * cand / norm


def sphere_direction(state: SphereRunState, config: AdamSphereConfig, gradient) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Updated moments and the tangent search direction for one AdamSphere step."""
    g = tangent_project(state.z, vec64(gradient, "gradient"), state.r)
    m, v, d = _moments(state, config, g)
    return m, v, tangent_project(state.z, d, state.r)


def adam_sphere_step(state: SphereRunState, config: AdamSphereConfig, gradient) -> SphereRunState:
    m, v, d = sphere_direction(state, config, gradient)
    lr = config.lr
    for _ in range(_MAX_HALVINGS):
        z = _retract(state.z, d, lr, state.r, config.retraction)
        if z is not None:
            break
        log.warning("retraction hit the origin at step %d; retrying with lr=%.3g", state.step + 1, lr / 2)
        lr /= 2.0
    else:
        raise InvalidStateError("retraction failed after repeated step halving")
    return replace(state, z=z, m=m, v=v, step=state.step + 1)


def adam_step(state: SphereRunState, config: AdamSphereConfig, gradient) -> SphereRunState:
    """Plain Euclidean Adam; no projection and no retraction."""
    m, v, d = _moments(state, config, vec64(gradient, "gradient"))
    return replace(state, z=state.z - config.lr * d, m=m, v=v, step=state.step + 1)


# ---------- Holdout split ----------
@dataclass(frozen=True)
class HoldoutConfig:
    fraction: float = 0.1
    k: int = 5
    seed: int = 0
    select: str = "latest"

    def __post_init__(self):
        if not 0.0 < self.fraction <= 0.5:
            raise InvalidArgumentError(f"holdout fraction must be in (0, 0.5], got {self.fraction}")
        if self.k < 1:
            raise InvalidArgumentError(f"K must be >= 1, got {self.k}")
        if self.select not in SELECT_MODES:
            raise InvalidArgumentError(f"select must be one of {SELECT_MODES}, got {self.select!r}")

    @classmethod
    def from_dict(cls, d: Dict) -> "HoldoutConfig":
        return cls(float(d.get("fraction", 0.1)), int(d.get("k", 5)), int(d.get("seed", 0)),
                   str(d.get("select", "latest")))


def holdout_split(omega, config: HoldoutConfig, rng: Optional[RngHandle] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Disjoint (fit, holdout) index arrays, both sorted; rng defaults to one seeded by config.seed."""
    omega = np.asarray(omega, dtype=np.int64).reshape(-1)
    if omega.size < 2:
        raise InvalidArgumentError("need at least two observed scalars to split")
    n_ho = int(math.floor(config.fraction * omega.size + 0.5))
    if n_ho < 1 or n_ho >= omega.size:
        raise InvalidArgumentError(f"holdout fraction {config.fraction} of {omega.size} scalars leaves an empty side")
    rng = rng if rng is not None else RngHandle(config.seed)
    perm = rng.permutation(omega.size)
    return np.sort(omega[perm[n_ho:]]), np.sort(omega[perm[:n_ho]])


# ---------- Top-K early stopping ----------
@dataclass(frozen=True)
class TopKEntry:
    score: float
    step: int
    z: np.ndarray = field(compare=False, repr=False)


class TopKBuffer:
    """The K lowest holdout scores seen so far, sorted ascending; ties keep the earlier entry first."""

    def __init__(self, k: int):
        if k < 1:
            raise InvalidArgumentError(f"K must be >= 1, got {k}")
        self.k = int(k)
        self.entries: List[TopKEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def update(self, score: float, step: int, z: np.ndarray) -> bool:
        """Insert if there is room or `score` strictly beats the current K-th best."""
        if len(self.entries) >= self.k and not score < self.entries[-1].score:
            return False
        pos = bisect.bisect_right([e.score for e in self.entries], score)
        self.entries.insert(pos, TopKEntry(float(score), int(step), np.array(z, copy=True)))
        del self.entries[self.k:]
        return True

    def select(self, mode: str = "latest", rng: Optional[RngHandle] = None) -> TopKEntry:
        if not self.entries:
            raise InvalidStateError("top-K buffer is empty")
        if mode == "latest":
            return max(self.entries, key=lambda e: e.step)
        if mode == "best":
            return self.entries[0]
        if mode == "random":
            rng = rng if rng is not None else RngHandle(0)
            return self.entries[int(rng.choice(len(self.entries), 1)[0])]
        raise InvalidArgumentError(f"select must be one of {SELECT_MODES}, got {mode!r}")


def topk_update(buffer: TopKBuffer, score: float, step: int, z) -> TopKBuffer:
    buffer.update(score, step, z)
    return buffer


def topk_select(buffer: TopKBuffer) -> Tuple[np.ndarray, int]:
    entry = buffer.select("latest")
    return entry.z, entry.step


class StoppingRule(Protocol):
    def observe(self, step: int, holdout_score: float, z: np.ndarray) -> None: ...

    def select(self) -> Tuple[np.ndarray, int]: ...


class HoldoutTopK:
    def __init__(self, k: int = 5, mode: str = "latest", rng: Optional[RngHandle] = None):
        if mode not in SELECT_MODES:
            raise InvalidArgumentError(f"select must be one of {SELECT_MODES}, got {mode!r}")
        self.buffer = TopKBuffer(k)
        self.mode = mode
        self.rng = rng

    def observe(self, step: int, holdout_score: float, z: np.ndarray) -> None:
        self.buffer.update(holdout_score, step, z)

    def select(self) -> Tuple[np.ndarray, int]:
        entry = self.buffer.select(self.mode, self.rng)
        return entry.z, entry.step


class FinalIterate:
    """No early stopping: the last observed iterate."""

    def __init__(self):
        self._last: Optional[Tuple[np.ndarray, int]] = None

    def observe(self, step: int, holdout_score: float, z: np.ndarray) -> None:
        self._last = (np.array(z, copy=True), int(step))

    def select(self) -> Tuple[np.ndarray, int]:
        if self._last is None:
            raise InvalidStateError("no iterate observed")
        return self._last


def make_stopping_rule(name: str, holdout: HoldoutConfig, rng: Optional[RngHandle] = None) -> StoppingRule:
    if name == "holdout_topk":
        return HoldoutTopK(holdout.k, holdout.select, rng)
    if name == "final":
        return FinalIterate()
    raise InvalidArgumentError(f"unknown stopping rule {name!r}; valid: holdout_topk, final")
