# weakprior_core/forward_ops.py
"""Linear forward operators A and the measurement model y = A x + eps.

Images are flattened row-major, channel-last: index = (row * width + col) * channels + ch.
Every operator reports the structure of A A^T, which the posterior code uses to
pick a closed-form path (scaled identity) or a dense Cholesky path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .core_model import RngHandle, check_length, vec64
from .errors import InvalidArgumentError

DENSE_LIMIT = 16384

Shape = Tuple[int, int, int]


# ---------- A A^T structure ----------
@dataclass(frozen=True)
class ScaledIdentity:
    c: float


@dataclass(frozen=True, eq=False)
class DenseSpd:
    matrix: np.ndarray


AatStructure = Union[ScaledIdentity, DenseSpd]


def image_shape(shape: Sequence[int]) -> Shape:
    if len(shape) != 3 or min(int(s) for s in shape) < 1:
        raise InvalidArgumentError(f"shape must be (h, w, c) with positive entries, got {shape}")
    h, w, c = (int(s) for s in shape)
    return (h, w, c)


# ---------- Operators ----------
class LinearOperator:
    """Base class: n inputs, m outputs, apply / adjoint / aat_structure."""

    kind = "linear"

    def __init__(self, n: int, m: int):
        if n < 1 or m < 1:
            raise InvalidArgumentError(f"operator needs n, m >= 1 (got n={n}, m={m})")
        self.n = int(n)
        self.m = int(m)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        check_length(x, self.n, "input")
        return self._apply(x)

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        check_length(v, self.m, "measurement")
        return self._adjoint(v)

    def _apply(self, x):
        raise NotImplementedError

    def _adjoint(self, v):
        raise NotImplementedError

    def aat_structure(self) -> AatStructure:
        a = self.to_dense()
        return DenseSpd(a @ a.T)

    def to_dense(self) -> np.ndarray:
        if self.n > DENSE_LIMIT:
            raise InvalidArgumentError(f"dense materialization limited to n <= {DENSE_LIMIT}, got {self.n}")
        return self._apply(np.eye(self.n)).T.copy()

    def rows(self, rows: Sequence[int]) -> "RowSubset":
        return RowSubset(self, rows)

    def descriptor(self) -> Dict:
        raise InvalidArgumentError(f"{self.kind} operator has no JSON descriptor")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n}, m={self.m})"


class CoordinateMask(LinearOperator):
    """A = P_Omega, a coordinate projection; A A^T = I_m."""

    kind = "mask"

    def __init__(self, indices: Sequence[int], n: int, shape: Optional[Shape] = None):
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise InvalidArgumentError("mask needs a non-empty index set")
        if np.any(np.diff(idx) <= 0):
            raise InvalidArgumentError("mask indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= n:
            raise InvalidArgumentError(f"mask indices must lie in [0, {n})")
        super().__init__(n, idx.size)
        self.indices = idx
        self.shape = shape

    def _apply(self, x):
        return x[..., self.indices]

    def _adjoint(self, v):
        out = np.zeros(v.shape[:-1] + (self.n,))
        out[..., self.indices] = v
        return out

    def aat_structure(self) -> AatStructure:
        return ScaledIdentity(1.0)

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.m, self.n))
        a[np.arange(self.m), self.indices] = 1.0
        return a

    def descriptor(self) -> Dict:
        return {"kind": "mask", "n": self.n, "indices": self.indices.tolist()}


class RandomMask(CoordinateMask):
    kind = "random_mask"

    def __init__(self, indices, shape: Shape, keep_fraction: float, seed: Optional[int] = None):
        h, w, c = shape
        super().__init__(indices, h * w * c, shape)
        self.keep_fraction = float(keep_fraction)
        self.seed = seed

    def descriptor(self) -> Dict:
        if self.seed is None:
            return super().descriptor()
        return {"kind": "random_mask", "shape": list(self.shape),
                "keep_fraction": self.keep_fraction, "seed": self.seed}


class BoxMask(CoordinateMask):
    kind = "box_mask"

    def __init__(self, indices, shape: Shape, box_fraction: float, box: Tuple[int, int, int]):
        h, w, c = shape
        super().__init__(indices, h * w * c, shape)
        self.box_fraction = float(box_fraction)
        self.box = box  # (top, left, side) of the removed square

    def descriptor(self) -> Dict:
        return {"kind": "box_mask", "shape": list(self.shape), "box_fraction": self.box_fraction}


class BlockAverage(LinearOperator):
    """Non-overlapping f x f block means per channel; each row has k = f^2 weights 1/k."""

    kind = "block_average"

    def __init__(self, shape: Shape, factor: int):
        h, w, c = image_shape(shape)
        f = int(factor)
        if f < 1 or h % f or w % f:
            raise InvalidArgumentError(f"factor {factor} must divide both spatial dims of {shape}")
        super().__init__(h * w * c, (h // f) * (w // f) * c)
        self.shape = (h, w, c)
        self.factor = f
        self.k = f * f

    def _apply(self, x):
        h, w, c = self.shape
        f = self.factor
        lead = x.shape[:-1]
        blocks = x.reshape(lead + (h // f, f, w // f, f, c))
        return blocks.mean(axis=(-4, -2)).reshape(lead + (self.m,))

    def _adjoint(self, v):
        h, w, c = self.shape
        f = self.factor
        lead = v.shape[:-1]
        low = v.reshape(lead + (h // f, w // f, c)) / self.k
        up = np.repeat(np.repeat(low, f, axis=-3), f, axis=-2)
        return up.reshape(lead + (self.n,))

    def aat_structure(self) -> AatStructure:
        return ScaledIdentity(1.0 / self.k)

    def descriptor(self) -> Dict:
        return {"kind": "block_average", "shape": list(self.shape), "factor": self.factor}


def _reflect(idx: np.ndarray, size: int) -> np.ndarray:
    """Half-sample symmetric extension (d c b a | a b c d | d c b a), any distance."""
    r = np.mod(idx, 2 * size)
    return np.where(r < size, r, 2 * size - 1 - r)


class Convolution(LinearOperator):
    """Per-channel 2-D correlation with reflect padding, stored as kernel + sparse matrix."""

    kind = "convolution"

    def __init__(self, shape: Shape, kernel: np.ndarray, intensity: Optional[float] = None):
        h, w, c = image_shape(shape)
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
            raise InvalidArgumentError("kernel must be 2-D with odd sizes")
        super().__init__(h * w * c, h * w * c)
        self.shape = (h, w, c)
        self.kernel = kernel
        self.intensity = intensity
        self.matrix = self._build_matrix()

    def _build_matrix(self) -> sp.csr_matrix:
        h, w, c = self.shape
        kh, kw = self.kernel.shape
        rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        out_pix = (rr * w + cc).ravel()
        rows, cols, vals = [], [], []
        for di in range(kh):
            src_r = _reflect(rr + di - kh // 2, h)
            for dj in range(kw):
                weight = self.kernel[di, dj]
                if weight == 0.0:
                    continue
                src_c = _reflect(cc + dj - kw // 2, w)
                rows.append(out_pix)
                cols.append((src_r * w + src_c).ravel())
                vals.append(np.full(out_pix.size, weight))
        plane = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(h * w, h * w)).tocsr()
        # channel-last interleave: pixel p, channel ch -> p * c + ch
        return sp.kron(plane, sp.identity(c, format="csr"), format="csr")

    def _apply(self, x):
        return (self.matrix @ x.T).T if x.ndim > 1 else self.matrix @ x

    def _adjoint(self, v):
        mt = self.matrix.T
        return (mt @ v.T).T if v.ndim > 1 else mt @ v

    def to_dense(self) -> np.ndarray:
        if self.n > DENSE_LIMIT:
            raise InvalidArgumentError(f"dense materialization limited to n <= {DENSE_LIMIT}, got {self.n}")
        return self.matrix.toarray()

    def descriptor(self) -> Dict:
        if self.intensity is None:
            raise InvalidArgumentError("only Gaussian blur operators have a JSON descriptor")
        return {"kind": "gaussian_blur", "shape": list(self.shape),
                "kernel_size": int(self.kernel.shape[0]), "intensity": self.intensity}


class Dense(LinearOperator):
    kind = "dense"

    def __init__(self, matrix: np.ndarray, seed: Optional[int] = None):
        a = np.asarray(matrix, dtype=np.float64)
        if a.ndim != 2:
            raise InvalidArgumentError("dense operator needs a 2-D matrix")
        if not np.all(np.isfinite(a)):
            raise InvalidArgumentError("dense operator contains NaN or Inf")
        super().__init__(a.shape[1], a.shape[0])
        self.matrix = a
        self.seed = seed

    def _apply(self, x):
        return x @ self.matrix.T

    def _adjoint(self, v):
        return v @ self.matrix

    def aat_structure(self) -> AatStructure:
        return DenseSpd(self.matrix @ self.matrix.T)

    def to_dense(self) -> np.ndarray:
        return self.matrix.copy()

    def descriptor(self) -> Dict:
        if self.seed is not None:
            return {"kind": "random_dense", "m": self.m, "n": self.n, "seed": self.seed}
        return {"kind": "dense", "matrix": self.matrix.tolist()}


class RowSubset(LinearOperator):
    """Rows `rows` of a base operator; used for fit / holdout splits of y."""

    kind = "row_subset"

    def __init__(self, base: LinearOperator, rows: Sequence[int]):
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0 or rows.min() < 0 or rows.max() >= base.m or np.unique(rows).size != rows.size:
            raise InvalidArgumentError("row subset must be unique indices within the base output")
        super().__init__(base.n, rows.size)
        self.base = base
        self.row_index = rows

    def _apply(self, x):
        return self.base._apply(x)[..., self.row_index]

    def _adjoint(self, v):
        full = np.zeros(v.shape[:-1] + (self.base.m,))
        full[..., self.row_index] = v
        return self.base._adjoint(full)

    def aat_structure(self) -> AatStructure:
        inner = self.base.aat_structure()
        if isinstance(inner, ScaledIdentity):
            return inner
        return DenseSpd(inner.matrix[np.ix_(self.row_index, self.row_index)])


# ---------- Measurements ----------
@dataclass(frozen=True, eq=False)
class Observation:
    y: np.ndarray
    operator: LinearOperator
    noise_sigma: float

    def __post_init__(self):
        y = vec64(self.y, "y")
        check_length(y, self.operator.m, "y")
        if not self.noise_sigma >= 0:
            raise InvalidArgumentError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.operator.m


def observe(op: LinearOperator, x_true: np.ndarray, sigma: float, rng: RngHandle) -> Observation:
    """y = A x + sigma * xi. The noise draw always happens so streams stay aligned across sigma."""
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be >= 0, got {sigma}")
    x_true = vec64(x_true, "x_true")
    noise = rng.normal(op.m)
    return Observation(op.apply(x_true) + sigma * noise, op, float(sigma))


def null_space_part(op: LinearOperator, v) -> np.ndarray:
    """v - A^T (A A^T)^+ A v: the part of v that no measurement sees."""
    v = check_length(vec64(v, "v"), op.n, "v")
    r = op.apply(v)
    aat = op.aat_structure()
    if isinstance(aat, ScaledIdentity):
        coef = r / aat.c
    else:
        coef = la.lstsq(aat.matrix, r, cond=1e-10)[0]
    return v - op.adjoint(coef)


# ---------- Factories ----------
def _pixel_channels(pixels: np.ndarray, channels: int) -> np.ndarray:
    return (pixels[:, None] * channels + np.arange(channels)[None, :]).ravel()


def make_random_mask(shape, keep_fraction: float, rng: RngHandle, seed: Optional[int] = None) -> RandomMask:
    """Keep round(keep_fraction * h * w) pixels (all channels of a kept pixel together)."""
    h, w, c = image_shape(shape)
    if not 0.0 < keep_fraction <= 1.0:
        raise InvalidArgumentError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    keep = int(round(keep_fraction * h * w))
    if keep < 1:
        raise InvalidArgumentError(f"keep_fraction {keep_fraction} keeps no pixel of a {h}x{w} image")
    pixels = np.sort(rng.choice(h * w, keep, replace=False))
    return RandomMask(_pixel_channels(pixels, c), (h, w, c), keep_fraction, seed)


def box_side(shape, box_fraction: float) -> int:
    h, w, _ = image_shape(shape)
    return int(math.ceil(box_fraction * min(h, w) - 1e-9)) if box_fraction > 0 else 0


def make_box_mask(shape, box_fraction: float) -> BoxMask:
    """Remove a centered square of side ceil(fraction * min(h, w)) across all channels."""
    h, w, c = image_shape(shape)
    if not 0.0 <= box_fraction <= 1.0:
        raise InvalidArgumentError(f"box_fraction must be in [0, 1], got {box_fraction}")
    side = box_side(shape, box_fraction)
    top, left = (h - side) // 2, (w - side) // 2
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    inside = (rr >= top) & (rr < top + side) & (cc >= left) & (cc < left + side)
    pixels = np.flatnonzero(~inside.ravel())
    if pixels.size == 0:
        raise InvalidArgumentError(f"box_fraction {box_fraction} removes every pixel")
    return BoxMask(_pixel_channels(pixels, c), (h, w, c), box_fraction, (top, left, side))


def make_block_average(shape, factor: int) -> BlockAverage:
    return BlockAverage(shape, factor)


def gaussian_kernel(kernel_size: int, intensity: float) -> np.ndarray:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise InvalidArgumentError(f"kernel_size must be odd and positive, got {kernel_size}")
    if intensity <= 0:
        raise InvalidArgumentError(f"intensity must be positive, got {intensity}")
    ax = np.arange(kernel_size) - kernel_size // 2
    g = np.exp(-0.5 * (ax / intensity) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def make_gaussian_blur(shape, kernel_size: int, intensity: float) -> Convolution:
    return Convolution(shape, gaussian_kernel(kernel_size, intensity), float(intensity))


def make_random_dense(m: int, n: int, rng: RngHandle, seed: Optional[int] = None) -> Dense:
    """Gaussian matrix with N(0, 1/m) entries."""
    return Dense(rng.normal((m, n)) / math.sqrt(m), seed)


def identity(n: int) -> Dense:
    return Dense(np.eye(n))


def operator_from_descriptor(desc: Dict) -> LinearOperator:
    """Build an operator from its JSON descriptor; masks with a seed rebuild deterministically."""
    kind = desc.get("kind")
    try:
        if kind == "random_mask":
            seed = int(desc.get("seed", 0))
            return make_random_mask(desc["shape"], float(desc["keep_fraction"]), RngHandle(seed), seed)
        if kind == "box_mask":
            return make_box_mask(desc["shape"], float(desc["box_fraction"]))
        if kind == "block_average":
            return make_block_average(desc["shape"], int(desc["factor"]))
        if kind == "gaussian_blur":
            return make_gaussian_blur(desc["shape"], int(desc["kernel_size"]), float(desc["intensity"]))
        if kind == "mask":
            return CoordinateMask(desc["indices"], int(desc["n"]))
        if kind == "dense":
            return Dense(np.asarray(desc["matrix"], dtype=np.float64))
        if kind == "identity":
            return identity(int(desc["n"]))
        if kind == "random_dense":
            seed = int(desc.get("seed", 0))
            return make_random_dense(int(desc["m"]), int(desc["n"]), RngHandle(seed), seed)
    except KeyError as e:
        raise InvalidArgumentError(f"operator descriptor '{kind}' is missing key {e}") from None
    raise InvalidArgumentError(
        f"unknown operator kind {kind!r}; valid kinds: random_mask, box_mask, block_average, "
        "gaussian_blur, mask, dense, identity, random_dense")
