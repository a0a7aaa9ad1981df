# weakprior_core/core_model.py
"""Numeric containers, the seeded RNG contract and the WPL1 / WPV1 file formats.

Vectors are plain float64 numpy arrays validated by `vec64`; images are
`ImageGrid` values stored row-major, channel-last.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .errors import FormatError, InvalidArgumentError

IMAGE_MAGIC = b"WPL1"
VECTOR_MAGIC = b"WPV1"
_IMAGE_HEADER = struct.Struct("<4sIIII")   # magic, h, w, c, reserved
_VECTOR_HEADER = struct.Struct("<4sI")     # magic, length
_STORAGE = np.dtype("<f4")


# ---------- Vectors ----------
def vec64(data, name: str = "vector") -> np.ndarray:
    """Return `data` as a 1-D float64 array, rejecting NaN/Inf and empty input."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        raise InvalidArgumentError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains NaN or Inf")
    return arr


def check_length(x: np.ndarray, expected: int, name: str = "vector") -> np.ndarray:
    if x.shape[-1] != expected:
        raise InvalidArgumentError(f"{name} has length {x.shape[-1]}, expected {expected}")
    return x


# ---------- Images ----------
@dataclass(frozen=True, eq=False)
class ImageGrid:
    height: int
    width: int
    channels: int
    pixels: np.ndarray
    value_range: Tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise InvalidArgumentError(f"image dims must be positive, got {self.shape}")
        px = vec64(self.pixels, "pixels")
        if px.size != self.height * self.width * self.channels:
            raise InvalidArgumentError(
                f"pixels length {px.size} != {self.height}*{self.width}*{self.channels}")
        lo, hi = self.value_range
        if np.any(px < lo) or np.any(px > hi):
            raise InvalidArgumentError(f"pixel outside value range [{lo}, {hi}]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    @property
    def peak(self) -> float:
        return float(self.value_range[1] - self.value_range[0])

    def as_array(self) -> np.ndarray:
        return self.pixels.reshape(self.shape)

    @classmethod
    def from_array(cls, arr: np.ndarray, value_range=(-1.0, 1.0)) -> "ImageGrid":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(h, w, c, arr.reshape(-1), tuple(value_range))

    @classmethod
    def from_vector(cls, x: np.ndarray, shape: Sequence[int], value_range=(-1.0, 1.0),
                    clip: bool = False) -> "ImageGrid":
        x = np.asarray(x, dtype=np.float64)
        if clip:
            x = np.clip(x, value_range[0], value_range[1])
        h, w, c = shape
        return cls(int(h), int(w), int(c), x, tuple(value_range))


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    items: List[ImageGrid]
    label: str = "world"

    def __post_init__(self):
        if not self.items:
            raise InvalidArgumentError("dataset must be non-empty")
        shapes = {g.shape for g in self.items}
        if len(shapes) != 1:
            raise InvalidArgumentError(f"dataset images disagree in shape: {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.items[0].shape

    def stacked(self) -> np.ndarray:
        """(N, h*w*c) matrix of flattened images."""
        return np.stack([g.pixels for g in self.items])


# ---------- Randomness ----------
@dataclass
class RngHandle:
    """Seeded Philox stream. Single owner; use `split` to hand streams to workers.

    Children are derived from (seed, spawn_key) so the same seed and the same
    sequence of calls reproduce the same streams on every platform.
    """
    seed: int = 0
    spawn_key: Tuple[int, ...] = ()
    _children: int = field(default=0, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidArgumentError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        seq = np.random.SeedSequence(int(self.seed), spawn_key=tuple(self.spawn_key))
        self._gen = np.random.Generator(np.random.Philox(seq))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def split(self, count: int) -> List["RngHandle"]:
        kids = [RngHandle(self.seed, tuple(self.spawn_key) + (self._children + i,))
                for i in range(count)]
        self._children += count
        return kids

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False, p=None) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace, p=p)


def gaussian_vector(rng: RngHandle, dim: int) -> np.ndarray:
    if isinstance(dim, bool) or int(dim) != dim or dim < 1:
        raise InvalidArgumentError(f"dim must be a positive integer, got {dim!r}")
    return rng.normal(int(dim))


# ---------- File formats ----------
def _read_bytes(path) -> bytes:
    return Path(path).read_bytes()


def _decode_payload(raw: bytes, offset: int, count: int) -> np.ndarray:
    expected = count * _STORAGE.itemsize
    actual = len(raw) - offset
    if actual != expected:
        raise FormatError(f"payload length mismatch: expected {expected} bytes, got {actual}", offset)
    return np.frombuffer(raw, dtype=_STORAGE, count=count, offset=offset).astype(np.float64)


def save_image(path, grid: ImageGrid) -> Path:
    path = Path(path)
    header = _IMAGE_HEADER.pack(IMAGE_MAGIC, grid.height, grid.width, grid.channels, 0)
    path.write_bytes(header + grid.pixels.astype(_STORAGE).tobytes())
    return path


def load_image(path, value_range=(-1.0, 1.0)) -> ImageGrid:
    raw = _read_bytes(path)
    if len(raw) < _IMAGE_HEADER.size:
        raise FormatError(f"header truncated: {len(raw)} of {_IMAGE_HEADER.size} bytes", len(raw))
    magic, h, w, c, reserved = _IMAGE_HEADER.unpack_from(raw, 0)
    if magic != IMAGE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {IMAGE_MAGIC!r}", 0)
    for offset, value in ((4, h), (8, w), (12, c)):
        if value == 0:
            raise FormatError("zero image dimension", offset)
    if reserved != 0:
        raise FormatError(f"reserved field must be 0, got {reserved}", 16)
    pixels = _decode_payload(raw, _IMAGE_HEADER.size, h * w * c)
    return ImageGrid(h, w, c, pixels, tuple(value_range))


def save_vector(path, x: Iterable[float]) -> Path:
    x = vec64(x)
    path = Path(path)
    path.write_bytes(_VECTOR_HEADER.pack(VECTOR_MAGIC, x.size) + x.astype(_STORAGE).tobytes())
    return path


def load_vector(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < _VECTOR_HEADER.size:
        raise FormatError(f"header truncated: {len(raw)} of {_VECTOR_HEADER.size} bytes", len(raw))
    magic, length = _VECTOR_HEADER.unpack_from(raw, 0)
    if magic != VECTOR_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {VECTOR_MAGIC!r}", 0)
    if length == 0:
        raise FormatError("zero vector length", 4)
    return _decode_payload(raw, _VECTOR_HEADER.size, length)
