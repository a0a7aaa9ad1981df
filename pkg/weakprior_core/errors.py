"""Exception hierarchy shared by every weakprior module."""
from __future__ import annotations


class WeakPriorError(Exception):
    """Base class; the CLI maps it to exit code 1."""


class InvalidArgumentError(WeakPriorError, ValueError):
    pass


class DegenerateModelError(WeakPriorError):
    """Singular measurement covariance (sigma = 0 with tau = 0, or sigma = 0 where a density is needed)."""


class FormatError(WeakPriorError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InvalidStateError(WeakPriorError):
    pass


class ConfigError(WeakPriorError):
    """Bad or missing configuration; the CLI maps it to exit code 2."""


class NonFiniteLossError(WeakPriorError):
    def __init__(self, step: int, z_norm: float, loss: float):
        super().__init__(f"non-finite loss at step {step}: loss={loss!r}, |z|={z_norm!r}")
        self.step = step
        self.z_norm = z_norm
        self.loss = loss
