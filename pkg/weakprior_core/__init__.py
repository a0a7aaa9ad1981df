# weakprior_core: inverse problems with weak generative priors.
# Shared logging setup lives here; every module logs through getLogger(__name__).
import logging

__version__ = "0.3.0"

_TAGS = {"WARNING": "WARN", "CRITICAL": "ERROR"}


class _TagFormatter(logging.Formatter):
    """Console lines look like `[INFO] message` / `[WARN] message`."""

    def format(self, record: logging.LogRecord) -> str:
        tag = _TAGS.get(record.levelname, record.levelname)
        return f"[{tag}] {record.getMessage()}"


def configure_logging(level: str = "INFO") -> None:
    handler = logging.StreamHandler()
    handler.setFormatter(_TagFormatter())
    root = logging.getLogger("weakprior_core")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
