import sys
from pathlib import Path

import pytest

# app_cli, presets and report are flat modules at the repository root
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from weakprior_core.core_model import RngHandle  # noqa: E402


@pytest.fixture
def rng():
    return RngHandle(1234)
