from __future__ import annotations

import sys
from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data"

STUB_SHIM = Path(__file__).parent / "stub_shim.py"


@pytest.fixture(scope="session")
def fixture_sum_primes_text() -> str:
    return (DATA_DIR / "rollout_sum_first_10_primes.txt").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def fixture_sum_squares_text() -> str:
    return (DATA_DIR / "rollout_sum_squares_first_5_primes.txt").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def stub_shim_cmd() -> list[str]:
    """Command for a minimal wire-protocol runner used as a test double."""
    return [sys.executable, "-I", str(STUB_SHIM)]
