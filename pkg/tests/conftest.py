from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).parent
sys.path.insert(0, str(TESTS_DIR))

FAKE_HARNESS = TESTS_DIR / "fixtures" / "fake_harness.py"


@pytest.fixture
def fake_harness_cmd() -> list[str]:
    return [sys.executable, str(FAKE_HARNESS)]


@pytest.fixture(autouse=True)
def _reset_mock_cache():
    from tabforge import gateway

    gateway.reset_mocks()
    yield
    gateway.reset_mocks()
