import importlib.util
import sys
from pathlib import Path

import pytest

RUNTIME_DIR = Path(__file__).resolve().parents[1]
HARNESS_PATH = RUNTIME_DIR / "src" / "tabforge_runtime" / "harness.py"
PRIMARY_TESTS = RUNTIME_DIR.parent / "tests"

# shared grid helpers generate the conformance corpus
if str(PRIMARY_TESTS) not in sys.path:
    sys.path.insert(0, str(PRIMARY_TESTS))


@pytest.fixture(scope="session")
def harness():
    """The harness module loaded from source, independent of installation."""
    spec = importlib.util.spec_from_file_location("_harness_under_test", HARNESS_PATH)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture(scope="session")
def harness_cmd():
    return [sys.executable, str(HARNESS_PATH)]
