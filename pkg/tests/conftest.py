import json
from pathlib import Path

import numpy as np
import pytest

GOLDEN = Path(__file__).parent / "golden" / "oracle_values.json"


@pytest.fixture(scope="session")
def golden():
    return json.loads(GOLDEN.read_text())


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record ``(criterion, passed, detail)``; lines are echoed at the end of the session."""

    def record(n: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
