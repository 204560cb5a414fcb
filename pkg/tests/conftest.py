import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``arr`` (modified in place and restored).

    ``index`` restricts the estimate to a list of flat positions.
    """
    flat = arr.reshape(-1)
    positions = range(flat.size) if index is None else index
    out = np.zeros(len(positions))
    for i, p in enumerate(positions):
        old = flat[p]
        flat[p] = old + h
        up = f()
        flat[p] = old - h
        down = f()
        flat[p] = old
        out[i] = (up - down) / (2 * h)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
