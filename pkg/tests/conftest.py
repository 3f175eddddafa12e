from __future__ import annotations

import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from seglab.grid import make_grid

settings.register_profile(
    "seglab", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("seglab")


def const(c):
    return lambda x, y: np.full(np.shape(x), float(c))


@pytest.fixture
def square():
    return make_grid(2, [(-1.0, 1.0)], 21)


@pytest.fixture
def unit_line():
    return make_grid(1, [(0.0, 1.0)], 101)


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        parts = results[k]
        ok = all(p[0] for p in parts.values())
        detail = "; ".join(f"{name}: {'ok' if p[0] else 'FAIL'} ({p[1]})" for name, p in parts.items())
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
