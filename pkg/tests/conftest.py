import numpy as np
import pytest

from tdekit.fieldspec import builtin
from tdekit.localsolver import build_chart

CHART_CENTERS = {
    "debreu": (0.0, 0.0),
    "arrow_enthoven": (1.0, 1.0),
    "katzner": (1.0, 1.0),
    "grad_product3": (1.0, 2.0, 3.0),
}

_charts = {}


def get_chart(name, center=None):
    center = tuple(center or CHART_CENTERS[name])
    key = (name, center)
    if key not in _charts:
        _charts[key] = build_chart(builtin(name), center)
    return _charts[key]


@pytest.fixture(scope="session")
def charts():
    return {name: get_chart(name) for name in CHART_CENTERS}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria register their outcome here; printed at session end
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d} {name}: {detail}")
