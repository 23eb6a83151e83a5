import sys

import pytest

from poincare_annulus.annulus import classify
from poincare_annulus.model import BASE_PARAMS, Params
from poincare_annulus.poincare import sweep_params

SPIRAL_1 = Params(a1=0.5, a2=0.002, lambda1=0.38, lambda2=0.2)
SPIRAL_2 = Params(a1=0.2, a2=0.01, lambda1=0.45, lambda2=0.2)

CASES = {
    "base": BASE_PARAMS,
    "nu2": sweep_params(BASE_PARAMS, 2.0),
    "nu5": sweep_params(BASE_PARAMS, 5.0),
    "spiral1": SPIRAL_1,
    "spiral2": SPIRAL_2,
}

_cache = {}


def classified(name):
    """Classification of a named parameter case, computed once per session."""
    if name not in _cache:
        _cache[name] = classify(CASES[name])
    return _cache[name]


@pytest.fixture(scope="session")
def base_geometry():
    return classified("base").geometry


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("tests.test_acceptance")
    lines = module.summary_lines() if module else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
