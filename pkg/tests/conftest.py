import numpy as np
import pytest
from hypothesis import settings

from quadflow.system import load_system

settings.register_profile("quadflow", max_examples=60, deadline=None)
settings.load_profile("quadflow")

FIXTURES = ["holt", "abelian", "fdx1", "triangular", "lie2d", "nilp4"]


@pytest.fixture(scope="session")
def systems():
    return {name: load_system(name) for name in FIXTURES}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")
