import numpy as np
import pytest

from helpers import WAVY_ROOF
from ruelle_lab.flows import ModelSystem


@pytest.fixture
def cat():
    return ModelSystem.cat()


@pytest.fixture
def wavy():
    return ModelSystem.cat(roof=WAVY_ROOF)


@pytest.fixture
def hyp():
    return ModelSystem.hyperbolic(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
