import os

import numpy as np
import pytest
from hypothesis import settings

from qwlifespan.data import BumpField, InitialDataSet, ZeroField
from qwlifespan.nullform import CoefficientSet, SpeedVector

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

#: quasilinear cubic model (1 + u_t^2) u_tt = Lap u
CUBIC_KEY = (1, 1, 1, 1, 0, 0, 0, 0)


@pytest.fixture
def unit_speed():
    return SpeedVector([1.0])


@pytest.fixture
def cubic_model():
    return CoefficientSet(1, cq={CUBIC_KEY: -1.0})


@pytest.fixture
def g_bump():
    return InitialDataSet([ZeroField()], [BumpField(1.0, 1.0)], 1.0)


@pytest.fixture
def f_bump():
    return InitialDataSet([BumpField(1.0, 1.0)], [ZeroField()], 1.0)


@pytest.fixture
def mixed_data():
    f = BumpField(0.7, 0.8, center=(0.1, -0.05), strength=0.3, phase=0.4)
    g = BumpField(-0.5, 0.9, center=(-0.05, 0.05))
    return InitialDataSet([f], [g], 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


#: one summary line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
