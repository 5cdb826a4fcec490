import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tactile_gplvm.experiments import _EdgeRig, angle_to_phi
from tactile_gplvm.model import GplvmModel, augment_model, line_points
from tactile_gplvm.sensor import SensorModel
from tactile_gplvm.stimulus import stimulus_from_spec

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

OFFSETS = np.linspace(-10.0, 10.0, 21)


@pytest.fixture(scope="session")
def edge():
    return stimulus_from_spec("edge")


@pytest.fixture(scope="session")
def circle():
    return stimulus_from_spec("circle")


def train_model(stimulus, angles, seed=0, sensor=None):
    """Model from ground-truth lines on a straight edge, one per orientation."""
    rig = _EdgeRig(stimulus, sensor or SensorModel(), seed)
    model = GplvmModel.empty(rig.tap(0.0, 0.0))
    for a in angles:
        frames = [rig.tap(float(r), float(a)) for r in OFFSETS]
        model = augment_model(model, line_points(OFFSETS, frames, float(angle_to_phi(a)), f"a{a}"))
    return model, rig


@pytest.fixture(scope="session")
def model_0deg(edge):
    return train_model(edge, [0.0], seed=3)


@pytest.fixture(scope="session")
def noise_free_model(edge):
    return train_model(edge, [0.0], seed=0, sensor=SensorModel(noise_sd=0.0))[0]


ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line for the acceptance summary."""
    def record(label: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
