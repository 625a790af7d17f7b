import numpy as np
import pytest

from edgetwin.synth import GeneratorConfig, synth_trace
from edgetwin.trace import RoadGeometry


@pytest.fixture(scope="session")
def small_trace():
    """A short dense synthetic trace: quick to build, has lane changes."""
    return synth_trace(GeneratorConfig(vehicles=12, steps=600, seed=3, lane_change_rate=0.5,
                                       road_length=250.0, n_autonomous=2))


@pytest.fixture(scope="session")
def small_geom(small_trace):
    return RoadGeometry.for_trace(small_trace)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = []


class CriterionRecorder:
    """Collects one verdict line per acceptance criterion for the terminal summary."""

    def __call__(self, number, name, passed, detail=""):
        line = f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return passed


@pytest.fixture(scope="session")
def criterion():
    return CriterionRecorder()


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA, key=lambda t: (t[0], t[1])):
            terminalreporter.write_line(line)
