import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from foliate.metric import MetricSpec, curvature_at
from foliate.normal_chart import parallel_frame

settings.register_profile(
    "foliate",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("foliate")

# acceptance metric: non-degenerate critical point of Sc at the origin, tau not forced to vanish
BUMP_PARAMS = {"epsilon": 0.05, "a": (1.0, 2.0, 3.0), "b": 1.0}


@pytest.fixture(scope="session")
def euclid():
    return MetricSpec("euclidean")


@pytest.fixture(scope="session")
def s3():
    return MetricSpec("round_s3", {"k": 1.0})


@pytest.fixture(scope="session")
def bump():
    return MetricSpec("conformal_bump", {"epsilon": 0.05, "a": (1.0, 2.0, 3.0)})


@pytest.fixture(scope="session")
def bump_b():
    return MetricSpec("conformal_bump", BUMP_PARAMS)


def origin_setup(spec):
    return parallel_frame(spec, np.zeros(3)), curvature_at(spec, np.zeros(3))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
