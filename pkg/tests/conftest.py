import numpy as np
import pytest

from mixdyn.localvol import LocalVolModel
from mixdyn.market import DATA_DIR, MixtureSpec, YieldCurve, eurusd_2003_curve


@pytest.fixture(scope="session")
def curve():
    return eurusd_2003_curve()


@pytest.fixture(scope="session")
def fx_model():
    return LocalVolModel.from_config(DATA_DIR / "fx_eurusd_2003.json")


@pytest.fixture(scope="session")
def two_comp():
    return LocalVolModel.from_config(DATA_DIR / "two_component.json")


@pytest.fixture(scope="session")
def three_comp():
    spec = MixtureSpec.lognormal([0.5, 0.3, 0.2], [0.1, 0.25, 0.6], 1.2)
    return LocalVolModel(spec, YieldCurve.flat(0.03, 0.01))


@pytest.fixture(scope="session")
def normal_model():
    spec = MixtureSpec.normal([0.5, 0.5], [0.0, 0.2], [0.2, 0.5], s0=0.0)
    return LocalVolModel(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
