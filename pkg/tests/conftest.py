import pytest

from bdcsense.motor_model import default_setup, simulate

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def s1():
    """Calibration, profile and the full-horizon S1 trajectory (10 Hz samples)."""
    cal, profile = default_setup()
    traj = simulate(cal.params, profile)
    return cal, profile, traj


@pytest.fixture(scope="session")
def acceptance_lines():
    return ACCEPTANCE_LINES


@pytest.fixture(scope="session")
def params(s1):
    return s1[0].params


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
