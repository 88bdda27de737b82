import pytest

from augbpm.probit import LuxScale, ProbitModel

# published constants for both experiments
EXP1_EXISTING = ProbitModel(-0.0175, -4.0835, 1.0361, -4.0835, -1.8223, LuxScale.LOG10)
EXP1_TARGET = ProbitModel(0.0, -0.003, 1.0, 1.0, 2.035, LuxScale.LOG10)
EXP2_EXISTING = ProbitModel(0.0, -0.005, 1.0, 1.0, -0.170, LuxScale.RAW)
EXP2_TARGET = ProbitModel(0.0, -0.003, 1.0, 1.0, 2.035, LuxScale.RAW)
ALL_MODELS = [EXP1_EXISTING, EXP1_TARGET, EXP2_EXISTING, EXP2_TARGET]

_acceptance_lines: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _acceptance_lines


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
