import pytest

from gbv.models.expfam import build_glm
from gbv.simulate import gen_glm


@pytest.fixture
def logistic_glm():
    data = gen_glm("logistic", [0.5, -1.0], 400, ("iid-gaussian", 1.0), seed=3)
    return build_glm(data)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
