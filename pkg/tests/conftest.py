import numpy as np
import pytest

from orbimag import bundle

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def hopf():
    return bundle.hopf()


@pytest.fixture(scope="session")
def spindle():
    return bundle.spindle(2, 3)


@pytest.fixture(scope="session")
def product():
    return bundle.exact_product()


@pytest.fixture(scope="session", params=["hopf", "spindle", "exact_product"])
def model(request):
    return bundle.make_model(request.param)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
