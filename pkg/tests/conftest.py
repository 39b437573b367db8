import numpy as np
import pytest

from dualfilter import kernels
from dualfilter.theorems import random_model

BACKENDS = ["python"] + (["cython"] if kernels.compiled_backend is not None else [])

# acceptance outcomes, printed once at the end of the session
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def make_model():
    def make(d, m, seed=0, temperature=1.0):
        return random_model(np.random.default_rng(seed), d, m, temperature)
    return make


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
