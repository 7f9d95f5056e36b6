import numpy as np
import pytest

from ldnlm import attention, nlm


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numba", "numpy"])
def nlm_kernel(request):
    return nlm._nlm_numba if request.param == "numba" else nlm._nlm_numpy


@pytest.fixture(params=["numba", "numpy"])
def attn_kernels(request):
    if request.param == "numba":
        return attention._linear_numba, attention._softmax_numba
    return attention._linear_numpy, attention._softmax_numpy


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
