import numpy as np
import pytest

from critwalk import _backend, analytics


def pytest_report_header(config):
    return f"critwalk kernel backend: {_backend.NAME} (available: {', '.join(_backend.available())})"


@pytest.fixture(scope="session")
def binary():
    return analytics.named_law("binary")


@pytest.fixture(scope="session")
def mix13():
    return analytics.named_law("mix13")


@pytest.fixture(scope="session")
def prof06(binary):
    return analytics.profile(binary, 0.6)


@pytest.fixture(params=_backend.available())
def backend(request):
    return request.param


@pytest.fixture
def gen():
    return np.random.default_rng(12345)
