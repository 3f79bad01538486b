import pytest

from cascast import autograd


@pytest.fixture(autouse=True)
def _numeric_test_mode():
    """Every test starts in 64-bit mode; trainers switch themselves."""
    autograd.set_mode("test")
    yield
    autograd.set_mode("test")
