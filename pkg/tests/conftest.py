import pytest

import archnet.tensor


@pytest.fixture(autouse=True)
def finite_checks():
    """Every forward op asserts finite outputs while tests run."""
    archnet.tensor.check_finite = True
    yield
    archnet.tensor.check_finite = False
