import pytest

from flowdelta import tensor as T


@pytest.fixture(autouse=True)
def clean_tape():
    T.active_tape().reset()
    yield
    T.active_tape().reset()
