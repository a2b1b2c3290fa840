import pytest

from ofanet import ndtensor as ndt


@pytest.fixture(autouse=True)
def _fresh_tape():
    """Keep graph residue from one test out of the next."""
    ndt.active_tape().clear()
    yield
    ndt.active_tape().clear()
