from decimal import Decimal

import pytest
from hypothesis import HealthCheck, settings

from ppbsp import phe

settings.register_profile(
    "ppbsp",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ppbsp")


@pytest.fixture(scope="session")
def keypair_256():
    return phe.keygen(256)


@pytest.fixture(scope="session")
def second_keypair_256():
    return phe.keygen(256)


@pytest.fixture(scope="session")
def tiny_keypair():
    """The (p=5, q=7) hand-check keypair: n=35, g=36."""
    return phe.keygen(primes=(5, 7))


MICRO = Decimal("0.000001")
