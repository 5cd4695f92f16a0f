import pytest

from ldacs_puf.puf import generate_device


@pytest.fixture(scope="session")
def device():
    return generate_device(7, 0.0)


@pytest.fixture(scope="session")
def noisy_device():
    from ldacs_puf.puf import calibrate_sigma_for_ber
    return generate_device(11, calibrate_sigma_for_ber(11, 0.02))
