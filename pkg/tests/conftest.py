import pytest
from hypothesis import settings

from sensormux.sensorstack import load_profile

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def poco():
    return load_profile("poco_f1")


@pytest.fixture(scope="session")
def pixel():
    return load_profile("pixel_4a")


@pytest.fixture(scope="session")
def moto():
    return load_profile("moto_g5")
