import pytest

from isokit.cli import fixture_path
from isokit.model import load_model


@pytest.fixture(scope="session")
def k2():
    return load_model(fixture_path("k2.json"))


@pytest.fixture(scope="session")
def c3():
    return load_model(fixture_path("c3.json"))


@pytest.fixture(scope="session")
def nonsym3():
    return load_model(fixture_path("nonsym3.json"))
