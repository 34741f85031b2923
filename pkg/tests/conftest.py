import pytest

from affordlab.backends import AffordanceKB, NoiseModel, ScriptedChat, ScriptedDetector
from affordlab.scenarios import furniture_manifest, household_manifest


@pytest.fixture(scope="session")
def kb():
    return AffordanceKB.load()


@pytest.fixture(scope="session")
def furniture():
    return furniture_manifest()


@pytest.fixture(scope="session")
def household():
    return household_manifest()


@pytest.fixture
def chat(kb):
    return ScriptedChat(kb)


@pytest.fixture
def furniture_detector(furniture):
    return ScriptedDetector(furniture, NoiseModel())
