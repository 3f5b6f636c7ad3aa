import pytest
from hypothesis import settings

from vepo import build_toy_mdp, toy_behavior

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy():
    return build_toy_mdp()


@pytest.fixture(scope="session")
def behavior():
    return toy_behavior()

