import pytest
from hypothesis import settings

from factories import random_dataset

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def small_ds():
    return random_dataset(seed=11, n_zones=10, n_people=50)
