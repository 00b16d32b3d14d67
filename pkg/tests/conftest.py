import pytest
from synthetic import SyntheticModel

from lvto import gp, homog, microlib


@pytest.fixture
def synthetic_model() -> SyntheticModel:
    return SyntheticModel()


@pytest.fixture(scope="session")
def small_library() -> list[microlib.LibrarySample]:
    return microlib.build_library(samples_per_class=6, vf_range=(0.3, 0.9), resolution=50)


@pytest.fixture(scope="session")
def small_dataset(small_library: list[microlib.LibrarySample]) -> homog.Dataset:
    return homog.homogenize_library(small_library, homog.BaseMaterial(), workers=4)


@pytest.fixture(scope="session")
def small_model(small_dataset: homog.Dataset) -> gp.MrLvgpModel:
    return gp.fit(small_dataset, starts=4, seed=0, workers=4)


@pytest.fixture(scope="session")
def default_model() -> gp.MrLvgpModel:
    dataset = homog.homogenize_library(microlib.build_library(), homog.BaseMaterial(), workers=4)
    return gp.fit(dataset, starts=8, seed=0, workers=4)
