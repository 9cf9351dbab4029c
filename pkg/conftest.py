"""Pytest fixtures shared by both tests and docs modules"""
import pytest

from faultsim.scenario import ScenarioConfig, spring_slider
from tests.factories import coarsen


@pytest.fixture
def a_coarse_spring_slider() -> ScenarioConfig:
    """Spring slider with 12 vertices per block and a single mesh level"""
    return coarsen(spring_slider())


@pytest.fixture
def an_output_dir(tmp_path):
    return tmp_path / "output"
