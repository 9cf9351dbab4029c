import numpy as np
import pytest

from faultsim.core import EdgeTag
from faultsim.fem import DofMap
from faultsim.mesh import build_initial_mesh
from faultsim.mortar import FaultTrace
from faultsim.scenario import build_hierarchy
from faultsim.stepper import LoadingProfile, Stepper
from tests.factories import (
    FrictionParamsFactory,
    MaterialParamsFactory,
    SolverConfigFactory,
    create_stack,
    create_strip,
)


@pytest.fixture
def material():
    return MaterialParamsFactory()


@pytest.fixture
def friction_params():
    return FrictionParamsFactory()


@pytest.fixture
def spring_slider_specs():
    return create_stack([-1.0, 0.0, 1.0])


@pytest.fixture
def spring_slider_meshes(spring_slider_specs):
    """5 x 1 grid of unit cells per block"""
    return build_initial_mesh(spring_slider_specs, target_h0=1.0)


def fault_pair(bottom_xs, top_xs):
    """A fixed bottom strip and a driven top strip touching at y=0, with
    the given fault vertex columns. Returns meshes, dofmap and traces
    """
    bottom = create_strip(
        bottom_xs,
        -1.0,
        0.0,
        bottom_tag=EdgeTag.dirichlet(),
        top_tag=EdgeTag.fault_bottom(1),
        subdomain=1,
    )
    top = create_strip(
        top_xs,
        0.0,
        1.0,
        bottom_tag=EdgeTag.fault_top(1),
        top_tag=EdgeTag.dirichlet(driven=True),
        subdomain=2,
    )
    meshes = [bottom, top]
    dofmap = DofMap(meshes)
    traces = (
        FaultTrace.from_mesh(bottom, 1, dofmap),
        FaultTrace.from_mesh(top, 1, dofmap),
    )
    return meshes, dofmap, traces


@pytest.fixture
def a_matching_fault():
    xs = np.linspace(0.0, 1.0, 5)
    return fault_pair(xs, xs)


@pytest.fixture
def a_nonmatching_fault():
    """Bottom side twice as fine as the top side"""
    return fault_pair(np.linspace(0.0, 1.0, 9), np.linspace(0.0, 1.0, 5))


@pytest.fixture
def a_coarse_stepper(a_coarse_spring_slider):
    config = a_coarse_spring_slider
    return Stepper(
        build_hierarchy(config),
        config.material,
        [config.friction_params(i) for i in config.interfaces],
        LoadingProfile(),
        SolverConfigFactory(),
    )
