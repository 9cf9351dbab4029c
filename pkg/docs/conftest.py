"""Special doctest Pytest configuration. Other configuration in tests/conftest.py"""
from typing import Any, Dict

import numpy as np
import pytest
from sybil import Sybil
from sybil.parsers.myst import PythonCodeBlockParser

from faultsim.friction import (
    FrictionLaw,
    RateStateSettings,
    mu_star,
    phi_of_speed,
    psi_prime,
    v_m,
)
from faultsim.scenario import (
    ScenarioConfig,
    build_hierarchy,
    detect_slip_events,
    dump_config,
    load_config,
    preset,
    run_scenario,
)
from faultsim.stepper import Stepper
from faultsim.storage import RunStorage


@pytest.fixture
def in_tmp_dir(tmp_path, monkeypatch):
    """Examples write output relative to the working directory"""
    monkeypatch.chdir(tmp_path)
    return tmp_path


def setup_namespace(namespace: Dict[str, Any]):
    """All imports done before each of the examples in docs"""
    namespace.update(
        {
            "np": np,
            "FrictionLaw": FrictionLaw,
            "RateStateSettings": RateStateSettings,
            "mu_star": mu_star,
            "v_m": v_m,
            "phi_of_speed": phi_of_speed,
            "psi_prime": psi_prime,
            "ScenarioConfig": ScenarioConfig,
            "preset": preset,
            "load_config": load_config,
            "dump_config": dump_config,
            "build_hierarchy": build_hierarchy,
            "detect_slip_events": detect_slip_events,
            "run_scenario": run_scenario,
            "Stepper": Stepper,
            "RunStorage": RunStorage,
        }
    )


pytest_collect_file = Sybil(
    parsers=[PythonCodeBlockParser()],
    pattern="*.md",
    fixtures=["in_tmp_dir"],
    setup=setup_namespace,
).pytest()
