import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultsim.friction import (
    FrictionDomainError,
    FrictionLaw,
    NodalRateFunctional,
    StateField,
    mu_star,
    nodal_rate_functional,
    phi,
    phi_grad,
    phi_of_speed,
    phi_second,
    psi,
    psi_prime,
    psi_second,
    rate_density,
    v_m,
)
from tests.factories import FrictionParamsFactory, create_state

PARAMS = FrictionParamsFactory()
RUINA = FrictionParamsFactory(law=FrictionLaw.RUINA)

states = st.floats(min_value=-12.0, max_value=-6.0)
speeds = st.floats(min_value=1e-8, max_value=1e-1)
angles = st.floats(min_value=0.0, max_value=2 * np.pi)


def test_reference_coefficient():
    assert mu_star(PARAMS.V0, PARAMS.L / PARAMS.V0, PARAMS) == 0.6


@pytest.mark.parametrize("alpha", np.linspace(-20.0, 5.0, 26))
def test_threshold_is_root_of_coefficient(alpha):
    assert mu_star(v_m(alpha, PARAMS), np.exp(alpha), PARAMS) == (
        pytest.approx(0.0, abs=1e-10)
    )


def test_mu_star_domain():
    with pytest.raises(FrictionDomainError):
        mu_star(0.0, 1.0, PARAMS)
    with pytest.raises(FrictionDomainError):
        mu_star(1.0, -1.0, PARAMS)
    # also a ValueError, for callers that do not know about faultsim
    with pytest.raises(ValueError):
        mu_star(-1.0, 1.0, PARAMS)


def test_threshold_is_vectorised_and_decreasing():
    alphas = np.linspace(-20.0, 5.0, 50)
    thresholds = v_m(alphas, PARAMS)
    assert thresholds.shape == alphas.shape
    assert np.all(np.diff(thresholds) < 0)
    assert isinstance(v_m(-10.0, PARAMS), float)


@settings(max_examples=300, deadline=None)
@given(speed=speeds, angle=angles, alpha=states)
def test_phi_gradient_matches_finite_differences(speed, angle, alpha):
    v = speed * np.array([np.cos(angle), np.sin(angle)])
    step = 1e-6 * speed
    numeric = np.array(
        [
            phi(v + step * e, alpha, PARAMS) - phi(v - step * e, alpha, PARAMS)
            for e in np.eye(2)
        ]
    ) / (2 * step)
    exact = phi_grad(v, alpha, PARAMS)
    assert np.linalg.norm(numeric - exact) <= 1e-6 * np.linalg.norm(exact)


@given(
    first=st.floats(min_value=0.0, max_value=1.0),
    second=st.floats(min_value=0.0, max_value=1.0),
    threshold=st.floats(min_value=1e-12, max_value=0.5),
)
def test_rate_density_is_convex_and_nonnegative(first, second, threshold):
    middle = 0.5 * (first + second)
    values = rate_density(np.array([first, second, middle]), threshold)
    assert np.all(values >= 0)
    assert values[2] <= 0.5 * (values[0] + values[1]) + 1e-15


@given(speed=speeds, alpha=states)
def test_phi_is_friction_times_speed_derivative(speed, alpha):
    """Outside the threshold the slope of phi is |sigma_n| mu"""
    v = np.array([speed, 0.0])
    theta = np.exp(alpha)
    expected = PARAMS.sigma_n_bar * mu_star(speed, theta, PARAMS)
    assert phi_grad(v, alpha, PARAMS)[0] == pytest.approx(expected, rel=1e-9)


def test_phi_vanishes_below_threshold():
    alpha = -50.0  # threshold of about 100 m/s
    assert v_m(alpha, PARAMS) > 1.0
    assert phi([1.0, 0.0], alpha, PARAMS) == 0.0
    assert np.all(phi_grad([1.0, 0.0], alpha, PARAMS) == 0.0)
    assert phi_second(1.0, alpha, PARAMS) == 0.0
    assert np.all(phi_grad([0.0, 0.0], -10.0, PARAMS) == 0.0)


def test_phi_vectorised_variants():
    alpha = np.array([-10.0, -8.0])
    speed = np.array([1e-4, 2e-3])
    values = phi_of_speed(speed, alpha, PARAMS)
    assert values == pytest.approx(
        [phi([s, 0.0], a, PARAMS) for s, a in zip(speed, alpha)]
    )
    second = phi_second(speed, alpha, PARAMS)
    assert second == pytest.approx(PARAMS.a * PARAMS.sigma_n_bar / speed)


def test_zero_normal_stress_switches_friction_off():
    params = FrictionParamsFactory(sigma_n_bar=0.0)
    assert phi([1e-3, 0.0], -10.0, params) == 0.0


@pytest.mark.parametrize("params", [PARAMS, RUINA])
@given(
    alpha=st.floats(min_value=-5.0, max_value=5.0),
    speed=st.floats(min_value=1e-8, max_value=1e-3),
)
def test_psi_derivatives(params, alpha, speed):
    step = 1e-5
    slope = (
        psi(alpha + step, speed, params) - psi(alpha - step, speed, params)
    ) / (2 * step)
    assert slope == pytest.approx(
        psi_prime(alpha, speed, params), rel=1e-5, abs=1e-6
    )
    curvature = (
        psi_prime(alpha + step, speed, params)
        - psi_prime(alpha - step, speed, params)
    ) / (2 * step)
    assert curvature == pytest.approx(
        psi_second(alpha, speed, params), rel=1e-5, abs=1e-6
    )
    assert psi_second(alpha, speed, params) >= 0


def test_state_evolution_laws():
    assert psi_prime(0.0, 0.0, PARAMS) == pytest.approx(-1.0)
    assert psi_prime(0.0, PARAMS.L, PARAMS) == pytest.approx(0.0)
    # slip law: no evolution without slip
    assert psi_prime(-3.0, 0.0, RUINA) == 0.0
    assert psi(-3.0, 0.0, RUINA) == 0.0
    stationary = np.log(PARAMS.L / 1e-6)
    assert psi_prime(stationary, 1e-6, PARAMS) == pytest.approx(0, abs=1e-12)
    assert psi_prime(stationary, 1e-6, RUINA) == pytest.approx(0, abs=1e-12)
    with pytest.raises(FrictionDomainError):
        psi_prime(0.0, -1.0, PARAMS)


def test_state_field():
    state = create_state([1.0, 2.0], cell_measures=[0.5, 1.5])
    other = state.with_values(np.array([1.0, 4.0]))
    assert np.array_equal(other.cell_measures, state.cell_measures)
    assert state.distance(other) == pytest.approx(np.sqrt(1.5 * 4))
    with pytest.raises(ValueError):
        StateField(values=np.zeros(2), cell_measures=np.ones(3))
    with pytest.raises(FrictionDomainError):
        create_state([np.nan, 1.0])


def test_nodal_rate_functional():
    jumps = np.array([[1e-3, 0.0], [0.0, -2e-4], [0.0, 0.0]])
    state = create_state([-10.0, -9.0, -8.0])
    weights = np.array([0.5, 1.0, 0.5])
    expected = sum(
        w * phi(v, a, PARAMS) for v, a, w in zip(jumps, state.values, weights)
    )
    assert nodal_rate_functional(jumps, state, weights, PARAMS) == (
        pytest.approx(expected)
    )
    per_node = [PARAMS, PARAMS, FrictionParamsFactory(sigma_n_bar=0.0)]
    assert nodal_rate_functional(jumps, state, weights, per_node) == (
        pytest.approx(expected)
    )


def test_separable_functional():
    functional = NodalRateFunctional.from_nodes(
        np.array([0.5, 1.0]), np.array([-10.0, -10.0]), [PARAMS, PARAMS]
    )
    s = np.array([1e-3, -1e-3])
    assert functional.energy(s) == pytest.approx(
        1.5 * phi([1e-3, 0.0], -10.0, PARAMS)
    )
    gradient = functional.gradient(s)
    assert gradient[0] > 0 > gradient[1]
    assert gradient[0] == pytest.approx(-0.5 * gradient[1])
    assert functional.hessian(s) == pytest.approx(
        functional.coefficients / 1e-3
    )


components = st.floats(min_value=-1e-1, max_value=1e-1)
velocities = st.tuples(components, components).map(np.array)


@settings(max_examples=10_000, deadline=None)
@given(first=velocities, second=velocities, alpha=states)
def test_phi_is_convex_along_segments(first, second, alpha):
    values = [phi(v, alpha, PARAMS) for v in (first, second)]
    middle = phi(0.5 * (first + second), alpha, PARAMS)
    tolerance = 1e-12 * (abs(values[0]) + abs(values[1])) + 1e-15
    assert middle <= 0.5 * (values[0] + values[1]) + tolerance
