import numpy as np
import pytest
import scipy.optimize
import scipy.sparse as sp
from scipy.special import lambertw

from faultsim.exceptions import ConvergenceError
from faultsim.fem import compose_an
from faultsim.friction import FrictionLaw, NodalRateFunctional, StateField
from faultsim.scenario import build_hierarchy, spring_slider
from faultsim.solver import (
    RateProblem,
    SolverReport,
    _contact_minimizer,
    contact_functional,
    gs_sweep,
    line_search,
    solve_rate_reference,
    solve_rate_tnnmg,
    solve_state,
    truncate,
    truncated_system,
)
from faultsim.stepper import Stepper
from tests.factories import (
    FrictionParamsFactory,
    SolverConfigFactory,
    coarsen,
    create_state,
)


def create_problem(
    seed=0, n_contact=4, n_free=3, coefficient=1.0, threshold=1e-4
):
    """Mass dominated random problem with scalar contact slots first and
    2x2 vertex blocks after them
    """
    rng = np.random.default_rng(seed)
    n = n_contact + 2 * n_free
    noise = rng.normal(size=(n, n))
    hessian = n * np.identity(n) + 0.1 * (noise + noise.T)
    starts = list(range(n_contact)) + list(range(n_contact, n, 2))
    sizes = [1] * n_contact + [2] * n_free
    functional = NodalRateFunctional(
        coefficients=np.full(n_contact, coefficient),
        thresholds=np.full(n_contact, threshold),
    )
    return RateProblem(
        hessian=sp.csr_matrix(hessian),
        rhs=10 * rng.normal(size=n),
        block_starts=np.array(starts),
        block_sizes=np.array(sizes),
        contact_slots=np.arange(n_contact),
        functional=functional,
    )


def test_state_step_from_rest():
    """No slip for a unit step gives beta = exp(-beta)"""
    state = create_state([0.0])
    updated = solve_state(state, np.zeros(1), 1.0, FrictionParamsFactory())
    assert updated.values[0] == pytest.approx(np.real(lambertw(1.0)), 1e-9)
    assert updated.values[0] == pytest.approx(0.5671432904, abs=1e-9)


@pytest.mark.parametrize("law", list(FrictionLaw))
def test_state_converges_to_steady_state(law):
    params = FrictionParamsFactory(law=law)
    state = create_state([0.0, 0.0])
    for _ in range(50):
        state = solve_state(state, np.full(2, 1e-6), 10.0, params)
    assert state.values == pytest.approx(np.log(10.0), abs=1e-8)


def test_state_update_special_cases():
    params = FrictionParamsFactory()
    state = create_state([-10.0, -10.0])
    same = solve_state(state, np.ones(2), 0.0, params)
    assert np.array_equal(same.values, state.values)
    assert same.values is not state.values
    with pytest.raises(ValueError):
        solve_state(state, np.ones(2), -1.0, params)

    # relative velocities are reduced to their magnitude
    jumps = np.array([[3e-6, 4e-6], [0.0, 0.0]])
    from_vectors = solve_state(state, jumps, 1e-3, params)
    from_speeds = solve_state(state, np.array([5e-6, 0.0]), 1e-3, params)
    assert from_vectors.values == pytest.approx(from_speeds.values)

    only_second = solve_state(state, np.ones(2), 1e-3, params, contact=[1])
    assert only_second.values[0] == -10.0
    assert only_second.values[1] != -10.0
    masked = solve_state(
        state, np.ones(2), 1e-3, params, contact=np.array([False, True])
    )
    assert np.array_equal(masked.values, only_second.values)


@pytest.mark.parametrize("rhs", [3.0, -3.0, 0.5])
def test_contact_minimizer(rhs):
    h, coefficient, threshold = 2.0, 0.5, 1e-3

    def energy(s):
        speed = abs(s)
        friction = 0.0
        if speed > threshold:
            friction = (
                speed * np.log(speed / threshold) - speed + threshold
            )
        return 0.5 * h * s**2 - rhs * s + coefficient * friction

    bound = abs(rhs) / h
    expected = scipy.optimize.minimize_scalar(
        energy,
        bounds=(-bound, bound),
        method="bounded",
        options={"xatol": 1e-12},
    ).x
    found = _contact_minimizer(rhs, h, coefficient, threshold)
    assert found == pytest.approx(expected, abs=1e-7)
    assert np.sign(found) == np.sign(rhs)


def test_contact_minimizer_inside_threshold():
    assert _contact_minimizer(1e-4, 1.0, 5.0, 1e-3) == 1e-4
    assert _contact_minimizer(-3.0, 2.0, 0.0, 1e-3) == -1.5


def test_single_node_problem():
    functional = NodalRateFunctional(
        coefficients=np.array([0.5]), thresholds=np.array([1e-3])
    )
    problem = RateProblem(
        hessian=sp.csr_matrix([[2.0]]),
        rhs=np.array([3.0]),
        block_starts=np.array([0]),
        block_sizes=np.array([1]),
        contact_slots=np.array([0]),
        functional=functional,
    )
    z, report = solve_rate_tnnmg(problem, SolverConfigFactory())
    assert z[0] == pytest.approx(_contact_minimizer(3.0, 2.0, 0.5, 1e-3))
    assert report.iterations <= 3


@pytest.mark.parametrize("local_solver", ["block", "scalar_bound"])
def test_gauss_seidel_decreases_energy(local_solver):
    problem = create_problem(seed=1)
    z = np.zeros(problem.size)
    energies = [problem.energy(z)]
    for _ in range(5):
        z = gs_sweep(z, problem, local_solver)
        energies.append(problem.energy(z))
    assert np.all(np.diff(energies) <= 1e-12 * np.abs(energies[1:]))
    assert energies[-1] < energies[0]


def test_line_search_on_quadratic():
    problem = create_problem(coefficient=0.0)
    z = np.zeros(problem.size)
    newton = np.linalg.solve(problem.hessian.toarray(), -problem.gradient(z))
    assert line_search(z, newton, problem) == pytest.approx(1.0, rel=1e-9)
    assert line_search(z, -newton, problem) == 0.0
    assert line_search(z, np.zeros(problem.size), problem) == 0.0


def test_line_search_never_increases_energy():
    problem = create_problem(seed=3)
    rng = np.random.default_rng(4)
    z = rng.normal(size=problem.size)
    for _ in range(10):
        direction = rng.normal(size=problem.size)
        rho = line_search(z, direction, problem)
        assert rho >= 0
        assert problem.energy(z + rho * direction) <= problem.energy(z)


def test_truncation_of_nodes_on_the_threshold():
    problem = create_problem(n_contact=3, n_free=1, threshold=1e-4)
    z = np.array([1e-4, -1e-4, 0.5, 1.0, 1.0])
    truncation = truncate(z, problem)
    assert truncation.truncated.tolist() == [True, True, False]
    assert truncation.size == 2
    assert truncation.curvature == pytest.approx([0.0, 0.0, 1.0 / 0.5])

    matrix, rhs, keep = truncated_system(z, problem, truncation)
    dense = matrix.toarray()
    assert keep.tolist() == [False, False, True, True, True]
    assert dense[0].tolist() == [1.0, 0.0, 0.0, 0.0, 0.0]
    assert dense[:, 1].tolist() == [0.0, 1.0, 0.0, 0.0, 0.0]
    assert rhs[:2].tolist() == [0.0, 0.0]
    expected = problem.hessian.toarray()[2, 2] + 2.0
    assert dense[2, 2] == pytest.approx(expected)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("local_solver", ["block", "scalar_bound"])
def test_tnnmg_matches_gauss_seidel(seed, local_solver):
    problem = create_problem(seed=seed)
    config = SolverConfigFactory(local_solver=local_solver)
    z, report = solve_rate_tnnmg(problem, config)
    reference = solve_rate_reference(problem)
    assert problem.energy_norm(z - reference) <= 1e-7
    assert 1 <= len(report.energies) <= report.iterations
    assert np.all(
        np.diff(report.energies) <= 1e-12 * np.abs(report.energies[1:])
    )
    assert len(report.damping) == len(report.energies)
    assert all(rho >= 0 for rho in report.damping)


def test_tnnmg_uses_initial_iterate():
    problem = create_problem(seed=2)
    config = SolverConfigFactory()
    solution, _ = solve_rate_tnnmg(problem, config)
    z, report = solve_rate_tnnmg(problem, config, z_init=solution)
    assert report.iterations == 1
    assert problem.energy_norm(z - solution) <= 1e-9


def test_tnnmg_iteration_cap():
    problem = create_problem()
    config = SolverConfigFactory(tnnmg_cap=1, mg_tolerance=1e-300)
    with pytest.raises(ConvergenceError) as error:
        solve_rate_tnnmg(problem, config)
    assert error.value.report.iterations == 1
    assert "did not converge" in str(error.value)


def test_energy_rise_does_not_end_the_solve(monkeypatch, caplog):
    problem = create_problem(seed=3)

    def uphill(z, problem, truncation, config):
        return 100 * np.ones(problem.size)

    monkeypatch.setattr("faultsim.solver.linear_correction", uphill)
    monkeypatch.setattr("faultsim.solver.line_search", lambda *args: 1.0)
    z, report = solve_rate_tnnmg(problem, SolverConfigFactory())
    assert report.converged
    assert report.fallbacks == report.iterations > 1
    assert all(rho == 0 for rho in report.damping)
    assert "dropping the multigrid correction" in caplog.text
    reference = solve_rate_reference(problem)
    assert problem.energy_norm(z - reference) <= 1e-7


def test_solver_report_totals(caplog):
    problem = create_problem()
    config = SolverConfigFactory()
    report = SolverReport(t=1.0, tau=0.5)
    for _ in range(2):
        _, rate_report = solve_rate_tnnmg(problem, config)
        report.rate_solves.append(rate_report)
    report.state_increments.extend([1e-3, 1e-9])
    assert report.fixed_point_iterations == 2
    assert report.mg_iterations == 2 * report.tnnmg_iterations[0]
    assert report.v_cycles == config.v_cycles * report.mg_iterations
    assert len(report.energies) == 2

    report.warn("not contracting")
    assert report.warnings == ["not contracting"]
    assert "not contracting" in caplog.text


@pytest.fixture(scope="module")
def a_refined_stepper():
    """Spring slider with one refinement round, so two multigrid levels"""
    config = coarsen(spring_slider(), rounds=1)
    return Stepper(
        build_hierarchy(config),
        config.material,
        [config.friction_params(1)],
        config.loading,
        SolverConfigFactory(),
    )


def create_mesh_problem(stepper, seed):
    """Rate problem of one step from the initial state with random step
    size, right hand side and fault state
    """
    rng = np.random.default_rng(seed)
    state = stepper.initial_state()
    coupling = stepper.coupling(state)
    operators = stepper.operators
    tau = 10 ** rng.uniform(-5, -3)
    a_n = compose_an(
        operators.mass, operators.viscosity, operators.elasticity, tau
    )
    velocity = 10 ** rng.uniform(-4, -1) * rng.normal(size=a_n.shape[0])
    alphas = [
        StateField(
            values=rng.uniform(-12.0, -6.0, size=len(alpha.values)),
            cell_measures=alpha.cell_measures,
        )
        for alpha in state.alpha
    ]
    return RateProblem.from_step(
        a_n,
        a_n @ velocity,
        coupling.transform.lift(stepper.dirichlet_velocity(state.t + tau)),
        coupling.transform,
        contact_functional(coupling, alphas, stepper.friction),
        stepper.dofmap.free_dofs,
        stepper.transfers,
    )


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_tnnmg_matches_gauss_seidel_on_a_mesh(a_refined_stepper, seed):
    problem = create_mesh_problem(a_refined_stepper, seed)
    assert len(problem.transfers) == 1
    assert len(problem.contact_slots) > 0
    z, report = solve_rate_tnnmg(problem, SolverConfigFactory())
    assert report.converged
    reference = solve_rate_reference(problem)
    assert problem.energy_norm(z - reference) <= 1e-7
    energies = np.array(report.energies)
    assert np.all(np.diff(energies) <= 1e-12 * np.abs(energies[1:]))
