"""Algebraic solution of one time step

The step problem couples the rate problem (a convex minimization for the
velocity, given the state) with the state problem (one scalar equation per
fault node, given the velocity). These are solved by a relaxed fixed point
iteration. The rate problem is solved by truncated nonsmooth Newton
multigrid: a nonlinear Gauss-Seidel sweep, a linear correction on the nodes
where the friction energy is smooth and a line search.

All rate problem vectors live in the constrained coordinates z of a
JumpBasisTransform. Contact node unknowns are tangential slip rates.
"""
from dataclasses import dataclass, field, replace
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy.optimize
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field

from faultsim.exceptions import ConvergenceError
from faultsim.friction import (
    FrictionParams,
    NodalRateFunctional,
    StateField,
    l2_state_norm,
    psi_prime,
)
from faultsim.logs import get_module_logger
from faultsim.mortar import ContactCoupling, JumpBasisTransform
from faultsim.multigrid import Multigrid

logger = get_module_logger("solver")

# relative tolerance for |s| = V_m when selecting truncated nodes
KINK_TOLERANCE = 1e-14
BRACKET_EXPANSIONS = 200
MAX_BISECTIONS = 200
LINE_SEARCH_TOLERANCE = 1e-12
# energy rises below this, relative to |J|, are roundoff
ENERGY_RISE_TOLERANCE = 1e-14
NON_CONTRACTION_WINDOW = 3


class SolverConfig(BaseModel):
    """Tolerances and iteration limits of the algebraic solver"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    omega: float = Field(default=0.5, gt=0, le=1)  # state relaxation
    fixed_point_factor: float = Field(default=0.1, gt=0)  # times delta_tau
    mg_tolerance: float = Field(default=1e-8, gt=0)  # a_n energy norm
    v_cycles: int = Field(default=5, ge=1)
    pre_smoothing: int = Field(default=3, ge=0)
    post_smoothing: int = Field(default=3, ge=0)
    smoother_damping: float = Field(default=0.7, gt=0, lt=2)
    state_tolerance: float = Field(default=1e-12, gt=0)
    tnnmg_cap: int = Field(default=200, ge=1)
    fixed_point_cap: int = Field(default=100, ge=1)
    local_solver: Literal["block", "scalar_bound"] = "block"


@dataclass
class RateSolveReport:
    """What happened in one truncated nonsmooth Newton multigrid solve"""

    iterations: int = 0
    v_cycles: int = 0
    energies: List[float] = field(default_factory=list)
    damping: List[float] = field(default_factory=list)
    truncated: List[int] = field(default_factory=list)
    fallbacks: int = 0  # corrections dropped because the energy went up
    converged: bool = False


@dataclass
class SolverReport:
    """Diagnostics of one time step

    Notes
    -----
    Energies recorded within each rate solve are non-increasing.
    """

    t: float = 0.0
    tau: float = 0.0
    rate_solves: List[RateSolveReport] = field(default_factory=list)
    state_increments: List[float] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def fixed_point_iterations(self) -> int:
        return len(self.state_increments)

    @property
    def tnnmg_iterations(self) -> List[int]:
        return [solve.iterations for solve in self.rate_solves]

    @property
    def mg_iterations(self) -> int:
        """TNNMG iterations summed over all fixed point iterations"""
        return sum(self.tnnmg_iterations)

    @property
    def v_cycles(self) -> int:
        return sum(solve.v_cycles for solve in self.rate_solves)

    @property
    def energies(self) -> List[List[float]]:
        return [solve.energies for solve in self.rate_solves]

    def warn(self, message: str):
        logger.warning(message)
        self.warnings.append(message)


@dataclass
class RateProblem:
    """J(z) = 1/2 z^T H z - b^T z + sum_p c_p g(|z_p|) over contact slots p

    Parameters
    ----------
    hessian:
        H, symmetric positive definite
    rhs:
        b
    block_starts, block_sizes:
        Gauss-Seidel blocks, one per free vertex, in ascending order
    contact_slots:
        Positions of the tangential slip rates in z. Aligned with functional
    functional:
        Friction energy of the contact nodes
    transfers:
        Multigrid prolongations, coarse to fine. The last one maps into z
    """

    hessian: sp.csr_matrix
    rhs: np.ndarray
    block_starts: np.ndarray
    block_sizes: np.ndarray
    contact_slots: np.ndarray
    functional: NodalRateFunctional
    transfers: Sequence[sp.csr_matrix] = ()

    def __post_init__(self):
        self.hessian = sp.csr_matrix(self.hessian)
        n = self.hessian.shape[0]
        self.diagonal = self.hessian.diagonal()
        self.upper_diagonal = np.append(self.hessian.diagonal(1), 0.0)
        self.contact_position = np.full(n, -1, dtype=np.int64)
        self.contact_position[self.contact_slots] = np.arange(
            len(self.contact_slots)
        )

    @classmethod
    def from_step(
        cls,
        a_n: sp.spmatrix,
        l_n: np.ndarray,
        lift: np.ndarray,
        transform: JumpBasisTransform,
        functional: NodalRateFunctional,
        free_dofs: np.ndarray,
        transfers: Sequence[sp.spmatrix] = (),
    ) -> "RateProblem":
        """Restrict a nodal step problem to the constrained coordinates

        Parameters
        ----------
        a_n, l_n:
            Nodal matrix and right hand side of the Newmark step
        lift:
            Nodal vector carrying the Dirichlet velocities
        free_dofs:
            Nodal dofs off the Dirichlet boundary on the finest level
        transfers:
            Nodal prolongations between free dofs of consecutive levels,
            coarse to fine. The last one ends on free_dofs
        """
        basis = transform.nodal_basis
        hessian = sp.csr_matrix(basis.T @ a_n @ basis)
        rhs = basis.T @ (l_n - a_n @ lift)
        levels = [sp.csr_matrix(p) for p in transfers]
        if levels:
            n = a_n.shape[0]
            separate = (sp.identity(n, format="csr") - transform.coupling)[
                :, free_dofs
            ]
            levels[-1] = sp.csr_matrix(
                transform.basis_separated.T @ separate @ levels[-1]
            )
        return cls(
            hessian=hessian,
            rhs=np.asarray(rhs, dtype=float),
            block_starts=transform.block_starts,
            block_sizes=transform.block_sizes,
            contact_slots=transform.contact_slots,
            functional=functional,
            transfers=levels,
        )

    def with_functional(self, functional: NodalRateFunctional):
        return replace(self, functional=functional)

    @property
    def size(self) -> int:
        return len(self.rhs)

    def energy(self, z: np.ndarray) -> float:
        quadratic = 0.5 * z @ (self.hessian @ z) - self.rhs @ z
        return float(quadratic + self.functional.energy(z[self.contact_slots]))

    def gradient(self, z: np.ndarray) -> np.ndarray:
        gradient = self.hessian @ z - self.rhs
        gradient[self.contact_slots] += self.functional.gradient(
            z[self.contact_slots]
        )
        return gradient

    def energy_norm(self, z: np.ndarray) -> float:
        return float(np.sqrt(max(z @ (self.hessian @ z), 0.0)))


def solve_state(
    alpha_prev: StateField,
    jump_rates: np.ndarray,
    tau: float,
    params: FrictionParams,
    contact=None,
    tolerance: float = 1e-12,
) -> StateField:
    """Implicit Euler step of the state evolution at each contact node

    Solves beta - alpha_prev + tau * psi'(beta, V) = 0 by bisection. Nodes
    outside the contact set keep their state.

    Parameters
    ----------
    alpha_prev:
        State at the previous time step
    jump_rates:
        Slip rate magnitude per node, or (n, 2) relative velocities
    tau:
        Step size, 0 returns alpha_prev
    contact:
        Indices or mask of the nodes to update. All nodes by default

    Raises
    ------
    ConvergenceError
        If no bracket for the root was found
    """
    if tau < 0:
        raise ValueError(f"Time step cannot be negative, got {tau}")
    values = np.array(alpha_prev.values, dtype=float)
    if tau == 0:
        return alpha_prev.with_values(values)
    rates = np.asarray(jump_rates, dtype=float)
    if rates.ndim == 2:
        rates = np.linalg.norm(rates, axis=1)
    if contact is None:
        selected = np.arange(len(values))
    else:
        selected = np.asarray(contact)
        if selected.dtype == bool:
            selected = np.flatnonzero(selected)
    if not len(selected):
        return alpha_prev.with_values(values)

    previous = values[selected]
    speeds = rates[selected]

    def residual(beta):
        return beta - previous + tau * psi_prime(beta, speeds, params)

    low, high = previous - 1.0, previous + 1.0
    width = 1.0
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(BRACKET_EXPANSIONS):
            low_open = ~(residual(low) <= 0)
            high_open = ~(residual(high) >= 0)
            if not (low_open.any() or high_open.any()):
                break
            width *= 2
            low = np.where(low_open, low - width, low)
            high = np.where(high_open, high + width, high)
        else:
            raise ConvergenceError(
                "Could not bracket the state update at "
                f"{int((low_open | high_open).sum())} nodes"
            )
        for _ in range(MAX_BISECTIONS):
            if np.max(high - low) <= tolerance:
                break
            middle = 0.5 * (low + high)
            above = residual(middle) > 0
            high = np.where(above, middle, high)
            low = np.where(above, low, middle)
    values[selected] = 0.5 * (low + high)
    return alpha_prev.with_values(values)


def _contact_minimizer(
    rhs: float, h: float, coefficient: float, threshold: float
) -> float:
    """argmin over s of 1/2 h s^2 - rhs s + coefficient g(|s|)

    Below the threshold the friction energy is flat, above it the minimizer
    solves h |s| + coefficient log(|s|/threshold) = |rhs|. That equation is
    solved for log |s|.
    """
    target = rhs / h
    if abs(target) <= threshold or coefficient == 0:
        return target
    magnitude = abs(rhs)
    log_threshold = np.log(threshold)

    def inclusion(log_speed):
        return (
            h * np.exp(log_speed)
            + coefficient * (log_speed - log_threshold)
            - magnitude
        )

    root = scipy.optimize.brentq(
        inclusion,
        log_threshold,
        np.log(magnitude / h),
        xtol=1e-14,
        rtol=4 * np.finfo(float).eps,
    )
    return float(np.sign(rhs) * np.exp(root))


def _row_dot(matrix: sp.csr_matrix, row: int, z: np.ndarray) -> float:
    start, end = matrix.indptr[row], matrix.indptr[row + 1]
    return float(matrix.data[start:end] @ z[matrix.indices[start:end]])


def gs_sweep(
    z: np.ndarray,
    problem: RateProblem,
    local_solver: str = "block",
) -> np.ndarray:
    """One nonlinear block Gauss-Seidel sweep in ascending block order

    Every local step minimizes the energy in the block's unknowns exactly,
    except for free vertices in "scalar_bound" mode, which take three
    Jacobi-type steps preconditioned with the largest eigenvalue of the
    2x2 diagonal block.
    """
    z = np.array(z, dtype=float)
    H, b = problem.hessian, problem.rhs
    coefficients = problem.functional.coefficients
    thresholds = problem.functional.thresholds
    for start, size in zip(problem.block_starts, problem.block_sizes):
        if size == 2:
            residual = np.array(
                [
                    b[start] - _row_dot(H, start, z),
                    b[start + 1] - _row_dot(H, start + 1, z),
                ]
            )
            off = problem.upper_diagonal[start]
            block = np.array(
                [
                    [problem.diagonal[start], off],
                    [off, problem.diagonal[start + 1]],
                ]
            )
            z[start : start + 2] += _local_quadratic(
                block, residual, local_solver
            )
            continue
        h = problem.diagonal[start]
        rhs = b[start] - _row_dot(H, start, z) + h * z[start]
        k = problem.contact_position[start]
        if k < 0:
            z[start] = rhs / h
        else:
            z[start] = _contact_minimizer(
                rhs, h, coefficients[k], thresholds[k]
            )
    return z


def _local_quadratic(block, residual, local_solver):
    if local_solver == "block":
        return np.linalg.solve(block, residual)
    bound = float(np.linalg.eigvalsh(block)[-1])
    step = np.zeros(2)
    for _ in range(3):
        step += (residual - block @ step) / bound
    return step


@dataclass(frozen=True)
class Truncation:
    """Contact nodes left out of the linear correction, and the friction
    curvature at the others
    """

    truncated: np.ndarray  # mask over contact nodes
    curvature: np.ndarray  # second derivative of the friction energy

    @property
    def size(self) -> int:
        return int(self.truncated.sum())


def truncate(z: np.ndarray, problem: RateProblem) -> Truncation:
    """Contact nodes whose slip rate sits on the regularization threshold
    are truncated
    """
    speeds = np.abs(z[problem.contact_slots])
    thresholds = problem.functional.thresholds
    truncated = np.abs(speeds - thresholds) <= KINK_TOLERANCE * np.maximum(
        thresholds, speeds
    )
    curvature = problem.functional.hessian(speeds)
    curvature = np.where(truncated, 0.0, curvature)
    return Truncation(truncated=truncated, curvature=curvature)


def truncated_system(
    z: np.ndarray, problem: RateProblem, truncation: Truncation
) -> Tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """Newton matrix, right hand side and kept-dof mask of the correction

    Rows and columns of truncated unknowns are replaced by identity rows
    with a zero right hand side.
    """
    n = problem.size
    extra = np.zeros(n)
    extra[problem.contact_slots] = truncation.curvature
    keep = np.ones(n)
    keep[problem.contact_slots[truncation.truncated]] = 0.0
    selector = sp.diags(keep)
    matrix = selector @ (problem.hessian + sp.diags(extra)) @ selector
    matrix = sp.csr_matrix(matrix + sp.diags(1.0 - keep))
    rhs = -problem.gradient(z) * keep
    return matrix, rhs, keep.astype(bool)


def linear_correction(
    z: np.ndarray,
    problem: RateProblem,
    truncation: Truncation,
    config: SolverConfig,
) -> np.ndarray:
    """Multigrid approximation of the truncated Newton step"""
    matrix, rhs, keep = truncated_system(z, problem, truncation)
    transfers = list(problem.transfers)
    if transfers:
        transfers[-1] = sp.diags(keep.astype(float)) @ transfers[-1]
    multigrid = Multigrid(
        matrix,
        transfers,
        pre_smoothing=config.pre_smoothing,
        post_smoothing=config.post_smoothing,
        damping=config.smoother_damping,
    )
    return multigrid.solve(rhs, cycles=config.v_cycles)


def line_search(
    z: np.ndarray, direction: np.ndarray, problem: RateProblem
) -> float:
    """Damping factor that minimizes J(z + rho direction) over rho >= 0

    Bisection on the derivative, which is monotone. Returns 0 for a zero or
    an ascent direction and never increases the energy.
    """
    if not np.any(direction):
        return 0.0
    slots = problem.contact_slots
    base = float(direction @ (problem.hessian @ z - problem.rhs))
    curvature = float(direction @ (problem.hessian @ direction))
    z_contact, d_contact = z[slots], direction[slots]

    def derivative(rho):
        friction = problem.functional.gradient(z_contact + rho * d_contact)
        return base + rho * curvature + float(d_contact @ friction)

    if derivative(0.0) >= 0:
        return 0.0
    upper = 1.0
    while derivative(upper) < 0:
        upper *= 2
        if upper > 2.0**60:
            break
    lower = 0.0
    while upper - lower > LINE_SEARCH_TOLERANCE * upper:
        middle = 0.5 * (lower + upper)
        if derivative(middle) < 0:
            lower = middle
        else:
            upper = middle
    rho = 0.5 * (lower + upper)
    if problem.energy(z + rho * direction) > problem.energy(z):
        return 0.0
    return rho


def solve_rate_tnnmg(
    problem: RateProblem,
    config: SolverConfig,
    z_init: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, RateSolveReport]:
    """Minimize the rate problem energy by truncated nonsmooth Newton
    multigrid

    Iterates until the a_n-energy norm of the increment drops below
    config.mg_tolerance. A correction that raises the energy is dropped and
    the iteration continues from the smoothed iterate.

    Raises
    ------
    ConvergenceError
        After config.tnnmg_cap iterations, with the report attached
    """
    z = np.zeros(problem.size) if z_init is None else np.array(z_init, float)
    report = RateSolveReport()
    energy = problem.energy(z)
    for _ in range(config.tnnmg_cap):
        smoothed = gs_sweep(z, problem, config.local_solver)
        truncation = truncate(smoothed, problem)
        correction = linear_correction(smoothed, problem, truncation, config)
        rho = line_search(smoothed, correction, problem)
        candidate = smoothed + rho * correction
        candidate_energy = problem.energy(candidate)
        report.iterations += 1
        report.v_cycles += config.v_cycles
        if candidate_energy > energy + ENERGY_RISE_TOLERANCE * abs(energy):
            logger.warning(
                f"Energy went up by {candidate_energy - energy:.3g}, "
                "dropping the multigrid correction"
            )
            report.fallbacks += 1
            rho = 0.0
            candidate = smoothed
            candidate_energy = problem.energy(smoothed)
        report.energies.append(candidate_energy)
        report.damping.append(rho)
        report.truncated.append(truncation.size)
        increment = problem.energy_norm(candidate - z)
        z, energy = candidate, candidate_energy
        if increment <= config.mg_tolerance:
            report.converged = True
            return z, report
    raise ConvergenceError(
        f"Rate problem did not converge in {config.tnnmg_cap} iterations",
        report=report,
    )


def solve_rate_reference(
    problem: RateProblem,
    z_init: Optional[np.ndarray] = None,
    max_sweeps: int = 100_000,
    local_solver: str = "block",
) -> np.ndarray:
    """Plain nonlinear Gauss-Seidel until the energy stagnates. Slow, meant
    for checking the multigrid solver on small problems
    """
    z = np.zeros(problem.size) if z_init is None else np.array(z_init, float)
    energy = problem.energy(z)
    for _ in range(max_sweeps):
        updated = gs_sweep(z, problem, local_solver)
        updated_energy = problem.energy(updated)
        decrease = energy - updated_energy
        step = problem.energy_norm(updated - z)
        z, energy = updated, updated_energy
        if decrease <= 1e-14 * max(abs(energy), 1e-300) and step <= 1e-10:
            return z
    logger.warning(f"Gauss-Seidel still moving after {max_sweeps} sweeps")
    return z


def contact_functional(
    coupling: ContactCoupling,
    alphas: Sequence[StateField],
    friction: Sequence[FrictionParams],
) -> NodalRateFunctional:
    """Friction energy of the contact nodes for a state per fault"""
    alpha = np.array(
        [
            alphas[index].values[node]
            for index, node in zip(
                coupling.contact_interface, coupling.contact_local
            )
        ],
        dtype=float,
    )
    params = [friction[index] for index in coupling.contact_interface]
    return NodalRateFunctional.from_nodes(
        coupling.rate_weights, alpha, params
    )


@dataclass
class StepProblem:
    """Everything the fixed point iteration needs for one time step

    Parameters
    ----------
    rate:
        Rate problem. Its friction functional is replaced for every state
    coupling:
        Contact data of the step
    friction:
        Friction constants per fault, in the order of coupling.maps
    tau:
        Step size
    """

    rate: RateProblem
    coupling: ContactCoupling
    friction: Sequence[FrictionParams]
    tau: float

    def functional(self, alphas: Sequence[StateField]) -> NodalRateFunctional:
        return contact_functional(self.coupling, alphas, self.friction)

    def slip_rates(self, z: np.ndarray) -> List[np.ndarray]:
        """Slip rate magnitude per bottom fault node, zero off contact"""
        speeds = np.abs(z[self.rate.contact_slots])
        rates = []
        for index, contact_map in enumerate(self.coupling.maps):
            nodal = np.zeros(len(contact_map.bottom))
            mine = self.coupling.contact_interface == index
            nodal[self.coupling.contact_local[mine]] = speeds[mine]
            rates.append(nodal)
        return rates

    def contact_nodes(self, index: int) -> np.ndarray:
        return self.coupling.maps[index].contact_nodes


def _state_update(step, alpha_prev, z, config) -> List[StateField]:
    rates = step.slip_rates(z)
    return [
        solve_state(
            alpha,
            speeds,
            step.tau,
            params,
            contact=step.contact_nodes(index),
            tolerance=config.state_tolerance,
        )
        for index, (alpha, speeds, params) in enumerate(
            zip(alpha_prev, rates, step.friction)
        )
    ]


def _state_distance(new, old) -> float:
    return float(
        np.sqrt(
            sum(
                l2_state_norm(a.values - b.values, a.cell_measures) ** 2
                for a, b in zip(new, old)
            )
        )
    )


def fixed_point_solve(
    step: StepProblem,
    alpha_prev: Sequence[StateField],
    z_init: np.ndarray,
    config: SolverConfig,
    delta_tau: float,
    report: Optional[SolverReport] = None,
) -> Tuple[np.ndarray, List[StateField], SolverReport]:
    """Relaxed fixed point iteration between state and rate problem

    Starting from the previous step's velocity and state, alternates
    alpha = S(z) and z = R(omega alpha + (1 - omega) alpha_old) until the
    L2 change of the state drops below fixed_point_factor * delta_tau.

    Returns
    -------
    z, alpha, report

    Raises
    ------
    ConvergenceError
        If config.fixed_point_cap iterations were not enough
    """
    if report is None:
        report = SolverReport(tau=step.tau)
    tolerance = config.fixed_point_factor * delta_tau
    z = np.array(z_init, dtype=float)
    alpha = list(alpha_prev)
    stalled = 0
    for _ in range(config.fixed_point_cap):
        updated = _state_update(step, alpha_prev, z, config)
        relaxed = [
            a.with_values(
                config.omega * a.values + (1 - config.omega) * b.values
            )
            for a, b in zip(updated, alpha)
        ]
        rate = step.rate.with_functional(step.functional(relaxed))
        z, rate_report = solve_rate_tnnmg(rate, config, z)
        report.rate_solves.append(rate_report)

        increment = _state_distance(updated, alpha)
        increments = report.state_increments
        if increments and increment >= increments[-1]:
            stalled += 1
        else:
            stalled = 0
        report.state_increments.append(increment)
        alpha = updated
        if stalled >= NON_CONTRACTION_WINDOW:
            report.warn(
                f"State iteration not contracting for {stalled} iterations "
                f"(increment {increment:.3g})"
            )
            stalled = 0
        if increment <= tolerance:
            return z, alpha, report
    raise ConvergenceError(
        f"Fixed point iteration did not converge in {config.fixed_point_cap} "
        "iterations",
        report=report,
    )
