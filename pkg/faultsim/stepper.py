"""Time discretization: Newmark updates, initial conditions, Dirichlet
loading and adaptive step size selection
"""
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg
from pydantic import BaseModel, ConfigDict, Field

from faultsim.core import DIM
from faultsim.exceptions import ConvergenceError, StepFailureError
from faultsim.fem import (
    MaterialParams,
    Operators,
    assemble_operators,
    compose_an,
    compose_ln,
    discrete_energy,
)
from faultsim.friction import FrictionParams, StateField
from faultsim.logs import get_module_logger
from faultsim.mesh import MeshHierarchy
from faultsim.mortar import (
    ContactCoupling,
    DegenerateGeometryError,
    FaultTrace,
    NoContactError,
    build_contact_coupling,
)
from faultsim.multigrid import hierarchy_transfers
from faultsim.solver import (
    RateProblem,
    SolverConfig,
    SolverReport,
    StepProblem,
    contact_functional,
    fixed_point_solve,
)

logger = get_module_logger("stepper")

# relative weight of the mass term that anchors the initial stationary problem
ANCHOR_SHIFT = 1e-12
INITIAL_STEP_FRACTION = 1e-4  # first trial step, relative to T0
MIN_STEP = 1e-9  # s
# failures of a trial step that count as a rejection
TRIAL_ERRORS = (ConvergenceError, NoContactError, DegenerateGeometryError)


class LoadingProfile(BaseModel):
    """Velocity v_D xi(t) e_1 imposed on the driven Dirichlet boundary

    The default ramp 1/2 (1 - cos(4 pi t / T0)) jumps from about 0.345 to
    1 at T0/10. smooth_ramp makes it reach 1 exactly there.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    v_D: float = Field(default=2e-4, gt=0)  # m/s
    T0: float = Field(default=60.0, gt=0)  # s
    smooth_ramp: bool = False

    def xi(self, t: float) -> float:
        """Dimensionless ramp between 0 and 1"""
        if t <= self.T0 / 10:
            factor = 10 * np.pi if self.smooth_ramp else 4 * np.pi
            return float(0.5 * (1 - np.cos(factor * t / self.T0)))
        return 1.0

    def velocity(self, t: float) -> float:
        return self.v_D * self.xi(t)


@dataclass(frozen=True)
class SystemState:
    """Solution at time t

    u, u_dot and u_ddot are nodal vectors over all vertices of all
    subdomains, Dirichlet vertices included. alpha and slip_rates hold one
    entry per fault, over the bottom side nodes of that fault.
    """

    t: float
    tau_prev: float
    u: np.ndarray
    u_dot: np.ndarray
    u_ddot: np.ndarray
    alpha: Tuple[StateField, ...] = ()
    slip_rates: Tuple[np.ndarray, ...] = ()
    step: int = 0  # accepted steps since t=0

    def __str__(self):
        return (
            f"SystemState at t={self.t:.6g}s, "
            f"previous step {self.tau_prev:.3g}s"
        )


def newmark_update(
    u_dot_new: np.ndarray, previous: SystemState, tau: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Displacement and acceleration that go with a new velocity under the
    trapezoidal Newmark scheme

    Returns
    -------
    u_new, u_ddot_new
    """
    if tau <= 0:
        raise ValueError(f"Time step should be positive, got {tau}")
    u_ddot = (2.0 / tau) * (u_dot_new - previous.u_dot) - previous.u_ddot
    u = previous.u + (tau / 2.0) * (u_dot_new + previous.u_dot)
    return u, u_ddot


def initial_displacement(
    operators: Operators, coupling: ContactCoupling
) -> np.ndarray:
    """Stationary elastic displacement under the load, with the faults
    closed and frictionless

    Tangential rigid body motions of bodies that touch no Dirichlet boundary
    are removed by a tiny mass shift.

    Raises
    ------
    ConvergenceError
        If the constrained stiffness matrix is singular
    """
    basis = coupling.transform.nodal_basis
    stiffness = sp.csr_matrix(basis.T @ operators.elasticity @ basis)
    mass = sp.csr_matrix(basis.T @ operators.mass @ basis)
    if stiffness.shape[0] == 0:
        return np.zeros(operators.dofmap.n_dofs)
    shift = ANCHOR_SHIFT * stiffness.diagonal().mean() / mass.diagonal().mean()
    rhs = basis.T @ operators.load
    try:
        factor = scipy.sparse.linalg.splu(
            sp.csc_matrix(stiffness + shift * mass)
        )
    except RuntimeError as e:
        raise ConvergenceError(
            f"Initial stationary problem is singular: {e}"
        ) from e
    return basis @ factor.solve(rhs)


def initial_acceleration(
    M: sp.spmatrix,
    B: sp.spmatrix,
    load: np.ndarray,
    u0: np.ndarray,
    free_dofs: np.ndarray,
) -> np.ndarray:
    """Solve M a = l - B u0 on the free dofs. Dirichlet entries are zero"""
    acceleration = np.zeros_like(u0, dtype=float)
    residual = load - B @ u0
    free_mass = sp.csc_matrix(sp.csr_matrix(M)[free_dofs][:, free_dofs])
    acceleration[free_dofs] = scipy.sparse.linalg.spsolve(
        free_mass, residual[free_dofs]
    )
    return acceleration


def state_difference(
    first: Sequence[StateField], second: Sequence[StateField]
) -> float:
    """Discrete L2 norm over all faults of the difference of two states"""
    return float(
        np.sqrt(sum(a.distance(b) ** 2 for a, b in zip(first, second)))
    )


@dataclass
class AdaptiveStepResult:
    """Two committed half steps and the solver reports that produced them"""

    states: List[SystemState]
    reports: List[SolverReport]
    tau: float
    trials: int = 0

    @property
    def final(self) -> SystemState:
        return self.states[-1]


@dataclass
class _StepCache:
    start: Optional[SystemState] = None
    steps: Dict[float, Tuple[SystemState, SolverReport]] = field(
        default_factory=dict
    )


class Stepper:
    """Advances a SystemState in time on the finest level of a hierarchy

    Parameters
    ----------
    hierarchy:
        Mesh levels. The finest one carries the solution, all of them are
        used by the multigrid solver
    material:
        Bulk material
    friction:
        Friction constants per fault, ordered by interface id
    loading:
        Driven boundary velocity
    config:
        Algebraic solver settings
    delta_tau:
        Step doubling tolerance on the state (dimensionless times m^(1/2))
    lumped_mass:
        Use a lumped mass matrix
    tau_min:
        Smallest step size before giving up
    """

    def __init__(
        self,
        hierarchy: MeshHierarchy,
        material: MaterialParams,
        friction: Sequence[FrictionParams],
        loading: LoadingProfile,
        config: SolverConfig,
        delta_tau: float = 1e-5,
        lumped_mass: bool = False,
        tau_min: float = MIN_STEP,
    ):
        if delta_tau <= 0:
            raise ValueError(f"delta_tau should be positive, got {delta_tau}")
        self.hierarchy = hierarchy
        self.loading = loading
        self.config = config
        self.delta_tau = delta_tau
        self.tau_min = tau_min
        meshes = {mesh.subdomain: mesh for mesh in hierarchy.finest}
        self.operators = assemble_operators(
            hierarchy.finest, material, lumped_mass=lumped_mass
        )
        self.dofmap = self.operators.dofmap
        self.interfaces = sorted(
            {i for mesh in hierarchy.finest for i in mesh.interfaces()}
        )
        if len(friction) != len(self.interfaces):
            raise ValueError(
                f"Got friction constants for {len(friction)} faults, the "
                f"mesh has {len(self.interfaces)}"
            )
        self.friction = list(friction)
        self.traces = [
            (
                FaultTrace.from_mesh(meshes[i], i, self.dofmap),
                FaultTrace.from_mesh(meshes[i + 1], i, self.dofmap),
            )
            for i in self.interfaces
        ]
        self.transfers = hierarchy_transfers(hierarchy)
        self._driven_dofs = DIM * np.flatnonzero(self.dofmap.driven)
        self._cache = _StepCache()
        self._couplings: Dict[int, Tuple[SystemState, ContactCoupling]] = {}

    def __str__(self):
        return (
            f"Stepper on {self.dofmap} with faults {self.interfaces} and "
            f"{len(self.hierarchy)} levels"
        )

    def coupling(self, state: SystemState) -> ContactCoupling:
        """Contact data built from the displacement of a state"""
        cached = self._couplings.get(id(state))
        if cached is not None and cached[0] is state:
            return cached[1]
        coupling = build_contact_coupling(self.traces, state.u, self.dofmap)
        self._couplings[id(state)] = (state, coupling)
        return coupling

    def initial_state(self, alpha0: float = -10.0) -> SystemState:
        """Equilibrium displacement, zero velocity and uniform state"""
        n = self.dofmap.n_dofs
        zero = np.zeros(n)
        coupling = build_contact_coupling(self.traces, zero, self.dofmap)
        u0 = initial_displacement(self.operators, coupling)
        u_ddot = initial_acceleration(
            self.operators.mass,
            self.operators.elasticity,
            self.operators.load,
            u0,
            self.dofmap.free_dofs,
        )
        alpha = tuple(
            StateField(
                values=np.full(len(bottom), float(alpha0)),
                cell_measures=bottom.cell_measures(),
            )
            for bottom, _ in self.traces
        )
        slip = tuple(np.zeros(len(bottom)) for bottom, _ in self.traces)
        state = SystemState(
            t=0.0,
            tau_prev=INITIAL_STEP_FRACTION * self.loading.T0,
            u=u0,
            u_dot=zero,
            u_ddot=u_ddot,
            alpha=alpha,
            slip_rates=slip,
        )
        logger.info(
            f"Initial state: max |u0| = {np.abs(u0).max():.3g} m on "
            f"{self.dofmap}"
        )
        return state

    def dirichlet_velocity(self, t: float) -> np.ndarray:
        """Nodal vector with the boundary velocity on the Dirichlet dofs"""
        values = np.zeros(self.dofmap.n_dofs)
        values[self._driven_dofs] = self.loading.velocity(t)
        return values

    def advance(
        self, state: SystemState, tau: float
    ) -> Tuple[SystemState, SolverReport]:
        """One Newmark step of size tau with the contact data of state

        Raises
        ------
        ConvergenceError
            If the fixed point iteration or the rate solver fails
        """
        if tau <= 0:
            raise ValueError(f"Time step should be positive, got {tau}")
        t_new = state.t + tau
        coupling = self.coupling(state)
        transform = coupling.transform
        operators = self.operators
        a_n = compose_an(
            operators.mass, operators.viscosity, operators.elasticity, tau
        )
        l_n = compose_ln(operators, state, tau)
        lift = transform.lift(self.dirichlet_velocity(t_new))
        rate = RateProblem.from_step(
            a_n,
            l_n,
            lift,
            transform,
            contact_functional(coupling, state.alpha, self.friction),
            self.dofmap.free_dofs,
            self.transfers,
        )
        step = StepProblem(
            rate=rate, coupling=coupling, friction=self.friction, tau=tau
        )
        report = SolverReport(t=t_new, tau=tau)
        z, alpha, report = fixed_point_solve(
            step,
            state.alpha,
            transform.restrict(state.u_dot),
            self.config,
            self.delta_tau,
            report=report,
        )
        u_dot = transform.expand(z, lift)
        u, u_ddot = newmark_update(u_dot, state, tau)
        new_state = SystemState(
            t=t_new,
            tau_prev=tau,
            u=u,
            u_dot=u_dot,
            u_ddot=u_ddot,
            alpha=tuple(alpha),
            slip_rates=tuple(step.slip_rates(z)),
            step=state.step + 1,
        )
        return new_state, report

    def _single(self, state: SystemState, tau: float):
        """advance from the start of the current adaptive step, cached"""
        if state is self._cache.start:
            if tau not in self._cache.steps:
                self._cache.steps[tau] = self.advance(state, tau)
            return self._cache.steps[tau]
        return self.advance(state, tau)

    def _trial(self, state: SystemState, tau: float):
        """One step of 2 tau against two steps of tau

        Returns None when a solve or the contact geometry of a step failed,
        which counts as a violated criterion
        """
        try:
            coarse, _ = self._single(state, 2 * tau)
            half, half_report = self._single(state, tau)
            full, full_report = self.advance(half, tau)
        except TRIAL_ERRORS as e:
            logger.debug(f"Trial step {tau:.3g}s failed: {e}")
            return None
        difference = state_difference(coarse.alpha, full.alpha)
        return difference, [half, full], [half_report, full_report]

    def adaptive_step(
        self, state: SystemState, until: Optional[float] = None
    ) -> AdaptiveStepResult:
        """Step doubling control on the state

        Starts from the previous step size. Doubles it while one step of
        2 tau and two steps of tau agree within delta_tau, or halves it until
        they do. The two steps of the accepted tau are committed. Steps are
        clamped so that time ends exactly at `until`, T0 by default.

        Raises
        ------
        StepFailureError
            If the step size drops below tau_min
        """
        final = self.loading.T0
        if until is not None:
            final = min(until, final)
        remaining = final - state.t
        if remaining <= 0:
            raise StepFailureError(f"Already at the final time, {state}")
        self._cache = _StepCache(start=state)
        self._couplings = {}
        try:
            tau, outcome, trials = self._search(state, remaining)
        finally:
            self._cache = _StepCache()
            self._couplings = {}
        _, states, reports = outcome
        if 2 * tau >= remaining - 1e-12 * max(final, 1.0):
            states[-1] = replace(states[-1], t=final)
        return AdaptiveStepResult(
            states=states, reports=reports, tau=tau, trials=trials
        )

    def _search(self, state: SystemState, remaining: float):
        tau = min(state.tau_prev, remaining / 2)
        trials = 1
        outcome = self._trial(state, tau)
        if self._accepted(outcome):
            while 4 * tau <= remaining:
                larger = self._trial(state, 2 * tau)
                trials += 1
                if not self._accepted(larger):
                    break
                tau, outcome = 2 * tau, larger
        else:
            while not self._accepted(outcome):
                tau /= 2
                if tau < self.tau_min:
                    raise StepFailureError(
                        f"Step size {tau:.3g}s below the minimum "
                        f"{self.tau_min:.3g}s at t={state.t:.9g}s"
                    )
                outcome = self._trial(state, tau)
                trials += 1
        return tau, outcome, trials

    def _accepted(self, outcome) -> bool:
        return outcome is not None and outcome[0] <= self.delta_tau

    def energy(self, state: SystemState) -> float:
        return discrete_energy(
            self.operators.mass,
            self.operators.elasticity,
            state.u,
            state.u_dot,
        )
