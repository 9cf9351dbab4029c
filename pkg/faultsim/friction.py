"""Rate-and-state friction: friction coefficient, regularization threshold,
the rate functional phi and the state functionals psi.

All functions accept floats or numpy arrays and broadcast. The transformed
state alpha = log(theta) is used everywhere except in mu_star, which takes
the state time theta itself.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from faultsim.exceptions import FaultSimError

ArrayLike = Union[float, np.ndarray]

# exponent clamp for the regularization velocity
EXPONENT_LIMIT = 700.0


class FrictionLaw(str, Enum):
    """State evolution law"""

    DIETERICH = "dieterich"  # aging law, heals at zero slip rate
    RUINA = "ruina"  # slip law


class RateStateSettings(BaseModel):
    """Rate-and-state constants shared by all faults of a scenario.

    Defaults are the laboratory values for granite-like gouge used in the
    spring slider and layered experiments.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    V0: float = Field(default=1e-6, gt=0)  # reference velocity (m/s)
    mu0: float = Field(default=0.6, gt=0)  # reference coefficient
    a: float = Field(default=0.010, gt=0)
    b: float = Field(default=0.015, gt=0)
    L: float = Field(default=1e-5, gt=0)  # characteristic slip distance (m)
    law: FrictionLaw = FrictionLaw.DIETERICH


class FrictionParams(RateStateSettings):
    """Friction constants of a single fault, including the frozen normal
    stress magnitude |sigma_n| (Pa). Zero normal stress switches friction off
    """

    sigma_n_bar: float = Field(ge=0)


class FrictionDomainError(FaultSimError, ValueError):
    """A friction function was evaluated outside of its domain"""

    pass


@dataclass(frozen=True)
class StateField:
    """Transformed state alpha per fault node, constant on dual cells

    Parameters
    ----------
    values:
        alpha_p for every node of the non-mortar fault trace (dimensionless)
    cell_measures:
        |C_p|, length of the dual cell around each node (m). Cells tile the
        fault
    """

    values: np.ndarray
    cell_measures: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.cell_measures.shape:
            raise ValueError(
                f"{len(self.values)} state values for "
                f"{len(self.cell_measures)} cells"
            )
        if not np.all(np.isfinite(self.values)):
            raise FrictionDomainError("State field contains non-finite values")

    def with_values(self, values: np.ndarray) -> "StateField":
        return StateField(values=values, cell_measures=self.cell_measures)

    def distance(self, other: "StateField") -> float:
        """Discrete L2 norm of the difference over the fault"""
        return l2_state_norm(self.values - other.values, self.cell_measures)


def l2_state_norm(difference: np.ndarray, cell_measures: np.ndarray) -> float:
    return float(np.sqrt(np.sum(cell_measures * difference**2)))


def mu_star(V: ArrayLike, theta: ArrayLike, params: RateStateSettings):
    """Unregularized friction coefficient
    mu0 + a log(V/V0) + b log(V0 theta/L)

    Raises
    ------
    FrictionDomainError
        If V or theta is not strictly positive
    """
    V = np.asarray(V, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(V <= 0) or np.any(theta <= 0):
        raise FrictionDomainError(
            "mu_star is only defined for positive slip rate and state"
        )
    value = (
        params.mu0
        + params.a * np.log(V / params.V0)
        + params.b * np.log(params.V0 * theta / params.L)
    )
    return value[()] if value.ndim == 0 else value


def v_m(alpha: ArrayLike, params: RateStateSettings):
    """Slip rate below which the regularized friction coefficient vanishes.

    This is the root of mu_star(., exp(alpha)) = 0 and decreases
    monotonically with alpha.
    """
    alpha = np.asarray(alpha, dtype=float)
    exponent = -(
        params.mu0 + params.b * (np.log(params.V0 / params.L) + alpha)
    ) / params.a
    value = params.V0 * np.exp(
        np.clip(exponent, -EXPONENT_LIMIT, EXPONENT_LIMIT)
    )
    return value[()] if value.ndim == 0 else value


def rate_density(speed: ArrayLike, threshold: ArrayLike) -> np.ndarray:
    """s log(s/V_m) - s + V_m for s >= V_m, 0 below. phi without the
    a |sigma_n| prefactor
    """
    active, s, vm = _active_region(speed, threshold)
    return np.where(active, s * np.log(s / vm) - s + vm, 0.0)


def rate_density_derivative(
    speed: ArrayLike, threshold: ArrayLike
) -> np.ndarray:
    """log(s/V_m) for s > V_m, 0 below. Derivative of rate_density in s"""
    active, s, vm = _active_region(speed, threshold)
    return np.where(active, np.log(s / vm), 0.0)


def rate_density_second(speed: ArrayLike, threshold: ArrayLike) -> np.ndarray:
    """1/s for s > V_m, 0 below"""
    active, s, _ = _active_region(speed, threshold)
    return np.where(active, 1.0 / s, 0.0)


def _active_region(speed, threshold):
    """Mask of |s| > V_m plus speed and threshold arrays that are safe to put
    into a logarithm everywhere
    """
    speed = np.abs(np.asarray(speed, dtype=float))
    threshold = np.asarray(threshold, dtype=float)
    active = speed > threshold
    return (
        active,
        np.where(active, speed, 1.0),
        np.where(active, threshold, 1.0),
    )


def phi(v, alpha: float, params: FrictionParams) -> float:
    """Regularized rate functional for a single slip rate vector v (m/s)"""
    speed = np.linalg.norm(np.asarray(v, dtype=float))
    density = rate_density(speed, v_m(alpha, params))
    return float(params.a * params.sigma_n_bar * density)


def phi_of_speed(speed: ArrayLike, alpha: ArrayLike, params: FrictionParams):
    """phi as a function of |v|, vectorised over nodes"""
    value = (
        params.a
        * params.sigma_n_bar
        * rate_density(speed, v_m(alpha, params))
    )
    return value[()] if value.ndim == 0 else value


def phi_grad(v, alpha: float, params: FrictionParams) -> np.ndarray:
    """Gradient of phi. Equals |sigma_n| mu v/|v| outside the regularization
    threshold and vanishes inside it
    """
    v = np.asarray(v, dtype=float)
    speed = np.linalg.norm(v)
    if speed == 0:
        return np.zeros_like(v)
    slope = params.a * rate_density_derivative(speed, v_m(alpha, params))
    return params.sigma_n_bar * float(slope) * v / speed


def phi_second(speed: ArrayLike, alpha: ArrayLike, params: FrictionParams):
    """Second derivative of phi along the slip direction. a|sigma_n|/|v|
    outside the threshold, 0 inside
    """
    value = (
        params.a
        * params.sigma_n_bar
        * rate_density_second(speed, v_m(alpha, params))
    )
    return value[()] if value.ndim == 0 else value


def psi(alpha: ArrayLike, V: ArrayLike, params: RateStateSettings):
    """Convex state functional whose derivative drives the state evolution
    -alpha' = psi'(alpha, V)
    """
    alpha = np.asarray(alpha, dtype=float)
    rate = _scaled_rate(V, params)
    if params.law == FrictionLaw.DIETERICH:
        value = rate * alpha + np.exp(-alpha)
    else:
        value = rate * (alpha**2 / 2 + _log_rate(rate) * alpha)
    return value[()] if np.ndim(value) == 0 else value


def psi_prime(alpha: ArrayLike, V: ArrayLike, params: RateStateSettings):
    """Derivative of psi in alpha"""
    alpha = np.asarray(alpha, dtype=float)
    rate = _scaled_rate(V, params)
    if params.law == FrictionLaw.DIETERICH:
        value = rate - np.exp(-alpha)
    else:
        value = rate * (alpha + _log_rate(rate))
    return value[()] if np.ndim(value) == 0 else value


def psi_second(alpha: ArrayLike, V: ArrayLike, params: RateStateSettings):
    alpha = np.asarray(alpha, dtype=float)
    rate = _scaled_rate(V, params)
    if params.law == FrictionLaw.DIETERICH:
        value = np.exp(-alpha) + 0 * rate
    else:
        value = rate + 0 * alpha
    return value[()] if np.ndim(value) == 0 else value


def _scaled_rate(V, params: RateStateSettings) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if np.any(V < 0):
        raise FrictionDomainError("Slip rate magnitude cannot be negative")
    return V / params.L


def _log_rate(rate: np.ndarray) -> np.ndarray:
    """log(V/L), extended by 0 where V = 0. There the prefactor V/L vanishes
    and the slip law terms go to 0
    """
    rate = np.asarray(rate, dtype=float)
    safe = np.where(rate > 0, rate, 1.0)
    return np.where(rate > 0, np.log(safe), 0.0)


def nodal_rate_functional(
    jump_rates: np.ndarray,
    state: StateField,
    weights: np.ndarray,
    params: Union[FrictionParams, Sequence[FrictionParams]],
) -> float:
    """Nodal quadrature of the rate functional over a fault,
    sum_p w_p phi(jump_p, alpha_p)

    Parameters
    ----------
    jump_rates:
        (n, 2) relative velocity per fault node
    state:
        alpha per fault node
    weights:
        w_p, integral of the nodal basis function over the fault (m)
    params:
        Friction constants, one set for all nodes or one per node

    Returns
    -------
    float
        Energy per unit thickness (W/m)
    """
    speeds = np.linalg.norm(np.atleast_2d(jump_rates), axis=1)
    weights = np.asarray(weights, dtype=float)
    if isinstance(params, FrictionParams):
        functional = NodalRateFunctional(
            coefficients=weights * params.a * params.sigma_n_bar,
            thresholds=np.asarray(v_m(state.values, params), dtype=float),
        )
    else:
        functional = NodalRateFunctional.from_nodes(
            weights, state.values, params
        )
    return functional.energy(speeds)


@dataclass
class NodalRateFunctional:
    """Separable friction energy sum_p c_p g(|s_p|; V_m,p) over contact nodes,
    where c_p = w_p a_p |sigma_n,p| and g is rate_density.

    This is the form the algebraic solver works with. Scalars s_p are the
    tangential relative velocities.
    """

    coefficients: np.ndarray
    thresholds: np.ndarray

    @classmethod
    def from_nodes(
        cls,
        weights: np.ndarray,
        alpha: np.ndarray,
        params: Sequence[FrictionParams],
    ) -> "NodalRateFunctional":
        coefficients = np.array(
            [w * p.a * p.sigma_n_bar for w, p in zip(weights, params)],
            dtype=float,
        )
        thresholds = np.array(
            [v_m(a, p) for a, p in zip(alpha, params)], dtype=float
        )
        return cls(coefficients=coefficients, thresholds=thresholds)

    def energy(self, s: np.ndarray) -> float:
        densities = rate_density(s, self.thresholds)
        return float(np.dot(self.coefficients, densities))

    def gradient(self, s: np.ndarray) -> np.ndarray:
        return (
            self.coefficients
            * rate_density_derivative(s, self.thresholds)
            * np.sign(s)
        )

    def hessian(self, s: np.ndarray) -> np.ndarray:
        return self.coefficients * rate_density_second(s, self.thresholds)
