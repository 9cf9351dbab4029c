"""Experiment definitions, config files and the simulation run loop"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from contourpy import contour_generator
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    model_validator,
)

from faultsim.core import EdgeTag
from faultsim.exceptions import (
    ConfigError,
    ConvergenceError,
    FaultSimError,
    InvalidSpecError,
    StepFailureError,
)
from faultsim.fem import AssemblyError, MaterialParams
from faultsim.friction import FrictionParams, RateStateSettings
from faultsim.logs import get_module_logger
from faultsim.mesh import (
    DEFAULT_LEVEL_CAP,
    MeshHierarchy,
    RefinementOverflowError,
    SubdomainSpec,
    build_initial_mesh,
    check_layering,
    fault_segments,
    refine_adaptive,
)
from faultsim.mortar import DegenerateGeometryError, NoContactError
from faultsim.solver import SolverConfig, SolverReport
from faultsim.stepper import LoadingProfile, Stepper, SystemState
from faultsim.storage import (
    RunStorage,
    StorageError,
    read_checkpoint,
    write_checkpoint,
    write_level_lines,
)

logger = get_module_logger("scenario")

# relative velocity levels of the level line output, 10 to 10^4 micrometer/s
DEFAULT_LEVELS = (1e-5, 1e-4, 1e-3, 1e-2)
PROGRESS_EVERY = 100  # accepted steps between progress log lines


class GeometryConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    subdomains: List[SubdomainSpec]
    target_h0: float = Field(default=1.0, gt=0)  # m


class MeshConfig(BaseModel):
    """Fault graded refinement controls"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    h_min: float = Field(default=0.0625, gt=0)  # m
    grading: float = Field(default=80.0, ge=0)  # 1/m
    level_cap: int = Field(default=DEFAULT_LEVEL_CAP, ge=0)
    rounds: Optional[int] = Field(default=None, ge=0)


class FaultConfig(BaseModel):
    """Per fault settings. Without sigma_n_bar the lithostatic load of the
    bodies above the fault is used
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    interface: int = Field(ge=1)
    sigma_n_bar: Optional[float] = Field(default=None, ge=0)  # Pa


class OutputConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    directory: str = "output"
    # steps shorter than this are inside a slip event and always snapshot
    snapshot_tau_threshold: float = Field(default=1e-2, gt=0)  # s
    snapshot_every: int = Field(default=10, ge=1)
    checkpoint_every: Optional[int] = Field(default=None, ge=1)
    levels: Tuple[float, ...] = DEFAULT_LEVELS  # m/s


class ScenarioConfig(BaseModel):
    """Everything that defines a simulation run

    Notes
    -----
    Serializes to nested YAML mappings, see load_config and dump_config.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "custom"
    geometry: GeometryConfig
    material: MaterialParams = MaterialParams()
    friction: RateStateSettings = RateStateSettings()
    faults: List[FaultConfig]
    loading: LoadingProfile = LoadingProfile()
    solver: SolverConfig = SolverConfig()
    mesh: MeshConfig = MeshConfig()
    delta_tau: float = Field(default=1e-5, gt=0)
    initial_state: float = -10.0  # alpha at t=0
    lumped_mass: bool = False
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def check_geometry(self):
        try:
            check_layering(self.geometry.subdomains)
        except InvalidSpecError as e:
            raise ValueError(str(e)) from e
        existing = {f.interface for f in fault_segments(self.subdomains)}
        listed = [fault.interface for fault in self.faults]
        if len(set(listed)) != len(listed):
            raise ValueError(f"Faults listed more than once: {listed}")
        if set(listed) != existing:
            raise ValueError(
                f"Fault list {sorted(listed)} does not match the interfaces "
                f"of the geometry {sorted(existing)}"
            )
        return self

    @property
    def subdomains(self) -> List[SubdomainSpec]:
        return self.geometry.subdomains

    @property
    def interfaces(self) -> List[int]:
        return sorted(fault.interface for fault in self.faults)

    def lithostatic_stress(self, interface: int) -> float:
        """rho g times the depth of the fault below the top of the stack"""
        top = self.subdomains[-1].y_max
        depth = top - self.subdomains[interface - 1].y_max
        return self.material.rho * self.material.g * depth

    def friction_params(self, interface: int) -> FrictionParams:
        """Friction constants of one fault, normal stress included"""
        fault = next(f for f in self.faults if f.interface == interface)
        sigma = fault.sigma_n_bar
        if sigma is None:
            sigma = self.lithostatic_stress(interface)
        return FrictionParams(
            **self.friction.model_dump(), sigma_n_bar=sigma
        )


def _stack(
    y_breaks: Sequence[float], x_min: float = -2.5, x_max: float = 2.5
) -> List[SubdomainSpec]:
    """Subdomains between consecutive y values. The bottom is fixed, the top
    is driven and everything in between is a fault
    """
    count = len(y_breaks) - 1
    specs = []
    for i in range(1, count + 1):
        specs.append(
            SubdomainSpec(
                id=i,
                x_min=x_min,
                x_max=x_max,
                y_min=y_breaks[i - 1],
                y_max=y_breaks[i],
                bottom=(
                    EdgeTag.dirichlet()
                    if i == 1
                    else EdgeTag.fault_top(i - 1)
                ),
                top=(
                    EdgeTag.dirichlet(driven=True)
                    if i == count
                    else EdgeTag.fault_bottom(i)
                ),
            )
        )
    return specs


def spring_slider() -> ScenarioConfig:
    """Two blocks on top of each other with one fault at y=0"""
    subdomains = _stack([-1.0, 0.0, 1.0])
    return ScenarioConfig(
        name="spring_slider",
        geometry=GeometryConfig(subdomains=subdomains),
        faults=[FaultConfig(interface=1)],
    )


def layered_5body() -> ScenarioConfig:
    """Five layers with four faults, thin layers around y=0"""
    subdomains = _stack([-1.345, -0.345, -0.045, 0.045, 0.345, 1.345])
    return ScenarioConfig(
        name="layered_5body",
        geometry=GeometryConfig(subdomains=subdomains),
        faults=[FaultConfig(interface=i) for i in range(1, 5)],
    )


PRESETS = {"spring_slider": spring_slider, "layered_5body": layered_5body}


def preset(name: str) -> ScenarioConfig:
    """Builtin scenario by name

    Raises
    ------
    ConfigError
        For unknown names
    """
    try:
        return PRESETS[name]()
    except KeyError as e:
        raise ConfigError(
            f'Unknown preset "{name}". Options are {sorted(PRESETS)}'
        ) from e


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """Read and validate a YAML scenario config

    Raises
    ------
    ConfigError
        If the file cannot be read, is not YAML or does not validate
    """
    try:
        content = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Could not read config {path}: {e}") from e
    try:
        return ScenarioConfig.model_validate(content)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}: {e}") from e


def dump_config(config: ScenarioConfig, path: Union[str, Path] = None) -> str:
    """YAML text of a config, also written to path if given"""
    text = yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def build_hierarchy(config: ScenarioConfig) -> MeshHierarchy:
    meshes = build_initial_mesh(config.subdomains, config.geometry.target_h0)
    return refine_adaptive(
        meshes,
        h_min=config.mesh.h_min,
        grading=config.mesh.grading,
        level_cap=config.mesh.level_cap,
        rounds=config.mesh.rounds,
    )


@dataclass(frozen=True)
class SlipEvent:
    onset: float
    peak: float
    end: float
    peak_value: float


def detect_slip_events(
    times: Sequence[float],
    values: Sequence[float],
    v_D: float,
    threshold: float = 10.0,
    merge_gap: float = 0.05,
) -> List[SlipEvent]:
    """Intervals where the mean slip rate exceeds threshold * v_D

    Intervals closer than merge_gap seconds are merged into one event.

    Raises
    ------
    ValueError
        For an empty series
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if not len(values):
        raise ValueError("Cannot detect events in an empty series")
    above = values > threshold * v_D
    edges = np.diff(np.concatenate([[0], above.astype(int), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1  # inclusive

    runs: List[List[int]] = []
    for start, stop in zip(starts, stops):
        if runs and times[start] - times[runs[-1][1]] < merge_gap:
            runs[-1][1] = stop
        else:
            runs.append([start, stop])

    events = []
    for start, stop in runs:
        peak = start + int(np.argmax(values[start : stop + 1]))
        events.append(
            SlipEvent(
                onset=float(times[start]),
                peak=float(times[peak]),
                end=float(times[stop]),
                peak_value=float(values[peak]),
            )
        )
    return events


def emit_level_lines(
    times: Sequence[float],
    x: Sequence[float],
    values: np.ndarray,
    levels: Sequence[float] = DEFAULT_LEVELS,
    path: Union[str, Path] = None,
) -> Dict[float, List[np.ndarray]]:
    """Level lines of a slip rate field over fault position and time

    Parameters
    ----------
    times:
        Snapshot times, increasing
    x:
        Fault node positions, increasing
    values:
        Slip rate per snapshot and node, shape (len(times), len(x))
    levels:
        Slip rates to draw lines at (m/s)
    path:
        Also write the lines here, see storage.write_level_lines

    Returns
    -------
    dict
        Polylines (k, 2) of (x, t) points per level. Levels without lines
        are left out
    """
    values = np.asarray(values, dtype=float)
    lines: Dict[float, List[np.ndarray]] = {}
    if values.ndim == 2 and min(values.shape) >= 2:
        generator = contour_generator(
            x=np.asarray(x, dtype=float),
            y=np.asarray(times, dtype=float),
            z=values,
            line_type="Separate",
        )
        for level in levels:
            found = [np.asarray(line) for line in generator.lines(level)]
            if found:
                lines[float(level)] = found
    if path is not None:
        write_level_lines(path, lines)
    return lines


@dataclass(frozen=True)
class StepRecord:
    t: float
    tau: float
    fixed_point_iterations: int
    mg_iterations: int
    mean_rates: Dict[int, float]


@dataclass
class Snapshot:
    t: float
    rates: np.ndarray
    alpha: np.ndarray


@dataclass
class RunOutputs:
    """Everything a run produced, kept in memory next to the files"""

    config: ScenarioConfig
    records: List[StepRecord] = field(default_factory=list)
    fault_x: Dict[int, np.ndarray] = field(default_factory=dict)
    snapshots: Dict[int, List[Snapshot]] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    final_state: Optional[SystemState] = None
    vertex_counts: List[int] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([record.t for record in self.records])

    def mean_rates(self, fault: int) -> np.ndarray:
        return np.array([r.mean_rates[fault] for r in self.records])

    def events(self, fault: int, threshold: float = 10.0) -> List[SlipEvent]:
        return detect_slip_events(
            self.times,
            self.mean_rates(fault),
            self.config.loading.v_D,
            threshold=threshold,
        )

    def summary(self) -> Dict[str, object]:
        """Step count, step size range, solver effort and slip events"""
        steps = self.records[1:]
        taus = np.array([r.tau for r in steps])
        fixed_point = np.array([r.fixed_point_iterations for r in steps])
        multigrid = np.array([r.mg_iterations for r in steps])
        return {
            "steps": len(steps),
            "final_time": float(self.records[-1].t) if self.records else 0.0,
            "tau_min": float(taus.min()) if len(taus) else None,
            "tau_max": float(taus.max()) if len(taus) else None,
            "median_fixed_point_iterations": (
                float(np.median(fixed_point)) if len(steps) else None
            ),
            "p95_mg_iterations": (
                float(np.percentile(multigrid, 95)) if len(steps) else None
            ),
            "events": {
                fault: len(self.events(fault)) for fault in self.fault_x
            },
            "warnings": len(self.warnings),
        }


def mean_slip_rate(state: SystemState, index: int) -> float:
    """Cell weighted mean slip rate over the bottom side of a fault"""
    cells = state.alpha[index].cell_measures
    rates = state.slip_rates[index]
    return float(np.sum(cells * rates) / np.sum(cells))


class _Phase:
    """Wraps errors with the step index and phase in which they happened"""

    CLASSIFIED = (
        (NoContactError, "contact"),
        (DegenerateGeometryError, "contact"),
        (AssemblyError, "assembly"),
        (ConvergenceError, "fixed-point"),
        (StepFailureError, "fixed-point"),
        (StorageError, "output"),
    )

    def __init__(self, step: int, t: float, phase: Optional[str] = None):
        self.step = step
        self.t = t
        self.phase = phase

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or not isinstance(exc, FaultSimError):
            return False
        phase = self.phase
        if phase is None:
            phase = next(
                (
                    name
                    for kind, name in self.CLASSIFIED
                    if isinstance(exc, kind)
                ),
                "newmark",
            )
        message = f"Step {self.step} at t={self.t:.9g}s ({phase}): {exc}"
        if isinstance(exc, ConvergenceError):
            wrapped = type(exc)(message, report=exc.report)
        else:
            wrapped = type(exc)(message)
        raise wrapped from exc


def run_scenario(
    config: ScenarioConfig,
    storage: Optional[RunStorage] = None,
    checkpoint: Union[str, Path, None] = None,
    resume: Union[str, Path, None] = None,
    max_time: Optional[float] = None,
) -> RunOutputs:
    """Simulate a scenario from t=0 (or a checkpoint) until T0 or max_time

    Parameters
    ----------
    config:
        The scenario
    storage:
        Where to stream steps.csv and fault profiles. Nothing is written
        if None. Open it with append=True when resuming
    checkpoint:
        Write the state here at the end, and every
        output.checkpoint_every steps if set
    resume:
        Start from this checkpoint instead of the initial conditions
    max_time:
        Stop here instead of at T0. 0 only records the initial state

    Raises
    ------
    FaultSimError
        Any failure, with the step index and phase in the message
    """
    hierarchy = build_hierarchy(config)
    with _Phase(0, 0.0, "assembly"):
        stepper = Stepper(
            hierarchy,
            config.material,
            [config.friction_params(i) for i in config.interfaces],
            config.loading,
            config.solver,
            delta_tau=config.delta_tau,
            lumped_mass=config.lumped_mass,
        )
    logger.info(f"Running {config.name} with {stepper}")
    cells = [bottom.cell_measures() for bottom, _ in stepper.traces]
    with _Phase(0, 0.0, "contact"):
        if resume is not None:
            state = read_checkpoint(resume, cells, stepper.dofmap.n_dofs)
            logger.info(f"Resuming from {resume} at t={state.t:.9g}s")
        else:
            state = stepper.initial_state(config.initial_state)

    outputs = RunOutputs(
        config=config,
        fault_x={
            interface: trace.x.copy()
            for interface, (trace, _) in zip(
                stepper.interfaces, stepper.traces
            )
        },
        vertex_counts=[
            hierarchy.vertex_count(k) for k in range(len(hierarchy))
        ],
    )
    end = config.loading.T0 if max_time is None else min(
        max_time, config.loading.T0
    )
    step = state.step
    # a resumed run already wrote its starting row
    _record(
        outputs,
        None if resume is not None else storage,
        stepper,
        state,
        None,
        step,
        snapshot=True,
    )
    while end - state.t > 1e-12 * max(end, 1.0):
        with _Phase(step + 1, state.t):
            result = stepper.adaptive_step(state, until=end)
        for new_state, report in zip(result.states, result.reports):
            step += 1
            snapshot = (
                report.tau < config.output.snapshot_tau_threshold
                or step % config.output.snapshot_every == 0
            )
            with _Phase(step, new_state.t, "output"):
                _record(
                    outputs,
                    storage,
                    stepper,
                    new_state,
                    report,
                    step,
                    snapshot,
                )
                every = config.output.checkpoint_every
                if checkpoint is not None and every and step % every == 0:
                    write_checkpoint(new_state, checkpoint)
        state = result.final
        if step % PROGRESS_EVERY < 2:
            logger.info(
                f"Step {step}: t={state.t:.6g}s, tau={result.tau:.3g}s"
            )

    outputs.final_state = state
    with _Phase(step, state.t, "output"):
        if checkpoint is not None:
            write_checkpoint(state, checkpoint)
        if storage is not None:
            for interface in outputs.fault_x:
                snapshots = outputs.snapshots.get(interface, [])
                storage.write_contours(
                    interface,
                    emit_level_lines(
                        [s.t for s in snapshots],
                        outputs.fault_x[interface],
                        np.array([s.rates for s in snapshots]),
                        config.output.levels,
                    ),
                )
    logger.info(f"Finished {config.name} after {step} steps at t={state.t}s")
    return outputs


def _record(
    outputs: RunOutputs,
    storage: Optional[RunStorage],
    stepper: Stepper,
    state: SystemState,
    report: Optional[SolverReport],
    step: int,
    snapshot: bool,
):
    fixed_point = report.fixed_point_iterations if report else 0
    multigrid = report.mg_iterations if report else 0
    tau = report.tau if report else 0.0
    mean_rates = {
        interface: mean_slip_rate(state, index)
        for index, interface in enumerate(stepper.interfaces)
    }
    outputs.records.append(
        StepRecord(
            t=state.t,
            tau=tau,
            fixed_point_iterations=fixed_point,
            mg_iterations=multigrid,
            mean_rates=mean_rates,
        )
    )
    if report is not None:
        outputs.warnings.extend(report.warnings)
    if storage is not None:
        storage.write_step(state.t, tau, fixed_point, multigrid, mean_rates)
    if not snapshot:
        return
    for index, interface in enumerate(stepper.interfaces):
        rates = np.array(state.slip_rates[index])
        alpha = np.array(state.alpha[index].values)
        outputs.snapshots.setdefault(interface, []).append(
            Snapshot(t=state.t, rates=rates, alpha=alpha)
        )
        if storage is not None:
            storage.write_snapshot(
                interface, state.t, outputs.fault_x[interface], rates, alpha
            )
