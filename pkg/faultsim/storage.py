"""Classes and functions for writing simulation results to disk"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Union

import numpy as np

from faultsim.exceptions import CheckpointError, FaultSimError
from faultsim.friction import StateField
from faultsim.logs import get_module_logger
from faultsim.stepper import SystemState

logger = get_module_logger("storage")

STEP_COLUMNS = ("t", "tau", "fp_iters", "mg_iters", "fault_id", "mean_rel_vel")
SNAPSHOT_COLUMNS = ("t", "x", "rel_vel", "alpha")

CHECKPOINT_MAGIC = b"FSCK"
CHECKPOINT_VERSION = 2
# version 1 has no step counter
READABLE_VERSIONS = (1, 2)


def _number(value: float) -> str:
    return "%.17g" % value


class RunStorage:
    """A directory that one run writes its outputs to

    Creates steps.csv with one row per fault per accepted step,
    fault_<i>.csv with fault profiles and contours_<i>.txt with level
    lines. Every row is flushed right away.

    Parameters
    ----------
    path:
        Output directory, created when the first row is written
    append:
        Continue existing csv files instead of replacing them, for runs
        resumed from a checkpoint
    """

    def __init__(self, path: Union[str, Path], append: bool = False):
        self.path = Path(path)
        self.append = append
        self._steps: Optional[TextIO] = None
        self._snapshots: Dict[int, TextIO] = {}

    def __str__(self):
        return f"RunStorage at {self.path}"

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def steps_path(self) -> Path:
        return self.path / "steps.csv"

    def snapshot_path(self, fault: int) -> Path:
        return self.path / f"fault_{fault}.csv"

    def contours_path(self, fault: int) -> Path:
        return self.path / f"contours_{fault}.txt"

    def _open(self, path: Path, header: Sequence[str]) -> TextIO:
        """Open a csv file and write its header, unless appending to a file
        that already has one

        Raises
        ------
        StorageError
            If the file cannot be created
        """
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            continued = (
                self.append and path.exists() and path.stat().st_size > 0
            )
            handle = open(path, "a" if continued else "w", newline="\n")
        except OSError as e:
            raise StorageError(f"Cannot write to {path}") from e
        if continued:
            logger.debug(f'Appending to "{path}"')
        else:
            logger.debug(f'Writing to "{path}"')
            handle.write(",".join(header) + "\n")
            handle.flush()
        return handle

    def write_step(
        self,
        t: float,
        tau: float,
        fixed_point_iterations: int,
        mg_iterations: int,
        mean_rates: Dict[int, float],
    ):
        """One row per fault for an accepted step"""
        if self._steps is None:
            self._steps = self._open(self.steps_path, STEP_COLUMNS)
        for fault, rate in mean_rates.items():
            self._steps.write(
                f"{_number(t)},{_number(tau)},{fixed_point_iterations},"
                f"{mg_iterations},{fault},{_number(rate)}\n"
            )
        self._steps.flush()

    def write_snapshot(
        self, fault: int, t: float, x: np.ndarray, rates: np.ndarray, alpha
    ):
        """Fault profile at time t, one row per bottom fault node"""
        if fault not in self._snapshots:
            self._snapshots[fault] = self._open(
                self.snapshot_path(fault), SNAPSHOT_COLUMNS
            )
        handle = self._snapshots[fault]
        for position, rate, state in zip(x, rates, alpha):
            handle.write(
                f"{_number(t)},{_number(position)},{_number(rate)},"
                f"{_number(state)}\n"
            )
        handle.flush()

    def write_contours(self, fault: int, lines: Dict[float, List[np.ndarray]]):
        write_level_lines(self.contours_path(fault), lines)

    def close(self):
        for handle in [self._steps, *self._snapshots.values()]:
            if handle is not None:
                handle.close()
        self._steps = None
        self._snapshots = {}


def write_level_lines(
    path: Union[str, Path], lines: Dict[float, List[np.ndarray]]
) -> None:
    """Write polylines per level as blocks

        level <value>
        <x> <t>
        ...
        <blank line ends a polyline>

    An empty dict gives an empty file.
    """
    chunks = []
    for level, polylines in lines.items():
        for polyline in polylines:
            rows = "\n".join(
                f"{_number(x)} {_number(t)}" for x, t in polyline
            )
            chunks.append(f"level {_number(level)}\n{rows}\n")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(chunks))
    except OSError as e:
        raise StorageError(f"Cannot write level lines to {path}") from e


def read_level_lines(path: Union[str, Path]) -> Dict[float, List[np.ndarray]]:
    lines: Dict[float, List[np.ndarray]] = {}
    for block in Path(path).read_text().split("\n\n"):
        rows = block.strip().splitlines()
        if not rows:
            continue
        level = float(rows[0].split()[1])
        points = np.array(
            [[float(v) for v in row.split()] for row in rows[1:]]
        )
        lines.setdefault(level, []).append(points)
    return lines


def write_checkpoint(state: SystemState, path: Union[str, Path]) -> None:
    """Write a full SystemState as portable binary

    Layout, all little-endian: magic b"FSCK", uint32 version, float64 t,
    float64 tau_prev, uint64 step, uint64 n_dofs, n_dofs float64 each of
    u, u_dot and u_ddot, uint64 n_faults, then per fault uint64 n_nodes
    followed by n_nodes float64 state values and n_nodes float64 slip rates.
    """
    n = len(state.u)
    parts = [
        CHECKPOINT_MAGIC,
        np.array([CHECKPOINT_VERSION], dtype="<u4").tobytes(),
        np.array([state.t, state.tau_prev], dtype="<f8").tobytes(),
        np.array([state.step, n], dtype="<u8").tobytes(),
    ]
    for vector in (state.u, state.u_dot, state.u_ddot):
        if len(vector) != n:
            raise CheckpointError("Nodal vectors differ in length")
        parts.append(np.asarray(vector, dtype="<f8").tobytes())
    parts.append(np.array([len(state.alpha)], dtype="<u8").tobytes())
    rates = state.slip_rates or tuple(
        np.zeros(len(alpha.values)) for alpha in state.alpha
    )
    for alpha, slip in zip(state.alpha, rates):
        parts.append(np.array([len(alpha.values)], dtype="<u8").tobytes())
        parts.append(np.asarray(alpha.values, dtype="<f8").tobytes())
        parts.append(np.asarray(slip, dtype="<f8").tobytes())
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"".join(parts))
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint {path}") from e
    logger.info(f"Wrote checkpoint at t={state.t:.9g}s to {path}")


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        if self.offset + size > len(self.data):
            raise CheckpointError(f"Checkpoint {self.path} is truncated")
        values = np.frombuffer(
            self.data, dtype=dtype, count=count, offset=self.offset
        )
        self.offset += size
        return values.astype(np.dtype(dtype).newbyteorder("="))


def read_checkpoint(
    path: Union[str, Path],
    cell_measures: Sequence[np.ndarray],
    n_dofs: Optional[int] = None,
) -> SystemState:
    """Read a checkpoint written by write_checkpoint

    Parameters
    ----------
    path:
        Checkpoint file
    cell_measures:
        Dual cell lengths per fault of the model to resume
    n_dofs:
        Expected length of the nodal vectors, not checked if None

    Raises
    ------
    CheckpointError
        If the file cannot be read or does not match the model
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}") from e
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a faultsim checkpoint")
    reader = _Reader(data, path)
    reader.offset = len(CHECKPOINT_MAGIC)
    version = int(reader.take("<u4", 1)[0])
    if version not in READABLE_VERSIONS:
        raise CheckpointError(f"Unsupported checkpoint version {version}")
    t, tau_prev = reader.take("<f8", 2)
    step = int(reader.take("<u8", 1)[0]) if version > 1 else 0
    n = int(reader.take("<u8", 1)[0])
    if n_dofs is not None and n != n_dofs:
        raise CheckpointError(
            f"Checkpoint has {n} dofs, the model has {n_dofs}"
        )
    u, u_dot, u_ddot = (reader.take("<f8", n) for _ in range(3))
    n_faults = int(reader.take("<u8", 1)[0])
    if n_faults != len(cell_measures):
        raise CheckpointError(
            f"Checkpoint has {n_faults} faults, the model has "
            f"{len(cell_measures)}"
        )
    alpha, rates = [], []
    for cells in cell_measures:
        count = int(reader.take("<u8", 1)[0])
        if count != len(cells):
            raise CheckpointError(
                f"Checkpoint fault has {count} nodes, expected {len(cells)}"
            )
        alpha.append(
            StateField(values=reader.take("<f8", count), cell_measures=cells)
        )
        rates.append(reader.take("<f8", count))
    if reader.offset != len(data):
        raise CheckpointError(f"Trailing data in checkpoint {path}")
    return SystemState(
        t=float(t),
        tau_prev=float(tau_prev),
        u=u,
        u_dot=u_dot,
        u_ddot=u_ddot,
        alpha=tuple(alpha),
        slip_rates=tuple(rates),
        step=step,
    )


class StorageError(FaultSimError):
    pass
