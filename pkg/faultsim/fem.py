"""Piecewise linear vector finite elements on the subdomains. Assembly of
mass, viscosity and elasticity operators and of the load functional.

Operators cover all vertices of all subdomains, Dirichlet vertices included.
DofMap tells which degrees of freedom are free. Boundary values enter the
reduced systems by lifting.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field

from faultsim.core import DIM, BlockMatrix, BoundaryKind, dof_indices
from faultsim.exceptions import FaultSimError
from faultsim.logs import get_module_logger
from faultsim.mesh import Triangulation

logger = get_module_logger("fem")

MIN_TRIANGLE_AREA = 1e-14  # m^2

Meshes = Union[Triangulation, Sequence[Triangulation]]


class MaterialParams(BaseModel):
    """Isotropic Kelvin-Voigt material. Defaults are the values of the
    laboratory-scale experiments.

    Notes
    -----
    The viscosity tensor is taken proportional to the elasticity tensor,
    A = viscosity_scale * B. viscosity_scale has the unit of time.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    E: float = Field(default=4.12e7, gt=0)  # Pa
    nu: float = Field(default=0.3, gt=0, lt=0.5)
    rho: float = Field(default=5e3, gt=0)  # kg/m^2, per unit thickness
    g: float = Field(default=9.81, ge=0)  # N/kg
    viscosity_scale: float = Field(default=1e-3, ge=0)  # s

    @property
    def lame_lambda(self) -> float:
        return self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))

    @property
    def lame_mu(self) -> float:
        return self.E / (2 * (1 + self.nu))

    def hooke(self) -> np.ndarray:
        """Plane strain elasticity in Voigt notation (xx, yy, shear xy)"""
        lam, mu = self.lame_lambda, self.lame_mu
        return np.array(
            [
                [lam + 2 * mu, lam, 0.0],
                [lam, lam + 2 * mu, 0.0],
                [0.0, 0.0, mu],
            ]
        )


class AssemblyError(FaultSimError):
    pass


class DofMap:
    """Global vertex numbering over the subdomains of one level

    Vertices of the i-th mesh are numbered after those of mesh i-1. Vertex v
    owns dofs 2v and 2v+1.
    """

    def __init__(self, meshes: Meshes):
        meshes = _as_list(meshes)
        counts = [mesh.n_vertices for mesh in meshes]
        self.subdomains = [mesh.subdomain for mesh in meshes]
        self.offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(
            np.int64
        )
        self.n_vertices = int(sum(counts))
        self.dirichlet = np.zeros(self.n_vertices, dtype=bool)
        self.driven = np.zeros(self.n_vertices, dtype=bool)
        for mesh, offset in zip(meshes, self.offsets):
            self.dirichlet[mesh.dirichlet_vertices() + offset] = True
            self.driven[mesh.driven_vertices() + offset] = True

    def __str__(self):
        return (
            f"DofMap with {self.n_vertices} vertices, "
            f"{int(self.dirichlet.sum())} on the Dirichlet boundary"
        )

    @property
    def n_dofs(self) -> int:
        return DIM * self.n_vertices

    def offset(self, subdomain: int) -> int:
        return int(self.offsets[self.subdomains.index(subdomain)])

    def global_vertices(self, subdomain: int, local) -> np.ndarray:
        return np.asarray(local, dtype=np.int64) + self.offset(subdomain)

    @property
    def free_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet)

    @property
    def free_dofs(self) -> np.ndarray:
        return dof_indices(self.free_vertices)

    @property
    def dirichlet_dofs(self) -> np.ndarray:
        return dof_indices(np.flatnonzero(self.dirichlet))

    def restrict(self, matrix: sp.spmatrix) -> sp.csr_matrix:
        """Free-free block of an operator"""
        free = self.free_dofs
        return sp.csr_matrix(matrix)[free][:, free]


def _as_list(meshes: Meshes):
    if isinstance(meshes, Triangulation):
        return [meshes]
    return list(meshes)


def _element_gradients(points: np.ndarray, subdomain: int):
    """Areas (m,) and shape function gradients (m, 3, 2) of P1 triangles"""
    x, y = points[:, :, 0], points[:, :, 1]
    areas = 0.5 * (
        (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
        - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    )
    bad = np.flatnonzero(areas < MIN_TRIANGLE_AREA)
    if len(bad):
        raise AssemblyError(
            f"Triangle {bad[0]} of subdomain {subdomain} is degenerate "
            f"(area {areas[bad[0]]:.3g} m^2)"
        )
    b = np.stack(
        [y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1
    )
    c = np.stack(
        [x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1
    )
    gradients = np.stack([b, c], axis=2) / (2 * areas)[:, None, None]
    return areas, gradients


def element_stiffness(points: np.ndarray, hooke: np.ndarray, subdomain=0):
    """Constant strain element matrices (m, 6, 6) in interleaved ordering"""
    areas, gradients = _element_gradients(points, subdomain)
    strain = np.zeros((len(points), 3, 6))
    strain[:, 0, 0::2] = gradients[:, :, 0]
    strain[:, 1, 1::2] = gradients[:, :, 1]
    strain[:, 2, 0::2] = gradients[:, :, 1]
    strain[:, 2, 1::2] = gradients[:, :, 0]
    return areas[:, None, None] * np.einsum(
        "mki,kl,mlj->mij", strain, hooke, strain
    )


def _scatter(meshes, element_matrices) -> BlockMatrix:
    """Sum element matrices (per mesh, (m, 6, 6)) into a global matrix"""
    rows, cols, values = [], [], []
    offset = 0
    for mesh, matrices in zip(meshes, element_matrices):
        dofs = dof_indices((mesh.triangles + offset).ravel()).reshape(-1, 6)
        rows.append(np.repeat(dofs, 6, axis=1).ravel())
        cols.append(np.tile(dofs, (1, 6)).ravel())
        values.append(matrices.ravel())
        offset += mesh.n_vertices
    n_vertices = offset
    n = DIM * n_vertices
    return sp.csr_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )


def assemble_elasticity(mesh: Meshes, params: MaterialParams) -> BlockMatrix:
    """Matrix of b(v, w) = int B eps(v) : eps(w) dx

    Raises
    ------
    AssemblyError
        If a triangle is degenerate
    """
    meshes = _as_list(mesh)
    hooke = params.hooke()
    return _scatter(
        meshes,
        [
            element_stiffness(m.triangle_points(), hooke, m.subdomain)
            for m in meshes
        ],
    )


def assemble_viscosity(mesh: Meshes, params: MaterialParams) -> BlockMatrix:
    """Matrix of a(v, w), with A = viscosity_scale * B"""
    if params.viscosity_scale == 0:
        n = DIM * sum(m.n_vertices for m in _as_list(mesh))
        return sp.csr_matrix((n, n))
    return params.viscosity_scale * assemble_elasticity(mesh, params)


def assemble_mass(
    mesh: Meshes, params: MaterialParams, lumped: bool = False
) -> BlockMatrix:
    """Matrix of (rho v, w). Consistent P1 mass unless lumped"""
    meshes = _as_list(mesh)
    if lumped:
        local = np.eye(3) / 3.0
    else:
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    block = np.kron(local, np.eye(DIM))
    element_matrices = []
    for m in meshes:
        areas, _ = _element_gradients(m.triangle_points(), m.subdomain)
        element_matrices.append(params.rho * areas[:, None, None] * block)
    return _scatter(meshes, element_matrices)


def assemble_load(
    mesh: Meshes,
    params: MaterialParams,
    neumann_data: Optional[Tuple[float, float]] = None,
) -> np.ndarray:
    """Vector of l(v) = int f v dx + int f^N v ds with f = -rho g e_2

    Parameters
    ----------
    neumann_data:
        Constant traction f^N (Pa m) on all Neumann faces. Defaults to zero
    """
    meshes = _as_list(mesh)
    load = []
    for m in meshes:
        areas, _ = _element_gradients(m.triangle_points(), m.subdomain)
        local = np.zeros((m.n_vertices, DIM))
        np.add.at(
            local[:, 1],
            m.triangles.ravel(),
            np.repeat(-params.rho * params.g * areas / 3.0, 3),
        )
        if neumann_data is not None:
            faces = m.faces_with(lambda tag: tag.kind == BoundaryKind.NEUMANN)
            lengths = np.linalg.norm(
                m.vertices[faces[:, 1]] - m.vertices[faces[:, 0]], axis=1
            )
            traction = np.asarray(neumann_data, dtype=float)
            for end in (0, 1):
                np.add.at(
                    local, faces[:, end], 0.5 * lengths[:, None] * traction
                )
        load.append(local.ravel())
    return np.concatenate(load)


@dataclass(frozen=True)
class Operators:
    """Everything assembled once per run on the finest level"""

    mass: BlockMatrix
    viscosity: BlockMatrix
    elasticity: BlockMatrix
    load: np.ndarray
    dofmap: DofMap


def assemble_operators(
    meshes: Meshes,
    params: MaterialParams,
    lumped_mass: bool = False,
    neumann_data: Optional[Tuple[float, float]] = None,
) -> Operators:
    meshes = _as_list(meshes)
    operators = Operators(
        mass=assemble_mass(meshes, params, lumped=lumped_mass),
        viscosity=assemble_viscosity(meshes, params),
        elasticity=assemble_elasticity(meshes, params),
        load=assemble_load(meshes, params, neumann_data),
        dofmap=DofMap(meshes),
    )
    logger.info(f"Assembled operators on {operators.dofmap}")
    return operators


def compose_an(M, A, B, tau: float) -> BlockMatrix:
    """Bilinear form of a Newmark step, (2/tau) M + A + (tau/2) B"""
    if tau <= 0:
        raise ValueError(f"Time step should be positive, got {tau}")
    return sp.csr_matrix((2.0 / tau) * M + A + (tau / 2.0) * B)


def compose_ln(operators: Operators, previous, tau: float) -> np.ndarray:
    """Right hand side of a Newmark step

    l + M u''_{n-1} + (2/tau) M u'_{n-1} - (tau/2) B u'_{n-1} - B u_{n-1}

    Parameters
    ----------
    operators:
        M, B and the load l
    previous:
        Anything with u, u_dot and u_ddot nodal vectors, usually a
        SystemState
    tau:
        Step size (s)
    """
    if tau <= 0:
        raise ValueError(f"Time step should be positive, got {tau}")
    M, B = operators.mass, operators.elasticity
    return (
        operators.load
        + M @ previous.u_ddot
        + (2.0 / tau) * (M @ previous.u_dot)
        - (tau / 2.0) * (B @ previous.u_dot)
        - B @ previous.u
    )


def discrete_energy(M, B, u: np.ndarray, u_dot: np.ndarray) -> float:
    """Kinetic plus elastic energy (J per m thickness)"""
    return float(0.5 * u_dot @ (M @ u_dot) + 0.5 * u @ (B @ u))


def dump_matrix(matrix: sp.spmatrix, path: Union[str, Path]) -> None:
    """Write nonzero 2x2 blocks as `row col m00 m01 m10 m11` lines, rows and
    columns counted in vertices
    """
    blocks = sp.bsr_matrix(matrix, blocksize=(DIM, DIM))
    blocks.sort_indices()
    lines = []
    for row in range(blocks.shape[0] // DIM):
        for k in range(blocks.indptr[row], blocks.indptr[row + 1]):
            values = " ".join(repr(float(v)) for v in blocks.data[k].ravel())
            lines.append(f"{row} {blocks.indices[k]} {values}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
