"""Contact coupling across non-matching fault meshes

The bottom (non-mortar) side of each fault carries the dual basis, the
nodal normals and the quadrature cells. Its nodes are matched to the top
(mortar) side by an approximate contact map built from the deformation of
the previous time step. The weak jump across the fault then defines a change
of basis in which the jump at each contact node is a coordinate of its own,
so the no-penetration constraint becomes "normal jump component is zero".

Fault coordinates are the x coordinate of the reference configuration, since
all faults are horizontal.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from faultsim.core import DIM, dof_indices
from faultsim.exceptions import FaultSimError
from faultsim.fem import DofMap
from faultsim.logs import get_module_logger
from faultsim.mesh import Triangulation

logger = get_module_logger("mortar")

PROJECTION_TOLERANCE = 1e-10
MIN_SEGMENT_LENGTH = 1e-14

# 3-point Gauss-Legendre rule on [-1, 1]
GAUSS_POINTS = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 9.0


class NoContactError(FaultSimError):
    """The two sides of a fault do not overlap at all"""

    pass


class DegenerateGeometryError(FaultSimError):
    """Deformed fault geometry cannot be handled, for example a fault face
    with zero length or a contact map that folds over
    """

    pass


@dataclass(frozen=True)
class FaultTrace:
    """Vertices of one side of a fault, ordered along +x

    Parameters
    ----------
    interface:
        Fault id
    vertices:
        Global vertex numbers
    points:
        Reference coordinates (k, 2)
    dirichlet:
        Whether each vertex is on the Dirichlet boundary
    """

    interface: int
    vertices: np.ndarray
    points: np.ndarray
    dirichlet: np.ndarray

    @classmethod
    def from_mesh(
        cls, mesh: Triangulation, interface: int, dofmap: DofMap
    ) -> "FaultTrace":
        local = mesh.fault_vertices(interface)
        vertices = dofmap.global_vertices(mesh.subdomain, local)
        return cls(
            interface=interface,
            vertices=vertices,
            points=np.array(mesh.vertices[local]),
            dirichlet=dofmap.dirichlet[vertices],
        )

    def __len__(self):
        return len(self.vertices)

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def face_lengths(self) -> np.ndarray:
        return np.diff(self.x)

    def deformed(self, u: np.ndarray) -> np.ndarray:
        """Positions after adding the nodal displacement field u"""
        return self.points + u.reshape(-1, DIM)[self.vertices]

    def cell_measures(self) -> np.ndarray:
        """|C_p|: half of the adjacent face lengths. Cells tile the fault"""
        lengths = self.face_lengths
        cells = np.zeros(len(self))
        cells[:-1] += lengths / 2
        cells[1:] += lengths / 2
        return cells


@dataclass(frozen=True)
class ContactMap:
    """Approximate contact map from the deformed bottom side of a fault onto
    the deformed top side, pulled back to reference coordinates

    Overlap segments split every contact face of the bottom side at the
    preimages of top vertices. Segment k covers the bottom face parameter
    range [t0[k], t1[k]] and lies on top segment top_segment[k].
    """

    interface: int
    bottom: FaultTrace
    top: FaultTrace
    bottom_deformed: np.ndarray
    top_deformed: np.ndarray
    images: np.ndarray  # reference top x per bottom node, nan outside
    contact_faces: np.ndarray  # face f joins bottom nodes f and f+1
    contact_nodes: np.ndarray  # bottom node indices in the contact set
    overlap_face: np.ndarray
    overlap_t0: np.ndarray
    overlap_t1: np.ndarray
    overlap_top_segment: np.ndarray
    overlap_weights: np.ndarray  # deformed length of each overlap segment
    overlap_reference_weights: np.ndarray

    @property
    def deformed_face_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.bottom_deformed, axis=0), axis=1)

    def image(self, face: int, t) -> np.ndarray:
        """Reference top coordinate of the point at parameter t on a bottom
        contact face
        """
        return self.images[face] + np.asarray(t) * (
            self.images[face + 1] - self.images[face]
        )

    def rate_weights(self) -> np.ndarray:
        """w_p = integral of the nodal basis function over the contact faces,
        reference measure, for each contact node
        """
        weights = np.zeros(len(self.bottom))
        lengths = self.bottom.face_lengths[self.contact_faces]
        np.add.at(weights, self.contact_faces, lengths / 2)
        np.add.at(weights, self.contact_faces + 1, lengths / 2)
        return weights[self.contact_nodes]


def build_contact_map(
    bottom_faces: FaultTrace, top_faces: FaultTrace, deformation: np.ndarray
) -> ContactMap:
    """Closest point projection of every deformed bottom node onto the
    deformed top polyline

    Nodes projecting beyond either end of the top side are left out of the
    contact set, and so are Dirichlet nodes.

    Raises
    ------
    NoContactError
        If no bottom face lies fully inside the top side
    DegenerateGeometryError
        If the projection folds over
    """
    bottom, top = bottom_faces, top_faces
    interface = bottom.interface
    bottom_points = bottom.deformed(deformation)
    top_points = top.deformed(deformation)
    start, end = top_points[:-1], top_points[1:]
    direction = end - start
    length_sq = np.sum(direction**2, axis=1)
    if np.any(length_sq < MIN_SEGMENT_LENGTH**2):
        raise DegenerateGeometryError(
            f"Fault {interface}: deformed top side has a zero length face"
        )

    offsets = bottom_points[:, None, :] - start[None, :, :]
    raw = np.sum(offsets * direction[None], axis=2) / length_sq[None]
    clipped = np.clip(raw, 0.0, 1.0)
    closest = start[None] + clipped[..., None] * direction[None]
    distances = np.linalg.norm(bottom_points[:, None, :] - closest, axis=2)
    segment = np.argmin(distances, axis=1)
    rows = np.arange(len(bottom))
    t_raw, t = raw[rows, segment], clipped[rows, segment]
    outside = ((segment == 0) & (t_raw < -PROJECTION_TOLERANCE)) | (
        (segment == len(start) - 1) & (t_raw > 1 + PROJECTION_TOLERANCE)
    )
    images = top.x[segment] + t * np.diff(top.x)[segment]
    images[outside] = np.nan

    inside = ~outside
    faces = np.flatnonzero(inside[:-1] & inside[1:])
    if not len(faces):
        raise NoContactError(
            f"Fault {interface}: bottom and top sides do not overlap"
        )
    if np.any(images[faces + 1] <= images[faces]):
        raise DegenerateGeometryError(
            f"Fault {interface}: contact map is not injective"
        )
    nodes = np.unique(np.concatenate([faces, faces + 1]))
    nodes = nodes[~bottom.dirichlet[nodes]]
    excluded = int(outside.sum())
    if excluded:
        logger.debug(
            f"Fault {interface}: {excluded} bottom nodes project outside "
            f"the top side"
        )

    deformed_lengths = np.linalg.norm(np.diff(bottom_points, axis=0), axis=1)
    overlap = _overlap_segments(
        faces,
        images,
        top.x,
        deformed_lengths,
        bottom.face_lengths,
    )
    return ContactMap(
        interface=interface,
        bottom=bottom,
        top=top,
        bottom_deformed=bottom_points,
        top_deformed=top_points,
        images=images,
        contact_faces=faces,
        contact_nodes=nodes,
        **overlap,
    )


def _overlap_segments(
    faces, images, top_x, deformed_lengths, reference_lengths
):
    """Split every contact face at the preimages of top vertices"""
    face_ids, t0s, t1s, segments, weights, reference = [], [], [], [], [], []
    for face in faces:
        xi0, xi1 = images[face], images[face + 1]
        span = xi1 - xi0
        inner = top_x[
            (top_x > xi0 + PROJECTION_TOLERANCE * span)
            & (top_x < xi1 - PROJECTION_TOLERANCE * span)
        ]
        breaks = np.concatenate([[0.0], (inner - xi0) / span, [1.0]])
        for t0, t1 in zip(breaks[:-1], breaks[1:]):
            middle = xi0 + 0.5 * (t0 + t1) * span
            segment = np.searchsorted(top_x, middle) - 1
            face_ids.append(face)
            t0s.append(t0)
            t1s.append(t1)
            segments.append(int(np.clip(segment, 0, len(top_x) - 2)))
            weights.append(deformed_lengths[face] * (t1 - t0))
            reference.append(reference_lengths[face] * (t1 - t0))
    return {
        "overlap_face": np.array(face_ids, dtype=np.int64),
        "overlap_t0": np.array(t0s),
        "overlap_t1": np.array(t1s),
        "overlap_top_segment": np.array(segments, dtype=np.int64),
        "overlap_weights": np.array(weights),
        "overlap_reference_weights": np.array(reference),
    }


@dataclass(frozen=True)
class DualBasis:
    """Dual (biorthogonal) basis functions on the contact faces

    On contact face f, the dual function of face end e (0: node f,
    1: node f+1) is
    coefficients[k, e, 0] * (1 - t) + coefficients[k, e, 1] * t
    with k the position of f in contact_map.contact_faces. Rows of nodes that
    are not contact nodes are zero. Functions are discontinuous across faces
    and scaled so that <lambda_p, phi_q> = delta_pq in the deformed measure.
    """

    contact_map: ContactMap
    coefficients: np.ndarray  # (n_contact_faces, 2, 2)
    nodal_weights: np.ndarray  # deformed integral of lambda_q per contact node

    @property
    def nodes(self) -> np.ndarray:
        return self.contact_map.contact_nodes

    def evaluate(self, face_position: int, end: int, t) -> np.ndarray:
        c = self.coefficients[face_position, end]
        t = np.asarray(t, dtype=float)
        return c[0] * (1 - t) + c[1] * t


# D M^-1 for the P1 mass on an interval, D its lumped diagonal
_LOCAL_DUAL = np.array([[2.0, -1.0], [-1.0, 2.0]])


def build_dual_basis(map: ContactMap) -> DualBasis:
    """Element-wise dual basis construction

    Raises
    ------
    DegenerateGeometryError
        If a contact face has zero deformed length
    """
    contact_map = map
    lengths = contact_map.deformed_face_lengths[contact_map.contact_faces]
    if np.any(lengths < MIN_SEGMENT_LENGTH):
        raise DegenerateGeometryError(
            f"Fault {contact_map.interface}: contact face of zero length"
        )
    nodal = np.zeros(len(contact_map.bottom))
    np.add.at(nodal, contact_map.contact_faces, lengths / 2)
    np.add.at(nodal, contact_map.contact_faces + 1, lengths / 2)

    in_contact = np.zeros(len(contact_map.bottom), dtype=bool)
    in_contact[contact_map.contact_nodes] = True
    coefficients = np.zeros((len(contact_map.contact_faces), 2, 2))
    for k, face in enumerate(contact_map.contact_faces):
        for end, node in enumerate((face, face + 1)):
            if in_contact[node]:
                coefficients[k, end] = _LOCAL_DUAL[end] / nodal[node]
    return DualBasis(
        contact_map=contact_map,
        coefficients=coefficients,
        nodal_weights=nodal[contact_map.contact_nodes],
    )


def _quadrature(contact_map: ContactMap):
    """Gauss points on all overlap segments as (segment, t, weight)"""
    t0 = contact_map.overlap_t0[:, None]
    t1 = contact_map.overlap_t1[:, None]
    t = t0 + (t1 - t0) * (1 + GAUSS_POINTS[None]) / 2
    weights = contact_map.overlap_weights[:, None] * GAUSS_WEIGHTS[None] / 2
    segments = np.repeat(
        np.arange(len(contact_map.overlap_face))[:, None], len(GAUSS_POINTS), 1
    )
    return segments.ravel(), t.ravel(), weights.ravel()


def dual_mass_matrix(dual: DualBasis) -> np.ndarray:
    """<lambda_p, phi_q> over the deformed contact faces, for p running over
    all bottom nodes and q over the contact nodes. Used to check
    biorthogonality
    """
    contact_map = dual.contact_map
    position = {face: k for k, face in enumerate(contact_map.contact_faces)}
    column = {node: j for j, node in enumerate(contact_map.contact_nodes)}
    n_contact = len(contact_map.contact_nodes)
    result = np.zeros((len(contact_map.bottom), n_contact))
    segments, t, weights = _quadrature(contact_map)
    for s, ti, w in zip(segments, t, weights):
        face = contact_map.overlap_face[s]
        k = position[face]
        shape = (1 - ti, ti)
        for end in (0, 1):
            q = face + end
            if q not in column:
                continue
            value = dual.evaluate(k, end, ti)
            for p_end in (0, 1):
                result[face + p_end, column[q]] += w * shape[p_end] * value
    return result


def mortar_weights(dual: DualBasis) -> sp.csr_matrix:
    """M_pj = <lambda_j o pi, phi_p> for contact nodes p and top nodes j

    Row p gives the weights of the top side values in the weak jump at p.
    """
    contact_map = dual.contact_map
    position = {face: k for k, face in enumerate(contact_map.contact_faces)}
    row = {node: i for i, node in enumerate(contact_map.contact_nodes)}
    top_x = contact_map.top.x
    segments, t, weights = _quadrature(contact_map)
    rows, cols, values = [], [], []
    for s, ti, w in zip(segments, t, weights):
        face = contact_map.overlap_face[s]
        j = contact_map.overlap_top_segment[s]
        xi = contact_map.image(face, ti)
        local = (xi - top_x[j]) / (top_x[j + 1] - top_x[j])
        top_shape = ((j, 1 - local), (j + 1, local))
        for end in (0, 1):
            p = face + end
            if p not in row:
                continue
            value = w * dual.evaluate(position[face], end, ti)
            for top_node, shape in top_shape:
                rows.append(row[p])
                cols.append(top_node)
                values.append(value * shape)
    return sp.csr_matrix(
        (values, (rows, cols)),
        shape=(len(contact_map.contact_nodes), len(contact_map.top)),
    )


def nodal_normals(
    map: ContactMap, deformation: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Unit normal and tangent per contact node

    The normal is the normalized sum of the normals of the adjacent deformed
    bottom faces and points from the bottom body into the top body. The
    tangent is the normal rotated by +90 degrees, so (0, 1) gives (-1, 0).

    Returns
    -------
    normals, tangents: arrays (n_contact, 2)
    """
    contact_map = map
    points = contact_map.bottom.deformed(deformation)
    edges = np.diff(points, axis=0)
    face_normals = np.column_stack([-edges[:, 1], edges[:, 0]])
    face_normals /= np.linalg.norm(face_normals, axis=1)[:, None]
    summed = np.zeros_like(points)
    summed[:-1] += face_normals
    summed[1:] += face_normals
    normals = summed[contact_map.contact_nodes]
    normals = normals / np.linalg.norm(normals, axis=1)[:, None]
    tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
    return normals, tangents


class JumpBasisTransform:
    """Change of basis between nodal coefficients x and separated
    coefficients y

    y equals x except at contact nodes, where it holds the weak jump
    x_p - sum_j M_pj x_j. With C the sparse matrix of mortar weights,
    y = (I - C) x and x = (I + C) y. C squares to zero because top nodes are
    never contact nodes.

    The constrained free space is parametrized by z: two components for
    every free vertex outside the contact set and the tangential jump s_p
    for every contact node. z is ordered by global vertex number.
    """

    def __init__(
        self,
        coupling: sp.csr_matrix,
        basis: sp.csr_matrix,
        contact_vertices: np.ndarray,
        contact_origin: List[Tuple[int, int]],
        normals: np.ndarray,
        tangents: np.ndarray,
        contact_slots: np.ndarray,
        block_starts: np.ndarray,
        block_sizes: np.ndarray,
    ):
        self.coupling = coupling
        self.basis = basis
        self.contact_vertices = contact_vertices
        self.contact_origin = contact_origin
        self.normals = normals
        self.tangents = tangents
        self.contact_slots = contact_slots
        self.block_starts = block_starts
        self.block_sizes = block_sizes
        self._contact_dofs = dof_indices(contact_vertices)

    def __str__(self):
        return (
            f"JumpBasisTransform with {len(self.contact_vertices)} contact "
            f"nodes and {self.n_constrained} constrained unknowns"
        )

    @property
    def n_constrained(self) -> int:
        return self.basis.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Nodal to separated coefficients"""
        return x - self.coupling @ x

    def apply_inverse(self, y: np.ndarray) -> np.ndarray:
        return y + self.coupling @ y

    def project(self, x: np.ndarray) -> np.ndarray:
        """Projection onto functions with zero weak jump. Contact node values
        are replaced by their mortar weighted top values
        """
        y = self.apply(x)
        y[self._contact_dofs] = 0.0
        return self.apply_inverse(y)

    def jumps(self, x: np.ndarray) -> np.ndarray:
        """Weak jump (n_contact, 2) at each contact node"""
        return self.apply(x)[self._contact_dofs].reshape(-1, DIM)

    def restrict(self, x: np.ndarray) -> np.ndarray:
        """Constrained coordinates z of a nodal vector. Normal jump
        components and Dirichlet values are dropped
        """
        return self.basis_separated.T @ self.apply(x)

    def expand(self, z: np.ndarray, lift=None) -> np.ndarray:
        """Nodal vector of constrained coordinates, plus an optional lift
        carrying the Dirichlet values
        """
        x = self.apply_inverse(self.basis_separated @ z)
        return x if lift is None else x + lift

    def lift(self, dirichlet_values: np.ndarray) -> np.ndarray:
        """Nodal vector that has the given values on the Dirichlet dofs, is
        zero elsewhere in separated coordinates and has no jump
        """
        return self.apply_inverse(dirichlet_values)

    @property
    def basis_separated(self) -> sp.csr_matrix:
        """Q: z to separated coordinates"""
        return self.basis

    @property
    def nodal_basis(self) -> sp.csr_matrix:
        """E = (I + C) Q: z to nodal coefficients"""
        return sp.csr_matrix(self.basis + self.coupling @ self.basis)

    def tangential_jumps(self, z: np.ndarray) -> np.ndarray:
        return z[self.contact_slots]


def build_jump_transform(
    map: Union[ContactMap, Sequence[ContactMap]],
    dual: Union[DualBasis, Sequence[DualBasis]],
    normals,
    dofmap: DofMap,
) -> JumpBasisTransform:
    """Separated basis for the contact maps of all faults

    Parameters
    ----------
    map, dual:
        One per fault, in the same order
    normals:
        (normals, tangents) per fault, as returned by nodal_normals
    dofmap:
        Global numbering, used to leave out Dirichlet vertices
    """
    maps = [map] if isinstance(map, ContactMap) else list(map)
    duals = [dual] if isinstance(dual, DualBasis) else list(dual)
    if isinstance(normals, tuple) and len(maps) == 1 and len(normals) == 2:
        if isinstance(normals[0], np.ndarray) and normals[0].ndim == 2:
            normals = [normals]

    rows, cols, values = [], [], []
    tangent_of = {}
    normal_of = {}
    origin_of = {}
    for index, (contact_map, dual_basis, (n, t)) in enumerate(
        zip(maps, duals, normals)
    ):
        weights = mortar_weights(dual_basis).tocoo()
        contact_nodes = contact_map.contact_nodes
        bottom_vertices = contact_map.bottom.vertices[contact_nodes]
        top_vertices = contact_map.top.vertices
        for component in range(DIM):
            rows.append(DIM * bottom_vertices[weights.row] + component)
            cols.append(DIM * top_vertices[weights.col] + component)
            values.append(weights.data)
        for k, vertex in enumerate(bottom_vertices):
            vertex = int(vertex)
            if vertex in tangent_of:
                raise DegenerateGeometryError(
                    f"Vertex {vertex} is a contact node of two faults"
                )
            tangent_of[vertex] = t[k]
            normal_of[vertex] = n[k]
            origin_of[vertex] = (index, int(contact_nodes[k]))

    n_dofs = dofmap.n_dofs
    coupling = sp.csr_matrix(
        (
            np.concatenate(values) if values else [],
            (
                np.concatenate(rows) if rows else [],
                np.concatenate(cols) if cols else [],
            ),
        ),
        shape=(n_dofs, n_dofs),
    )

    q_rows, q_cols, q_values = [], [], []
    starts, sizes, slots = [], [], []
    contact_vertices = []
    column = 0
    for vertex in dofmap.free_vertices:
        vertex = int(vertex)
        starts.append(column)
        if vertex in tangent_of:
            tangent = tangent_of[vertex]
            q_rows.extend([DIM * vertex, DIM * vertex + 1])
            q_cols.extend([column, column])
            q_values.extend([tangent[0], tangent[1]])
            sizes.append(1)
            slots.append(column)
            contact_vertices.append(vertex)
            column += 1
        else:
            q_rows.extend([DIM * vertex, DIM * vertex + 1])
            q_cols.extend([column, column + 1])
            q_values.extend([1.0, 1.0])
            sizes.append(2)
            column += 2
    basis = sp.csr_matrix(
        (q_values, (q_rows, q_cols)), shape=(n_dofs, column)
    )
    contact_vertices_arr = np.array(contact_vertices, dtype=np.int64)
    transform = JumpBasisTransform(
        coupling=coupling,
        basis=basis,
        contact_vertices=contact_vertices_arr,
        contact_origin=[origin_of[v] for v in contact_vertices],
        normals=np.array([normal_of[v] for v in contact_vertices]).reshape(
            -1, DIM
        ),
        tangents=np.array([tangent_of[v] for v in contact_vertices]).reshape(
            -1, DIM
        ),
        contact_slots=np.array(slots, dtype=np.int64),
        block_starts=np.array(starts, dtype=np.int64),
        block_sizes=np.array(sizes, dtype=np.int64),
    )
    logger.debug(f"Built {transform}")
    return transform


@dataclass
class ContactCoupling:
    """All mortar data of one time step, for all faults

    Contact node arrays (rate_weights, contact_interface, contact_local) are
    aligned with transform.contact_vertices.
    """

    maps: List[ContactMap]
    duals: List[DualBasis]
    normals: List[Tuple[np.ndarray, np.ndarray]]
    transform: JumpBasisTransform
    rate_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    contact_interface: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )
    contact_local: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )


def build_contact_coupling(
    traces: Sequence[Tuple[FaultTrace, FaultTrace]],
    deformation: np.ndarray,
    dofmap: DofMap,
) -> ContactCoupling:
    """Contact map, dual basis, normals and jump transform for every fault,
    built from the given deformation

    Parameters
    ----------
    traces:
        (bottom, top) trace pair per fault
    deformation:
        Nodal displacement of the previous time step
    """
    maps = [build_contact_map(b, t, deformation) for b, t in traces]
    duals = [build_dual_basis(m) for m in maps]
    normals = [nodal_normals(m, deformation) for m in maps]
    transform = build_jump_transform(maps, duals, normals, dofmap)

    weights_per_map = [m.rate_weights() for m in maps]
    position_per_map = [
        {int(node): k for k, node in enumerate(m.contact_nodes)} for m in maps
    ]
    interface_index = np.array(
        [index for index, _ in transform.contact_origin], dtype=np.int64
    )
    local = np.array(
        [node for _, node in transform.contact_origin], dtype=np.int64
    )
    weights = np.array(
        [
            weights_per_map[index][position_per_map[index][node]]
            for index, node in transform.contact_origin
        ]
    )
    return ContactCoupling(
        maps=maps,
        duals=duals,
        normals=normals,
        transform=transform,
        rate_weights=weights,
        contact_interface=interface_index,
        contact_local=local,
    )


def dump_mortar_weights(weights: sp.spmatrix, path: Union[str, Path]) -> None:
    """Write nonzero mortar weights as `row col value` lines"""
    coo = sp.coo_matrix(weights)
    order = np.lexsort((coo.col, coo.row))
    lines = [
        f"{coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}" for k in order
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
