"""Layered rectangular reference domains, fault graded red-green refinement
and the nested mesh hierarchy used by assembly and multigrid.
"""
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field

from faultsim.core import BoundaryKind, EdgeTag
from faultsim.exceptions import FaultSimError, InvalidSpecError
from faultsim.logs import get_module_logger

logger = get_module_logger("mesh")

DEFAULT_LEVEL_CAP = 12
DEFAULT_MIN_ANGLE = 20.0  # degrees
COORDINATE_TOLERANCE = 1e-12


class SubdomainSpec(BaseModel):
    """One rectangular body of a layered fault system

    Subdomains are stacked bottom to top in order of their id. Each side of
    the rectangle carries an EdgeTag.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: int = Field(ge=1)
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    bottom: EdgeTag
    top: EdgeTag
    left: EdgeTag = EdgeTag.neumann()
    right: EdgeTag = EdgeTag.neumann()
    target_h0: Optional[float] = Field(default=None, gt=0)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def __str__(self):
        return (
            f"Subdomain {self.id} ({self.x_min}, {self.x_max}) x "
            f"({self.y_min}, {self.y_max})"
        )


class FaultSegment(BaseModel):
    """Straight horizontal interface between subdomain `interface` and the
    one above it
    """

    model_config = ConfigDict(frozen=True)

    interface: int
    x_min: float
    x_max: float
    y: float

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def endpoints(self) -> np.ndarray:
        return np.array([[self.x_min, self.y], [self.x_max, self.y]])


def check_layering(specs: Sequence[SubdomainSpec]) -> None:
    """Make sure subdomains form a single stack with consistent fault tags

    Raises
    ------
    InvalidSpecError
        When rectangles are degenerate, do not stack, or tags do not match
        their neighbours
    """
    if not specs:
        raise InvalidSpecError("At least one subdomain is needed")
    ids = [spec.id for spec in specs]
    if ids != list(range(1, len(specs) + 1)):
        raise InvalidSpecError(
            f"Subdomain ids should be 1..{len(specs)} in order, found {ids}"
        )
    for spec in specs:
        if spec.width <= 0 or spec.height <= 0:
            raise InvalidSpecError(f"{spec} is degenerate")
        for side in ("left", "right"):
            if getattr(spec, side).is_fault:
                raise InvalidSpecError(
                    f"{spec}: faults must be horizontal, found one on the "
                    f"{side} side"
                )
    if specs[0].bottom.is_fault or specs[-1].top.is_fault:
        raise InvalidSpecError("Outermost subdomains cannot have fault edges")

    for below, above in zip(specs[:-1], specs[1:]):
        if abs(below.y_max - above.y_min) > COORDINATE_TOLERANCE:
            raise InvalidSpecError(f"{below} and {above} do not touch")
        if (
            abs(below.x_min - above.x_min) > COORDINATE_TOLERANCE
            or abs(below.x_max - above.x_max) > COORDINATE_TOLERANCE
        ):
            raise InvalidSpecError(
                f"{below} and {above} should span the same x-range"
            )
        expected = EdgeTag.fault_bottom(below.id)
        if below.top != expected:
            raise InvalidSpecError(
                f"Top of {below} should be tagged {expected}"
            )
        expected = EdgeTag.fault_top(below.id)
        if above.bottom != expected:
            raise InvalidSpecError(
                f"Bottom of {above} should be tagged {expected}"
            )


def fault_segments(specs: Sequence[SubdomainSpec]) -> List[FaultSegment]:
    return [
        FaultSegment(
            interface=below.id,
            x_min=below.x_min,
            x_max=below.x_max,
            y=below.y_max,
        )
        for below in specs[:-1]
    ]


class RefinementOverflowError(FaultSimError):
    """Refinement did not reach its target within the allowed number of
    levels
    """

    pass


class Triangulation:
    """Conforming triangulation of a single subdomain on one level

    Vertex coordinates are in meters. Triangles are counter-clockwise vertex
    index triples. Boundary faces are oriented along the counter-clockwise
    triangle they belong to, so the outer normal points to their right.

    Parameters
    ----------
    subdomain: int
        id of the subdomain this triangulation covers
    vertices: array (n, 2)
    triangles: array (m, 3)
    boundary_faces: array (k, 2)
    boundary_tags: list of EdgeTag, one per boundary face
    parent: sparse matrix (n, n_coarse), optional
        Prolongation from the coarser level. Row i holds the barycentric
        weights that reproduce vertex i from coarse vertices
    """

    def __init__(
        self,
        subdomain: int,
        vertices: np.ndarray,
        triangles: np.ndarray,
        boundary_faces: np.ndarray,
        boundary_tags: Sequence[EdgeTag],
        parent: Optional[sp.csr_matrix] = None,
    ):
        self.subdomain = subdomain
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        self.vertices = _frozen(vertices)
        self.triangles = _frozen(
            np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        )
        self.boundary_faces = _frozen(
            np.asarray(boundary_faces, dtype=np.int64).reshape(-1, 2)
        )
        self.boundary_tags = tuple(boundary_tags)
        self.parent = parent
        if len(self.boundary_tags) != len(self.boundary_faces):
            raise ValueError("Every boundary face needs exactly one tag")

    def __str__(self):
        return (
            f"Triangulation of subdomain {self.subdomain} with "
            f"{self.n_vertices} vertices and {len(self.triangles)} triangles"
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_points(self) -> np.ndarray:
        """Coordinates (m, 3, 2)"""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        return _signed_areas(self.triangle_points())

    def diameters(self) -> np.ndarray:
        """Longest edge h_T of every triangle"""
        points = self.triangle_points()
        edges = points[:, [1, 2, 0]] - points
        return np.linalg.norm(edges, axis=2).max(axis=1)

    def min_angles(self) -> np.ndarray:
        """Smallest interior angle per triangle in degrees"""
        return _min_angles(self.triangle_points())

    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs"""
        pairs = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        return np.unique(np.sort(pairs, axis=1), axis=0)

    def faces_with(self, predicate) -> np.ndarray:
        keep = [
            i for i, tag in enumerate(self.boundary_tags) if predicate(tag)
        ]
        return self.boundary_faces[keep].reshape(-1, 2)

    def fault_faces(self, interface: int) -> np.ndarray:
        """Faces on the given interface, each oriented and ordered along +x"""
        faces = self.faces_with(
            lambda tag: tag.is_fault and tag.interface == interface
        )
        xs = self.vertices[faces][:, :, 0]
        faces = np.where((xs[:, 0] > xs[:, 1])[:, None], faces[:, ::-1], faces)
        order = np.argsort(self.vertices[faces[:, 0], 0], kind="stable")
        return faces[order]

    def fault_vertices(self, interface: int) -> np.ndarray:
        """Vertices on the interface, ordered along +x"""
        faces = self.fault_faces(interface)
        if not len(faces):
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([faces[:, 0], faces[-1:, 1]])

    def interfaces(self) -> List[int]:
        return sorted(
            {tag.interface for tag in self.boundary_tags if tag.is_fault}
        )

    def dirichlet_vertices(self) -> np.ndarray:
        faces = self.faces_with(lambda tag: tag.kind == BoundaryKind.DIRICHLET)
        return np.unique(faces)

    def driven_vertices(self) -> np.ndarray:
        faces = self.faces_with(lambda tag: tag.driven)
        return np.unique(faces)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _signed_areas(points: np.ndarray) -> np.ndarray:
    e1 = points[:, 1] - points[:, 0]
    e2 = points[:, 2] - points[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _min_angles(points: np.ndarray) -> np.ndarray:
    angles = []
    for i in range(3):
        u = points[:, (i + 1) % 3] - points[:, i]
        v = points[:, (i + 2) % 3] - points[:, i]
        cosine = np.sum(u * v, axis=1) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
        )
        angles.append(np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0))))
    return np.min(angles, axis=0)


class MeshHierarchy:
    """Nested triangulations of all subdomains, level 0 (coarsest) to K

    Parameters
    ----------
    levels:
        One tuple of Triangulation per level, ordered by subdomain
    """

    def __init__(self, levels: Sequence[Sequence[Triangulation]]):
        self.levels = [tuple(level) for level in levels]

    def __str__(self):
        counts = ", ".join(str(self.vertex_count(k)) for k in range(len(self)))
        return f"MeshHierarchy with vertex counts per level [{counts}]"

    def __len__(self):
        return len(self.levels)

    @property
    def finest(self) -> Tuple[Triangulation, ...]:
        return self.levels[-1]

    @property
    def coarsest(self) -> Tuple[Triangulation, ...]:
        return self.levels[0]

    def vertex_count(self, level: int) -> int:
        return sum(mesh.n_vertices for mesh in self.levels[level])

    def prolongation(self, level: int) -> sp.csr_matrix:
        """Scalar prolongation from level-1 to level, over all subdomains.
        Vertices of subdomain i follow those of subdomain i-1
        """
        if level < 1:
            raise ValueError("Level 0 has no coarser level")
        blocks = []
        for fine, coarse in zip(self.levels[level], self.levels[level - 1]):
            if fine.parent is None:
                blocks.append(sp.identity(fine.n_vertices, format="csr"))
            else:
                blocks.append(fine.parent)
        return sp.block_diag(blocks, format="csr")


def build_initial_mesh(
    spec: Sequence[SubdomainSpec],
    target_h0: float,
    min_angle: float = DEFAULT_MIN_ANGLE,
) -> List[Triangulation]:
    """Structured triangulation of every subdomain rectangle

    Each rectangle is cut into a grid of nearly square cells of size at most
    target_h0 (or the subdomain's own target_h0), which are split into two
    right triangles along the diagonal. A unit square with target_h0=1 gives
    2 triangles.

    Raises
    ------
    InvalidSpecError
        For degenerate or inconsistent subdomains, a non-positive target size
        or cells that violate the minimum angle
    """
    if target_h0 <= 0:
        raise InvalidSpecError(
            f"target_h0 should be positive, got {target_h0}"
        )
    check_layering(spec)
    meshes = [_structured_mesh(subdomain, target_h0) for subdomain in spec]
    for mesh in meshes:
        worst = float(mesh.min_angles().min())
        if worst < min_angle:
            raise InvalidSpecError(
                f"{mesh} has a minimum angle of {worst:.1f} degrees, below "
                f"the bound of {min_angle}"
            )
        logger.debug(f"Built {mesh}")
    return meshes


def _structured_mesh(spec: SubdomainSpec, target_h0: float) -> Triangulation:
    h = min(spec.target_h0 or target_h0, spec.width, spec.height)
    nx = max(1, math.ceil(spec.width / h - 1e-9))
    ny = max(1, math.ceil(spec.height / h - 1e-9))
    xs = np.linspace(spec.x_min, spec.x_max, nx + 1)
    ys = np.linspace(spec.y_min, spec.y_max, ny + 1)
    grid_x, grid_y = np.meshgrid(xs, ys)
    vertices = np.column_stack([grid_x.ravel(), grid_y.ravel()])

    def index(i, j):
        return j * (nx + 1) + i

    triangles = []
    for j in range(ny):
        for i in range(nx):
            v00, v10 = index(i, j), index(i + 1, j)
            v01, v11 = index(i, j + 1), index(i + 1, j + 1)
            triangles.append((v00, v10, v11))
            triangles.append((v00, v11, v01))

    faces, tags = [], []
    for i in range(nx):
        faces.append((index(i, 0), index(i + 1, 0)))
        tags.append(spec.bottom)
        faces.append((index(i + 1, ny), index(i, ny)))
        tags.append(spec.top)
    for j in range(ny):
        faces.append((index(nx, j), index(nx, j + 1)))
        tags.append(spec.right)
        faces.append((index(0, j + 1), index(0, j)))
        tags.append(spec.left)

    return Triangulation(
        subdomain=spec.id,
        vertices=vertices,
        triangles=np.array(triangles),
        boundary_faces=np.array(faces),
        boundary_tags=tags,
    )


def refine_adaptive(
    meshes: Sequence[Triangulation],
    h_min: float,
    grading: float,
    level_cap: int = DEFAULT_LEVEL_CAP,
    rounds: Optional[int] = None,
) -> MeshHierarchy:
    """Red-green refinement towards the faults

    Every round red-refines each triangle T with
    h_T >= (1 + grading * d(T, faults)) * h_min, then red-refines any
    triangle left with more than one bisected edge, and finally closes the
    remaining hanging nodes with green bisections to get a conforming level.
    Green closures are thrown away before the next round.

    Parameters
    ----------
    meshes:
        Initial triangulation per subdomain (level 0)
    h_min:
        Target diameter on the faults (m)
    grading:
        Growth of the allowed diameter with distance to the faults (1/m)
    level_cap:
        Raise when the criterion is still violated after this many rounds
    rounds:
        Stop after this many rounds even if the criterion is not met yet

    Raises
    ------
    RefinementOverflowError
        If level_cap rounds were not enough
    """
    if h_min <= 0 or grading < 0:
        raise InvalidSpecError(
            f"Need h_min > 0 and grading >= 0, got {h_min} and {grading}"
        )
    faults = _fault_lines(meshes)
    refiners = [_RedGreenRefiner(mesh) for mesh in meshes]
    levels = [tuple(meshes)]
    while True:
        marked = [r.marked(h_min, grading, faults) for r in refiners]
        if not any(len(m) for m in marked):
            break
        done = len(levels) - 1
        if rounds is not None and done >= rounds:
            logger.warning(
                f"Stopping refinement after {rounds} rounds, "
                f"{sum(len(m) for m in marked)} triangles still too large"
            )
            break
        if done >= level_cap:
            raise RefinementOverflowError(
                f"Refinement criterion still violated after {level_cap} "
                f"levels (h_min={h_min}, grading={grading})"
            )
        levels.append(
            tuple(
                refiner.refine(marks)
                for refiner, marks in zip(refiners, marked)
            )
        )
        logger.debug(
            f"Refinement round {done + 1}: "
            f"{sum(mesh.n_vertices for mesh in levels[-1])} vertices"
        )
    hierarchy = MeshHierarchy(levels)
    logger.info(f"Built {hierarchy}")
    return hierarchy


def _fault_lines(meshes: Sequence[Triangulation]) -> np.ndarray:
    """Fault segments (k, 2, 2), one per interface, merged from fault faces"""
    by_interface: Dict[int, List[np.ndarray]] = defaultdict(list)
    for mesh in meshes:
        for interface in mesh.interfaces():
            faces = mesh.fault_faces(interface)
            by_interface[interface].append(mesh.vertices[faces.ravel()])
    segments = []
    for interface in sorted(by_interface):
        points = np.concatenate(by_interface[interface])
        left = points[np.argmin(points[:, 0])]
        right = points[np.argmax(points[:, 0])]
        segments.append([left, right])
    return np.array(segments, dtype=float).reshape(-1, 2, 2)


class _RedGreenRefiner:
    """Keeps the red refinement tree of one subdomain between rounds.

    Only the red leaves are kept. Conforming levels are produced by green
    closure of leaves with a single bisected edge.
    """

    def __init__(self, mesh: Triangulation):
        self.subdomain = mesh.subdomain
        self.points: List[Tuple[float, float]] = [
            (float(x), float(y)) for x, y in mesh.vertices
        ]
        self.leaves: List[Tuple[int, int, int]] = [
            tuple(int(v) for v in triangle) for triangle in mesh.triangles
        ]
        self.midpoints: Dict[Tuple[int, int], int] = {}
        self.parents: Dict[int, Tuple[int, int]] = {}
        self.boundary: Dict[Tuple[int, int], EdgeTag] = {
            _key(int(a), int(b)): tag
            for (a, b), tag in zip(mesh.boundary_faces, mesh.boundary_tags)
        }

    def marked(self, h_min: float, grading: float, faults: np.ndarray):
        """Indices of leaves that violate the refinement criterion"""
        if not self.leaves:
            return []
        points = np.array(self.points)[np.array(self.leaves)]
        diameters = np.linalg.norm(
            points[:, [1, 2, 0]] - points, axis=2
        ).max(axis=1)
        distances = _distances_to_faults(points, faults)
        allowed = (1.0 + grading * distances) * h_min
        return np.flatnonzero(diameters >= allowed).tolist()

    def refine(self, marked: Sequence[int]) -> Triangulation:
        n_before = len(self.points)
        marked_set = set(marked)
        leaves = []
        for i, leaf in enumerate(self.leaves):
            if i in marked_set:
                leaves.extend(self._red_split(leaf))
            else:
                leaves.append(leaf)
        self.leaves = self._red_closure(leaves)
        return self._conforming(parent=self._prolongation(n_before))

    def _red_closure(self, leaves):
        changed = True
        while changed:
            changed = False
            closed = []
            for leaf in leaves:
                if self._needs_red(leaf):
                    closed.extend(self._red_split(leaf))
                    changed = True
                else:
                    closed.append(leaf)
            leaves = closed
        return leaves

    def _hanging(self, leaf):
        """(edge position, midpoint) for every bisected edge of a leaf"""
        found = []
        for position in range(3):
            a, b = leaf[position], leaf[(position + 1) % 3]
            mid = self.midpoints.get(_key(a, b))
            if mid is not None:
                found.append((position, mid))
        return found

    def _needs_red(self, leaf) -> bool:
        hanging = self._hanging(leaf)
        if len(hanging) >= 2:
            return True
        for position, mid in hanging:
            a, b = leaf[position], leaf[(position + 1) % 3]
            if (
                _key(a, mid) in self.midpoints
                or _key(mid, b) in self.midpoints
            ):
                return True
        return False

    def _midpoint(self, a: int, b: int) -> int:
        key = _key(a, b)
        if key in self.midpoints:
            return self.midpoints[key]
        (xa, ya), (xb, yb) = self.points[a], self.points[b]
        mid = len(self.points)
        self.points.append((0.5 * (xa + xb), 0.5 * (ya + yb)))
        self.midpoints[key] = mid
        self.parents[mid] = (a, b)
        tag = self.boundary.pop(key, None)
        if tag is not None:
            self.boundary[_key(a, mid)] = tag
            self.boundary[_key(mid, b)] = tag
        return mid

    def _red_split(self, leaf):
        a, b, c = leaf
        mab, mbc, mca = (
            self._midpoint(a, b),
            self._midpoint(b, c),
            self._midpoint(c, a),
        )
        return [(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)]

    def _conforming(self, parent) -> Triangulation:
        triangles = []
        for leaf in self.leaves:
            hanging = self._hanging(leaf)
            if not hanging:
                triangles.append(leaf)
                continue
            position, mid = hanging[0]
            a, b, c = (leaf[(position + k) % 3] for k in range(3))
            triangles.extend([(a, mid, c), (mid, b, c)])

        faces, tags = [], []
        for triangle in triangles:
            for k in range(3):
                a, b = triangle[k], triangle[(k + 1) % 3]
                tag = self.boundary.get(_key(a, b))
                if tag is not None:
                    faces.append((a, b))
                    tags.append(tag)
        return Triangulation(
            subdomain=self.subdomain,
            vertices=np.array(self.points),
            triangles=np.array(triangles),
            boundary_faces=np.array(faces),
            boundary_tags=tags,
            parent=parent,
        )

    def _prolongation(self, n_coarse: int) -> sp.csr_matrix:
        """Each new vertex is the midpoint of two older ones. Expanding that
        recursively gives its weights on the coarse vertices
        """
        rows: Dict[int, Dict[int, float]] = {}

        def weights(vertex: int) -> Dict[int, float]:
            if vertex < n_coarse:
                return {vertex: 1.0}
            if vertex not in rows:
                combined: Dict[int, float] = defaultdict(float)
                for parent in self.parents[vertex]:
                    for column, weight in weights(parent).items():
                        combined[column] += 0.5 * weight
                rows[vertex] = dict(combined)
            return rows[vertex]

        row_index, col_index, values = [], [], []
        for vertex in range(len(self.points)):
            for column, weight in weights(vertex).items():
                row_index.append(vertex)
                col_index.append(column)
                values.append(weight)
        return sp.csr_matrix(
            (values, (row_index, col_index)),
            shape=(len(self.points), n_coarse),
        )


def _key(a: int, b: int) -> Tuple[int, int]:
    return (a, b) if a < b else (b, a)


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _point_segment_distance(x, a, b) -> np.ndarray:
    """Distance from points x to segments [a, b]. All arguments broadcast"""
    d = b - a
    dd = np.sum(d * d, axis=-1)
    safe = np.where(dd > 0, dd, 1.0)
    t = np.where(dd > 0, np.sum((x - a) * d, axis=-1) / safe, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(x - (a + t[..., None] * d), axis=-1)


def _segment_distance(a, b, p, q) -> np.ndarray:
    """Distance between segments [a, b] and [p, q], zero when they touch"""
    d1 = _cross(q - p, a - p)
    d2 = _cross(q - p, b - p)
    d3 = _cross(b - a, p - a)
    d4 = _cross(b - a, q - a)
    collinear = (d1 == 0) & (d2 == 0)
    crossing = (d1 * d2 <= 0) & (d3 * d4 <= 0) & ~collinear
    distance = np.minimum.reduce(
        [
            _point_segment_distance(a, p, q),
            _point_segment_distance(b, p, q),
            _point_segment_distance(p, a, b),
            _point_segment_distance(q, a, b),
        ]
    )
    return np.where(crossing, 0.0, distance)


def _triangle_segment_distance(points: np.ndarray, segment: np.ndarray):
    """Distance from triangles (m, 3, 2) to a single segment (2, 2)"""
    a = points
    b = points[:, [1, 2, 0]]
    p, q = segment[0], segment[1]
    edge_distance = _segment_distance(a, b, p, q).min(axis=1)
    # a segment strictly inside a triangle does not cross any edge
    orientation = np.sign(_signed_areas(points))[:, None]
    inside = np.all(orientation * _cross(b - a, p - a) >= 0, axis=1)
    return np.where(inside, 0.0, edge_distance)


def _distances_to_faults(points: np.ndarray, faults: np.ndarray) -> np.ndarray:
    if not len(faults):
        return np.full(len(points), np.inf)
    return np.min(
        [_triangle_segment_distance(points, segment) for segment in faults],
        axis=0,
    )


def distance_to_faults(
    triangle: np.ndarray,
    faults: Union[Sequence[FaultSegment], np.ndarray],
) -> float:
    """Euclidean distance between a triangle and the nearest fault segment

    Parameters
    ----------
    triangle:
        (3, 2) corner coordinates
    faults:
        FaultSegments, or an array of segments (k, 2, 2)

    Returns
    -------
    float
        0 if the triangle touches or overlaps a fault, inf without faults
    """
    if len(faults) and isinstance(faults[0], FaultSegment):
        faults = np.array([fault.endpoints for fault in faults])
    points = np.asarray(triangle, dtype=float).reshape(1, 3, 2)
    return float(
        _distances_to_faults(points, np.asarray(faults, dtype=float))[0]
    )


def dump_triangulation(
    meshes: Sequence[Triangulation], path: Union[str, Path]
) -> None:
    """Write meshes of one level as line-oriented text

    Lines are `v x y` per vertex, `t i j k subdomain` per triangle,
    `f i j interface` per fault face and `b i j tag` per other boundary face.
    Vertex indices are global over the meshes, in the given order.
    """
    lines = []
    offset = 0
    for mesh in meshes:
        lines.extend(f"v {x!r} {y!r}" for x, y in mesh.vertices.tolist())
        lines.extend(
            f"t {i + offset} {j + offset} {k + offset} {mesh.subdomain}"
            for i, j, k in mesh.triangles.tolist()
        )
        faces = mesh.boundary_faces.tolist()
        for (i, j), tag in zip(faces, mesh.boundary_tags):
            if tag.is_fault:
                lines.append(f"f {i + offset} {j + offset} {tag}")
            else:
                lines.append(f"b {i + offset} {j + offset} {tag}")
        offset += mesh.n_vertices
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def load_triangulation(path: Union[str, Path]) -> List[Triangulation]:
    """Read meshes written by dump_triangulation. Parent links are not
    part of the format and are left empty
    """
    vertices: List[Tuple[float, float]] = []
    triangles: Dict[int, List[Tuple[int, int, int]]] = defaultdict(list)
    faces: List[Tuple[int, int, EdgeTag]] = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        kind = parts[0]
        if kind == "v":
            vertices.append((float(parts[1]), float(parts[2])))
        elif kind == "t":
            triangles[int(parts[4])].append(tuple(int(p) for p in parts[1:4]))
        elif kind in ("f", "b"):
            faces.append(
                (int(parts[1]), int(parts[2]), EdgeTag.from_string(parts[3]))
            )
        else:
            raise ValueError(f'Unknown mesh dump line "{line}"')

    coordinates = np.array(vertices)
    meshes = []
    for subdomain in sorted(triangles):
        global_triangles = np.array(triangles[subdomain])
        used = np.unique(global_triangles)
        local = {int(g): i for i, g in enumerate(used)}
        mesh_faces = [(a, b, tag) for a, b, tag in faces if a in local]
        meshes.append(
            Triangulation(
                subdomain=subdomain,
                vertices=coordinates[used],
                triangles=np.vectorize(local.get)(global_triangles),
                boundary_faces=np.array(
                    [(local[a], local[b]) for a, b, _ in mesh_faces]
                ),
                boundary_tags=[tag for _, _, tag in mesh_faces],
            )
        )
    return meshes
