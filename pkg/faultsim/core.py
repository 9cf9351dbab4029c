"""Provides common types that allow modules to talk to each other.

Degrees of freedom are interleaved throughout faultsim: vertex v owns the
entries 2v (x component) and 2v+1 (y component) of every nodal vector.
"""
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, model_validator

DIM = 2

# Sparse symmetric matrix of DIM x DIM blocks in interleaved ordering
BlockMatrix = sp.csr_matrix


class BoundaryKind(str, Enum):
    """What happens on a boundary edge of a subdomain"""

    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    FAULT_BOTTOM = "fault_bottom"  # this body lies below the fault
    FAULT_TOP = "fault_top"  # this body lies above the fault


class EdgeTag(BaseModel):
    """Tag for one side of a rectangular subdomain

    Notes
    -----
    Faults are numbered by the subdomain below them: interface i separates
    subdomain i (bottom, non-mortar side) from subdomain i+1 (top, mortar
    side).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: BoundaryKind
    interface: Optional[int] = None
    driven: bool = False  # Dirichlet edge moved by the loading profile

    @model_validator(mode="after")
    def check_consistent(self):
        if self.is_fault and self.interface is None:
            raise ValueError(f"{self.kind.value} edge needs an interface id")
        if not self.is_fault and self.interface is not None:
            raise ValueError(
                f"{self.kind.value} edge cannot carry an interface id"
            )
        if self.driven and self.kind != BoundaryKind.DIRICHLET:
            raise ValueError("Only dirichlet edges can be driven")
        return self

    @property
    def is_fault(self) -> bool:
        return self.kind in (BoundaryKind.FAULT_BOTTOM, BoundaryKind.FAULT_TOP)

    @classmethod
    def dirichlet(cls, driven: bool = False) -> "EdgeTag":
        return cls(kind=BoundaryKind.DIRICHLET, driven=driven)

    @classmethod
    def neumann(cls) -> "EdgeTag":
        return cls(kind=BoundaryKind.NEUMANN)

    @classmethod
    def fault_bottom(cls, interface: int) -> "EdgeTag":
        return cls(kind=BoundaryKind.FAULT_BOTTOM, interface=interface)

    @classmethod
    def fault_top(cls, interface: int) -> "EdgeTag":
        return cls(kind=BoundaryKind.FAULT_TOP, interface=interface)

    def __str__(self):
        if self.is_fault:
            return f"{self.kind.value}:{self.interface}"
        if self.driven:
            return f"{self.kind.value}:driven"
        return self.kind.value

    @classmethod
    def from_string(cls, text: str) -> "EdgeTag":
        """Inverse of str(tag). Used when reading mesh dumps"""
        kind, _, extra = text.partition(":")
        if extra == "driven":
            return cls.dirichlet(driven=True)
        if extra:
            return cls(kind=BoundaryKind(kind), interface=int(extra))
        return cls(kind=BoundaryKind(kind))


def dof_indices(vertices: Sequence[int]) -> np.ndarray:
    """Interleaved dof indices [2v0, 2v0+1, 2v1, 2v1+1, ...]"""
    vertices = np.asarray(vertices, dtype=np.int64)
    return (DIM * vertices[:, None] + np.arange(DIM)[None, :]).ravel()


def expand_to_blocks(scalar: sp.spmatrix) -> BlockMatrix:
    """Vector valued version of a scalar nodal operator, one copy per
    component. Used for prolongations and mass matrices
    """
    return sp.kron(scalar, sp.identity(DIM), format="csr")


def symmetry_defect(matrix: sp.spmatrix) -> float:
    """max|M - M^T| relative to max|M|. Zero matrices count as symmetric"""
    scale = abs(matrix).max() if matrix.nnz else 0.0
    if scale == 0:
        return 0.0
    difference = (matrix - matrix.T).tocsr()
    defect = abs(difference).max() if difference.nnz else 0.0
    return float(defect / scale)
