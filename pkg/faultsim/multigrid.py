"""Linear geometric multigrid for the truncated Newton systems

Coarse operators are Galerkin products P^T A P of the level above. The
transfers come from the mesh hierarchy, so the method needs no knowledge of
the problem beyond the fine matrix.
"""
from typing import List, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from faultsim.core import expand_to_blocks
from faultsim.fem import DofMap
from faultsim.logs import get_module_logger
from faultsim.mesh import MeshHierarchy

logger = get_module_logger("multigrid")


class _GaussSeidel:
    """Damped Gauss-Seidel on a sparse matrix. Forward sweeps use the lower
    triangle with diagonal, backward sweeps the upper one
    """

    def __init__(self, matrix: sp.csr_matrix, damping: float):
        matrix = sp.csr_matrix(matrix)
        diagonal = matrix.diagonal()
        patch = np.where(diagonal == 0, 1.0, 0.0)
        if np.any(patch):
            matrix = matrix + sp.diags(patch)
        self.matrix = matrix
        self.damping = damping
        self._lower = sp.tril(matrix, format="csr")
        self._upper = sp.triu(matrix, format="csr")

    def forward(self, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        residual = rhs - self.matrix @ x
        correction = scipy.sparse.linalg.spsolve_triangular(
            self._lower, residual, lower=True
        )
        return x + self.damping * correction

    def backward(self, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        residual = rhs - self.matrix @ x
        correction = scipy.sparse.linalg.spsolve_triangular(
            self._upper, residual, lower=False
        )
        return x + self.damping * correction


class Multigrid:
    """V-cycle solver for a symmetric positive (semi)definite matrix

    Parameters
    ----------
    matrix:
        Fine level matrix
    transfers:
        Prolongations ordered from coarse to fine. transfers[-1] maps the
        second finest level into the unknowns of matrix
    pre_smoothing, post_smoothing:
        Gauss-Seidel sweeps before and after the coarse correction
    damping:
        Gauss-Seidel damping factor
    """

    def __init__(
        self,
        matrix: sp.spmatrix,
        transfers: Sequence[sp.spmatrix] = (),
        pre_smoothing: int = 3,
        post_smoothing: int = 3,
        damping: float = 0.7,
    ):
        self.transfers = [sp.csr_matrix(p) for p in transfers]
        self.pre_smoothing = pre_smoothing
        self.post_smoothing = post_smoothing
        operators: List[sp.csr_matrix] = [sp.csr_matrix(matrix)]
        for transfer in reversed(self.transfers):
            operators.append(
                sp.csr_matrix(transfer.T @ operators[-1] @ transfer)
            )
        # coarsest first, like the transfers
        self.operators = operators[::-1]
        self.smoothers = [
            _GaussSeidel(a, damping) for a in self.operators[1:]
        ]
        self._coarse_inverse = scipy.linalg.pinvh(
            self.operators[0].toarray()
        )

    def __str__(self):
        sizes = ", ".join(str(a.shape[0]) for a in self.operators)
        return f"Multigrid with level sizes [{sizes}]"

    @property
    def n_levels(self) -> int:
        return len(self.operators)

    def vcycle(self, rhs: np.ndarray, x: np.ndarray = None) -> np.ndarray:
        """One V-cycle for A x = rhs, starting at x (zero by default)"""
        if x is None:
            x = np.zeros_like(rhs, dtype=float)
        return self._cycle(self.n_levels - 1, np.asarray(rhs, float), x)

    def _cycle(self, level: int, rhs: np.ndarray, x: np.ndarray):
        if level == 0:
            return self._coarse_inverse @ rhs
        smoother = self.smoothers[level - 1]
        for _ in range(self.pre_smoothing):
            x = smoother.forward(x, rhs)
        transfer = self.transfers[level - 1]
        residual = rhs - self.operators[level] @ x
        coarse = self._cycle(
            level - 1,
            transfer.T @ residual,
            np.zeros(transfer.shape[1]),
        )
        x = x + transfer @ coarse
        for _ in range(self.post_smoothing):
            x = smoother.backward(x, rhs)
        return x

    def solve(self, rhs: np.ndarray, cycles: int = 5) -> np.ndarray:
        """A fixed number of V-cycles from a zero initial iterate"""
        rhs = np.asarray(rhs, dtype=float)
        x = np.zeros_like(rhs)
        if not np.any(rhs):
            return x
        if self.n_levels == 1:
            return self._coarse_inverse @ rhs
        for _ in range(cycles):
            x = self.vcycle(rhs, x)
        return x

    def residual_norm(self, x: np.ndarray, rhs: np.ndarray) -> float:
        return float(np.linalg.norm(rhs - self.operators[-1] @ x))


def hierarchy_transfers(hierarchy: MeshHierarchy) -> List[sp.csr_matrix]:
    """Vector valued prolongations between the free dofs of consecutive
    levels, coarse to fine. Dirichlet dofs are left out on every level
    """
    free = [DofMap(level).free_dofs for level in hierarchy.levels]
    transfers = []
    for level in range(1, len(hierarchy)):
        vector = expand_to_blocks(hierarchy.prolongation(level))
        transfers.append(
            sp.csr_matrix(vector[free[level]][:, free[level - 1]])
        )
    return transfers
