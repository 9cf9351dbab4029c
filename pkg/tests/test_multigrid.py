import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg

from faultsim.fem import DofMap, assemble_elasticity
from faultsim.mesh import refine_adaptive
from faultsim.multigrid import Multigrid, _GaussSeidel, hierarchy_transfers


@pytest.fixture
def a_hierarchy(spring_slider_meshes):
    """Three levels of uniform refinement"""
    return refine_adaptive(spring_slider_meshes, h_min=0.5, grading=0.0)


@pytest.fixture
def a_stiffness(a_hierarchy, material):
    """Elasticity matrix of the finest level on its free dofs"""
    finest = a_hierarchy.finest
    return DofMap(finest).restrict(assemble_elasticity(finest, material))


def test_transfers_between_free_dofs(a_hierarchy):
    transfers = hierarchy_transfers(a_hierarchy)
    assert len(transfers) == len(a_hierarchy) - 1
    free = [len(DofMap(level).free_dofs) for level in a_hierarchy.levels]
    for level, transfer in enumerate(transfers, start=1):
        assert transfer.shape == (free[level], free[level - 1])
        # interpolation weights are 1 at coinciding vertices, 1/2 at midpoints
        assert set(np.round(transfer.data, 12)) <= {0.0, 0.5, 1.0}


def test_gauss_seidel_sweeps(a_stiffness):
    matrix = a_stiffness + sp.identity(a_stiffness.shape[0])
    dense = matrix.toarray()
    rng = np.random.default_rng(0)
    x, rhs = rng.normal(size=(2, matrix.shape[0]))
    smoother = _GaussSeidel(matrix, damping=0.7)

    residual = rhs - dense @ x
    forward = x + 0.7 * np.linalg.solve(np.tril(dense), residual)
    assert smoother.forward(x, rhs) == pytest.approx(forward, rel=1e-10)
    backward = x + 0.7 * np.linalg.solve(np.triu(dense), residual)
    assert smoother.backward(x, rhs) == pytest.approx(backward, rel=1e-10)


def test_gauss_seidel_patches_empty_diagonal():
    matrix = sp.csr_matrix(np.array([[2.0, 0.0], [0.0, 0.0]]))
    smoother = _GaussSeidel(matrix, damping=1.0)
    assert smoother.forward(np.zeros(2), np.array([4.0, 3.0])) == (
        pytest.approx([2.0, 3.0])
    )


def test_galerkin_operators(a_hierarchy, a_stiffness):
    transfers = hierarchy_transfers(a_hierarchy)
    multigrid = Multigrid(a_stiffness, transfers)
    assert multigrid.n_levels == 3
    assert multigrid.operators[-1].shape == a_stiffness.shape
    coarse = transfers[1].T @ a_stiffness @ transfers[1]
    coarse = transfers[0].T @ coarse @ transfers[0]
    scale = abs(coarse).max()
    assert abs(multigrid.operators[0] - coarse).max() < 1e-8 * scale
    assert "level sizes" in str(multigrid)


def test_vcycle_convergence(a_hierarchy, a_stiffness):
    multigrid = Multigrid(a_stiffness, hierarchy_transfers(a_hierarchy))
    rng = np.random.default_rng(0)
    rhs = rng.normal(size=a_stiffness.shape[0])
    x = np.zeros_like(rhs)
    residuals = [multigrid.residual_norm(x, rhs)]
    for _ in range(10):
        x = multigrid.vcycle(rhs, x)
        residuals.append(multigrid.residual_norm(x, rhs))
    assert residuals[-1] <= 1e-3 * residuals[0]
    rates = np.array(residuals[1:]) / np.array(residuals[:-1])
    assert rates.max() < 0.6

    assert multigrid.solve(rhs, cycles=10) == pytest.approx(x)
    solution = scipy.sparse.linalg.spsolve(sp.csc_matrix(a_stiffness), rhs)
    converged = multigrid.solve(rhs, cycles=30)
    assert converged == pytest.approx(solution, rel=1e-6, abs=1e-12)


def test_single_level_is_a_direct_solve(a_stiffness):
    multigrid = Multigrid(a_stiffness)
    assert multigrid.n_levels == 1
    rhs = np.ones(a_stiffness.shape[0])
    x = multigrid.solve(rhs)
    assert multigrid.residual_norm(x, rhs) <= 1e-8 * np.linalg.norm(rhs)
    assert not np.any(multigrid.solve(np.zeros_like(rhs)))


def test_zero_diagonal_is_patched():
    """Identity rows of truncated unknowns may come in with a zero diagonal
    on intermediate levels
    """
    matrix = sp.csr_matrix(np.diag([2.0, 0.0, 3.0]))
    transfer = sp.csr_matrix(np.array([[1.0], [0.0], [1.0]]))
    multigrid = Multigrid(matrix, [transfer], damping=1.0)
    x = multigrid.vcycle(np.array([2.0, 0.0, 3.0]))
    assert x[[0, 2]] == pytest.approx([1.0, 1.0])
