import numpy as np
import pytest

from faultsim.core import DIM
from faultsim.mortar import (
    NoContactError,
    build_contact_coupling,
    build_contact_map,
    build_dual_basis,
    dual_mass_matrix,
    dump_mortar_weights,
    mortar_weights,
    nodal_normals,
)


def shifted_top(meshes, dofmap, shift):
    """Displacement moving the whole top body along x"""
    top = meshes[1]
    vertices = dofmap.global_vertices(top.subdomain, range(top.n_vertices))
    u = np.zeros(dofmap.n_dofs)
    u[DIM * vertices] = shift
    return u


@pytest.fixture(params=["a_matching_fault", "a_nonmatching_fault"])
def a_fault(request):
    return request.getfixturevalue(request.param)


@pytest.mark.parametrize("shift", [0.0, 0.3])
def test_dual_basis_is_biorthogonal(a_fault, shift):
    meshes, dofmap, (bottom, top) = a_fault
    u = shifted_top(meshes, dofmap, shift)
    contact_map = build_contact_map(bottom, top, u)
    dual = build_dual_basis(contact_map)
    products = dual_mass_matrix(dual)[contact_map.contact_nodes]
    assert np.abs(products - np.identity(len(products))).max() <= 1e-12


def test_shifted_contact_set(a_nonmatching_fault):
    meshes, dofmap, (bottom, top) = a_nonmatching_fault
    u = shifted_top(meshes, dofmap, 0.3)
    contact_map = build_contact_map(bottom, top, u)
    # bottom nodes at x = 0, 0.125 and 0.25 lie left of the top side
    assert np.all(np.isnan(contact_map.images[:3]))
    assert contact_map.images[3:] == pytest.approx(bottom.x[3:] - 0.3)
    assert contact_map.contact_nodes.tolist() == list(range(3, 9))
    assert contact_map.contact_faces.tolist() == list(range(3, 8))


def test_overlap_segments_split_at_top_vertices(a_nonmatching_fault):
    meshes, dofmap, (bottom, top) = a_nonmatching_fault
    u = shifted_top(meshes, dofmap, 0.3)
    contact_map = build_contact_map(bottom, top, u)
    # reference top vertices at 0.25 and 0.5 fall inside bottom faces
    inner = (top.x > contact_map.images[3]) & (top.x < contact_map.images[8])
    split = len(contact_map.contact_faces) + np.count_nonzero(inner)
    assert len(contact_map.overlap_face) == split
    assert contact_map.overlap_weights.sum() == pytest.approx(0.625)
    assert np.all(contact_map.overlap_t1 > contact_map.overlap_t0)


def test_matching_mortar_weights_are_identity(a_matching_fault):
    meshes, dofmap, (bottom, top) = a_matching_fault
    contact_map = build_contact_map(bottom, top, np.zeros(dofmap.n_dofs))
    weights = mortar_weights(build_dual_basis(contact_map)).toarray()
    assert weights.shape == (5, 5)
    assert np.abs(weights - np.identity(5)).max() <= 1e-12


def test_mortar_weights_reproduce_linear_functions(a_nonmatching_fault):
    """Rows sum to one and map the top x coordinate onto the bottom one"""
    meshes, dofmap, (bottom, top) = a_nonmatching_fault
    contact_map = build_contact_map(bottom, top, np.zeros(dofmap.n_dofs))
    weights = mortar_weights(build_dual_basis(contact_map))
    assert np.asarray(weights.sum(axis=1)).ravel() == pytest.approx(1.0)
    expected = bottom.x[contact_map.contact_nodes]
    assert weights @ top.x == pytest.approx(expected)


def test_flat_fault_normals(a_nonmatching_fault):
    meshes, dofmap, (bottom, top) = a_nonmatching_fault
    u = np.zeros(dofmap.n_dofs)
    normals, tangents = nodal_normals(build_contact_map(bottom, top, u), u)
    assert normals == pytest.approx(np.tile([0.0, 1.0], (9, 1)))
    assert tangents == pytest.approx(np.tile([-1.0, 0.0], (9, 1)))


def test_sides_apart(a_matching_fault):
    meshes, dofmap, (bottom, top) = a_matching_fault
    with pytest.raises(NoContactError, match="do not overlap"):
        build_contact_map(bottom, top, shifted_top(meshes, dofmap, 5.0))


def test_cell_measures_tile_the_fault(a_nonmatching_fault):
    _, _, (bottom, top) = a_nonmatching_fault
    assert bottom.cell_measures().sum() == pytest.approx(1.0)
    assert top.cell_measures() == pytest.approx(
        [0.125, 0.25, 0.25, 0.25, 0.125]
    )


def test_rate_weights(a_matching_fault):
    meshes, dofmap, (bottom, top) = a_matching_fault
    contact_map = build_contact_map(bottom, top, np.zeros(dofmap.n_dofs))
    assert contact_map.rate_weights() == pytest.approx(
        [0.125, 0.25, 0.25, 0.25, 0.125]
    )


def test_jump_transform(a_nonmatching_fault):
    meshes, dofmap, traces = a_nonmatching_fault
    coupling = build_contact_coupling(
        [traces], np.zeros(dofmap.n_dofs), dofmap
    )
    transform = coupling.transform
    # 9 contact nodes with one slip rate each, 5 free top fault vertices
    assert len(transform.contact_vertices) == 9
    assert transform.n_constrained == 9 + 2 * 5
    assert len(transform.contact_slots) == 9
    assert np.all(transform.block_sizes[transform.block_sizes != 1] == 2)
    assert coupling.rate_weights.sum() == pytest.approx(1.0)
    assert coupling.contact_interface.tolist() == [0] * 9

    rng = np.random.default_rng(0)
    x = rng.normal(size=dofmap.n_dofs)
    projected = transform.project(x)
    assert np.abs(transform.jumps(projected)).max() <= 1e-12
    assert transform.project(projected) == pytest.approx(projected)

    z = rng.normal(size=transform.n_constrained)
    velocity = transform.expand(z)
    jumps = transform.jumps(velocity)
    normal = np.sum(jumps * transform.normals, axis=1)
    tangential = np.sum(jumps * transform.tangents, axis=1)
    assert np.abs(normal).max() <= 1e-12
    assert tangential == pytest.approx(transform.tangential_jumps(z))
    assert transform.restrict(velocity) == pytest.approx(z)
    assert np.all(velocity[dofmap.dirichlet_dofs] == 0)


def test_lift_has_no_jump(a_nonmatching_fault):
    meshes, dofmap, traces = a_nonmatching_fault
    coupling = build_contact_coupling(
        [traces], np.zeros(dofmap.n_dofs), dofmap
    )
    boundary = np.zeros(dofmap.n_dofs)
    boundary[dofmap.dirichlet_dofs] = 1.0
    lifted = coupling.transform.lift(boundary)
    assert np.array_equal(
        lifted[dofmap.dirichlet_dofs], boundary[dofmap.dirichlet_dofs]
    )
    assert np.abs(coupling.transform.jumps(lifted)).max() <= 1e-12


def test_dump_mortar_weights(tmp_path, a_nonmatching_fault):
    meshes, dofmap, (bottom, top) = a_nonmatching_fault
    contact_map = build_contact_map(bottom, top, np.zeros(dofmap.n_dofs))
    weights = mortar_weights(build_dual_basis(contact_map))
    path = tmp_path / "mortar" / "weights.txt"
    dump_mortar_weights(weights, path)
    lines = path.read_text().splitlines()
    assert len(lines) == weights.nnz
    row, col, value = lines[0].split()
    assert float(value) == weights[int(row), int(col)]
