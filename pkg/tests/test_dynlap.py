import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from coherentfem import dynlap, fem, mesh, spectral, trajectories as tr
from coherentfem.exceptions import GeometryError, ValidationError

from conftest import zero_field


@pytest.fixture(scope="module")
def gyre_data(double_gyre):
    nodes = mesh.regular_grid((25, 25), [[0, 1], [0, 1]])
    return tr.generate_trajectories(double_gyre, nodes, [0, 1])


def _row_sum_error(A):
    return np.abs(np.asarray(A.sum(axis=1))).max() / abs(A).max()


def _same(A, B, tol=1e-13):
    return abs(A - B).max() <= tol * abs(B).max()


def test_cg_identity_dynamics(square25):
    res = dynlap.assemble_cg(square25, zero_field(), [0, 0.5, 1], quadrature_degree=2)
    assert _same(res.Dbar, fem.assemble_stiffness(square25), 1e-9)
    single = dynlap.assemble_cg(square25, zero_field(), [0])
    assert _same(single.Dbar, fem.assemble_stiffness(square25))


def test_cg_double_gyre_gap_after_fourth(square25, double_gyre):
    res = dynlap.assemble_cg(square25, double_gyre, [0, 1], quadrature_degree=5)
    assert res.metadata["tensor_evaluations"] == 8064
    lam = spectral.solve_assembly(res).eigenvalues
    assert spectral.eigengap(lam)[1] == 4
    assert _row_sum_error(res.Dbar) <= 1e-10


def test_alpha_identity(square25):
    alpha = dynlap.collocation_alpha(square25.n_nodes, square25.nodes, square25)
    assert _same(alpha, sp.identity(625, format="csr"), 1e-12)


@given(st.integers(0, 10_000))
def test_alpha_column_stochastic(seed):
    m0 = mesh.delaunay(np.random.default_rng(seed).random((40, 2)))
    rng = np.random.default_rng(seed + 1)
    # points inside the hull: convex combinations of simplex vertices
    s = rng.integers(0, m0.n_simplices, 30)
    b = rng.dirichlet(np.ones(3), 30)
    pts = np.einsum("nk,nkd->nd", b, m0.vertex_coords()[s])
    alpha = dynlap.collocation_alpha(30, pts, m0)
    np.testing.assert_allclose(np.asarray(alpha.sum(axis=0)).ravel(), 1.0, atol=1e-12)
    assert alpha.min() >= 0
    # the P1 interpolant reproduces linear functions
    np.testing.assert_allclose(alpha.T @ m0.nodes, pts, atol=1e-12)


def test_alpha_node_preimage_is_unit_vector(square25):
    alpha = dynlap.collocation_alpha(1, square25.nodes[[37]], square25).toarray()[:, 0]
    assert alpha[37] == pytest.approx(1.0) and np.abs(np.delete(alpha, 37)).max() < 1e-12


def test_locator_periodic_seam():
    L = 2 * np.pi
    nodes = mesh.regular_grid((10, 10), [[0, L], [0, L]], periods=(L, L))
    m = mesh.triangulate(nodes, (L, L))
    pts = np.array([[L - 1e-3, 0.5], [1e-4, L - 1e-4], [3.0, 3.0]])
    alpha = dynlap.collocation_alpha(3, pts, m)
    np.testing.assert_allclose(np.asarray(alpha.sum(axis=0)).ravel(), 1.0, atol=1e-12)


def test_alpha_rejects_nan(square25):
    with pytest.raises(ValidationError):
        dynlap.collocation_alpha(1, np.array([[np.nan, 0.0]]), square25)


def test_nonadapted_identity(square25):
    res = dynlap.assemble_to_nonadapted(square25, zero_field(), [0, 1])
    assert _same(res.Dbar, fem.assemble_stiffness(square25), 1e-12)


def test_nonadapted_double_gyre(square25, double_gyre):
    res = dynlap.assemble_to_nonadapted(square25, double_gyre, [0, 1])
    assert (res.Dbar != res.Dbar.T).nnz == 0
    assert _row_sum_error(res.Dbar) <= 1e-10
    assert res.metadata["alpha_column_sum_error"] <= 1e-12
    nnz_hat, nnz_raw = res.metadata["nnz_per_time"], res.metadata["nnz_stiffness_per_time"]
    assert nnz_hat[1] >= nnz_raw[1]
    lam = spectral.solve_assembly(res).eigenvalues
    assert np.all(lam <= 1e-10) and abs(lam[0]) <= 1e-8


def test_nonadapted_rejects_weights(square25, double_gyre):
    w = fem.compute_node_weights(square25, lambda x: np.ones(len(x)))
    with pytest.raises(ValidationError, match="adaptive"):
        dynlap.assemble_to_nonadapted(square25, double_gyre, [0, 1], node_weights=w)


def test_adaptive_identity(square25):
    ds = tr.generate_trajectories(zero_field(), square25.nodes, [0, 1])
    res = dynlap.assemble_to_adaptive(ds)
    assert _same(res.Dbar, fem.assemble_stiffness(square25))


def test_adaptive_invariants(gyre_data):
    res = dynlap.assemble_to_adaptive(gyre_data)
    assert (res.Dbar != res.Dbar.T).nnz == 0
    assert _row_sum_error(res.Dbar) <= 1e-10
    # graph-Laplacian decomposition on interior edges of each time's Delaunay mesh
    for m in res.meshes:
        D = fem.assemble_stiffness(m)
        interior = np.ones(m.n_nodes, dtype=bool)
        interior[m.boundary_nodes] = False
        interior &= m.used_nodes
        e = m.edges[interior[m.edges].all(axis=1)]
        assert np.asarray(D[e[:, 0], e[:, 1]]).max() <= 1e-12 * abs(D).max()
    lam = spectral.solve_assembly(res).eigenvalues
    assert np.all(lam <= 1e-10) and abs(lam[0]) <= 1e-8


def test_adaptive_agrees_with_nonadapted_on_image_meshes(gyre_data, double_gyre):
    ad = dynlap.assemble_to_adaptive(gyre_data)
    # a Mesh copy of the initial triangulation keeps the alpha step for t0 trivial
    to = dynlap.assemble_to_nonadapted(ad.mesh0, double_gyre, gyre_data.times, meshes_t=ad.meshes)
    l_ad = spectral.solve_assembly(ad, k=4).eigenvalues[1]
    l_to = spectral.solve_assembly(to, k=4).eigenvalues[1]
    assert abs(l_ad - l_to) <= 0.1 * abs(l_ad)


def test_adaptive_requires_complete(gyre_data):
    ds = tr.delete_random(gyre_data, 0.3, 0)
    with pytest.raises(ValidationError, match="assemble_missing"):
        dynlap.assemble_to_adaptive(ds)


def test_alpha_triangulation_option(gyre_data):
    res = dynlap.assemble_to_adaptive(gyre_data, triangulation="alpha", alpha_radius=0.2)
    assert res.metadata["alpha_radius"] == 0.2
    with pytest.raises(ValidationError):
        dynlap.assemble_to_adaptive(gyre_data, triangulation="voronoi")
    with pytest.raises(GeometryError):
        dynlap.assemble_to_adaptive(gyre_data, triangulation="alpha", alpha_radius=1e-4)


def test_missing_without_deletion(gyre_data):
    full = dynlap.assemble_to_adaptive(gyre_data)
    miss = dynlap.assemble_missing(gyre_data)
    assert _same(miss.Dbar, full.Dbar, 1e-12)
    mbar = (fem.assemble_mass(full.meshes[0]) + fem.assemble_mass(full.meshes[1])) / 2
    assert _same(miss.Mbar, mbar, 1e-12)


def test_missing_data_invariants(double_gyre):
    seeds = np.random.default_rng(0).random((625, 2))
    ds = tr.generate_trajectories(double_gyre, seeds, np.linspace(0, 1, 6))
    ds = tr.delete_random(ds, 0.6, 1)
    res = dynlap.assemble_missing(ds)
    assert (res.Dbar != res.Dbar.T).nnz == 0
    assert _row_sum_error(res.Dbar) <= 1e-10
    assert res.metadata["points_per_time"][0] == 625
    lam = spectral.solve_assembly(res).eigenvalues
    assert np.all(lam <= 1e-10) and abs(lam[0]) <= 1e-8


def test_missing_skips_sparse_times():
    pos = np.random.default_rng(0).random((10, 3, 2))
    pos[2:, 1] = np.nan
    ds = tr.TrajectoryDataset([0, 1, 2], pos, np.arange(10))
    with pytest.warns(RuntimeWarning, match="skipped"):
        res = dynlap.assemble_missing(ds)
    assert res.metadata["skipped_times"] == [1.0]


def test_missing_needs_two_times():
    pos = np.random.default_rng(0).random((10, 2, 2))
    pos[2:, 1] = np.nan
    ds = tr.TrajectoryDataset([0, 1], pos, np.arange(10))
    with pytest.warns(RuntimeWarning), pytest.raises(ValidationError):
        dynlap.assemble_missing(ds)


def test_weighted_adaptive_mass():
    from coherentfem import flows
    f = flows.builtin_field("standard_map_nvp")
    nodes = mesh.regular_grid((20, 20), f.bounds, periods=f.periods)
    m0 = mesh.triangulate(nodes, f.periods)
    w = fem.compute_node_weights(m0, f.density)
    ds = tr.generate_trajectories(f, nodes, [0, 1])
    res = dynlap.assemble_to_adaptive(ds, node_weights=w)
    assert abs(res.Mbar.sum() - w.total_mass) <= 1e-12
    assert _row_sum_error(res.Dbar) <= 1e-10


def test_times_validation(square25):
    with pytest.raises(ValidationError):
        dynlap.assemble_cg(square25, zero_field(), [1, 0])
