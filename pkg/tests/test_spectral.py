import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from coherentfem import dynlap, fem, mesh, spectral, trajectories as tr
from coherentfem.exceptions import ValidationError


def _static(m):
    return fem.assemble_stiffness(m), fem.assemble_mass(m)


def _max_angle(U, V, M):
    # principal angles in the M inner product via M-orthonormal bases
    return la.subspace_angles(la.cholesky(M.toarray()) @ U, la.cholesky(M.toarray()) @ V).max()


@pytest.fixture(scope="module")
def scattered():
    return mesh.delaunay(np.random.default_rng(3).random((300, 2)))


def test_dense_oracle(scattered):
    D, M = _static(scattered)
    s = spectral.solve_gevp(D, M, k=6)
    # independent oracle: symmetric-definite reduction with a Cholesky factor
    L = la.cholesky(M.toarray(), lower=True)
    Li = la.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    w, Y = la.eigh(Li @ D.toarray() @ Li.T)
    np.testing.assert_allclose(s.eigenvalues, -w[:6], atol=1e-8)
    # the 6th eigenvalue may belong to a cluster; compare well-separated leading subspaces
    assert _max_angle(s.eigenvectors[:, :5], (Li.T @ Y)[:, :5], M) <= 1e-6


def test_dense_reference_route(scattered):
    D, M = _static(scattered)
    a, b = spectral.solve_gevp(D, M, k=5), spectral.solve_dense(D, M, k=5)
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-8)


def test_static_square_first_modes(square50):
    s = spectral.solve_gevp(*_static(square50), k=4)
    assert abs(s.eigenvalues[0]) <= 1e-8
    v1 = s.eigenvectors[:, 0]
    assert np.ptp(v1) <= 1e-8 * np.abs(v1).max()
    assert abs(s.eigenvalues[1] + np.pi ** 2) <= 0.02 * np.pi ** 2


def test_orthonormal_sorted_residuals(square25):
    D, M = _static(square25)
    s = spectral.solve_gevp(D, M)
    G = s.eigenvectors.T @ (M @ s.eigenvectors)
    assert np.abs(G - np.eye(s.k)).max() <= 1e-8
    assert np.all(np.diff(s.eigenvalues) <= 0)
    assert np.all(s.eigenvalues <= 1e-10)
    assert s.residuals.max() <= 1e-8
    V = s.eigenvectors
    assert np.all(V[np.argmax(np.abs(V), axis=0), np.arange(s.k)] > 0)


@given(st.integers(0, 10_000))
def test_permutation_invariance(seed):
    m = mesh.delaunay(np.random.default_rng(seed).random((60, 2)))
    D, M = _static(m)
    p = np.random.default_rng(seed + 1).permutation(m.n_nodes)
    P = sp.identity(m.n_nodes, format="csr")[p]
    a = spectral.solve_gevp(D, M, k=4)
    b = spectral.solve_gevp(P @ D @ P.T, P @ M @ P.T, k=4)
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-10)
    # compare leading subspaces up to each pair of near-equal eigenvalues
    gaps = np.abs(np.diff(a.eigenvalues)) > 1e-6 * abs(a.eigenvalues).max()
    for j in np.flatnonzero(gaps) + 1:
        assert _max_angle(a.eigenvectors[p, :j], b.eigenvectors[:, :j], M[p][:, p]) <= 1e-6


def test_double_gyre_gap_after_third(square25, double_gyre):
    ds = tr.generate_trajectories(double_gyre, square25.nodes, [0, 1])
    s = spectral.solve_assembly(dynlap.assemble_to_adaptive(ds))
    assert spectral.eigengap(s.eigenvalues) == (2, 3)


def test_dirichlet_embedding(square25):
    res = dynlap.assemble_cg(square25, _zero(), [0])
    s = spectral.solve_assembly(res, k=4, boundary="dirichlet")
    assert s.boundary == "dirichlet"
    assert np.all(s.eigenvectors[square25.boundary_nodes] == 0)
    # unit square: continuum -2 pi^2, discrete value lies below it
    assert -2 * np.pi ** 2 * 1.05 <= s.eigenvalues[0] <= -2 * np.pi ** 2


def _zero():
    from conftest import zero_field
    return zero_field()


@pytest.mark.parametrize("lam, boundary, expected", [
    ([0, -1, -1.1, -5], "neumann", (2, 3)),
    ([0, -1, -2, -3, -4], "neumann", (1, 2)),
    ([-1, -5, -5.5, -6], "dirichlet", (1, 1)),
    ([-1, -1.5, -6, -6.5], "dirichlet", (2, 2)),
])
def test_eigengap(lam, boundary, expected):
    assert spectral.eigengap(lam, boundary) == expected


def test_eigengap_needs_three():
    with pytest.raises(ValidationError):
        spectral.eigengap([0, -1])


def test_solver_validation(square25):
    D, M = _static(square25)
    with pytest.raises(ValidationError):
        spectral.solve_gevp(D, M, k=0)
    with pytest.raises(ValidationError):
        spectral.solve_gevp(D, M, k=625)
    with pytest.raises(ValidationError):
        spectral.solve_gevp(D + sp.random(625, 625, density=1e-3, random_state=0), M)
    with pytest.raises(ValidationError):
        spectral.solve_gevp(D[:10, :10], M)


def test_dirichlet_needs_boundary():
    L = 2 * np.pi
    nodes = mesh.regular_grid((8, 8), [[0, L], [0, L]], periods=(L, L))
    m = mesh.triangulate(nodes, (L, L))
    res = dynlap.AssemblyResult(*_static(m), m, m.boundary_nodes, {})
    with pytest.raises(ValidationError, match="boundary"):
        spectral.solve_assembly(res, k=3, boundary="dirichlet")
