"""P1 Lagrange finite elements on simplicial meshes.

Stiffness and mass matrices are returned as :class:`scipy.sparse.csr_matrix`.
Assembly stores only the upper triangle (``i <= j``) of each element matrix
and mirrors it, so every assembled matrix is exactly symmetric.
"""
import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi, roots_legendre

from .exceptions import AssemblyError, ValidationError

#: Default quadrature degree for node masses ``a_i`` of a density function.
DENSITY_QUADRATURE_DEGREE = 2


# -- quadrature ------------------------------------------------------------

def _orbit(*bary):
    return np.array(sorted(set(permutations(bary))))


def _tabulated(dim, degree):
    if degree <= 1:
        return np.full((1, dim + 1), 1.0 / (dim + 1)), np.ones(1)
    if dim == 2 and degree == 2:
        pts = _orbit(2 / 3, 1 / 6, 1 / 6)
        return pts, np.full(3, 1 / 3)
    if dim == 2 and degree == 5:
        # Radon's 7-point rule
        r = (6 - math.sqrt(15)) / 21
        s = (6 + math.sqrt(15)) / 21
        pts = np.vstack([[1 / 3, 1 / 3, 1 / 3], _orbit(r, r, 1 - 2 * r), _orbit(s, s, 1 - 2 * s)])
        w = np.concatenate([[9 / 40], np.full(3, (155 - math.sqrt(15)) / 1200),
                            np.full(3, (155 + math.sqrt(15)) / 1200)])
        return pts, w
    if dim == 3 and degree == 2:
        a, b = (5 + 3 * math.sqrt(5)) / 20, (5 - math.sqrt(5)) / 20
        return _orbit(a, b, b, b), np.full(4, 0.25)
    return None


def _conical(dim, degree):
    # collapsed tensor-product Gauss rule, exact for total degree `degree`
    n = max(1, math.ceil((degree + 1) / 2))
    axes = []
    for k in range(dim):
        alpha = dim - 1 - k
        if alpha == 0:
            s, w = roots_legendre(n)
        else:
            s, w = roots_jacobi(n, alpha, 0.0)
        axes.append(((1 + s) / 2, w / 2 ** (alpha + 1)))
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrid = np.prod(np.meshgrid(*[a[1] for a in axes], indexing="ij"), axis=0).ravel()
    u = [g.ravel() for g in grids]
    # map the unit cube onto the reference simplex
    x = np.empty((wgrid.size, dim))
    remaining = np.ones(wgrid.size)
    for k in range(dim):
        x[:, k] = u[k] * remaining
        remaining = remaining * (1 - u[k])
    bary = np.column_stack([1 - x.sum(axis=1), x])
    return bary, wgrid * math.factorial(dim)


def quadrature_rule(dim, degree):
    """Quadrature on a ``dim``-simplex exact for polynomials of total ``degree``.

    Returns
    -------
    bary : ndarray, shape (q, dim + 1)
        Barycentric coordinates of the quadrature points.
    weights : ndarray, shape (q,)
        Weights summing to 1; multiply by the element volume.
    """
    if dim not in (2, 3):
        raise ValidationError("quadrature is available for triangles and tetrahedra only")
    degree = int(degree)
    if degree < 1:
        raise ValidationError("quadrature degree must be at least 1")
    rule = _tabulated(dim, degree)
    return rule if rule is not None else _conical(dim, degree)


def quadrature_points(mesh, degree):
    """Physical (unwrapped) quadrature points of every simplex, shape (m, q, dim)."""
    bary, _ = quadrature_rule(mesh.dim, degree)
    return np.einsum("qk,mkd->mqd", bary, mesh.vertex_coords())


def simplex_monomial_integral(volume, exponents):
    """Exact ``int prod_k lambda_k^{p_k}`` over a simplex of the given volume."""
    d = len(exponents) - 1
    num = math.factorial(d) * math.prod(math.factorial(p) for p in exponents)
    return volume * num / math.factorial(sum(exponents) + d)


# -- element geometry ------------------------------------------------------

def barycentric_gradients(mesh):
    """Constant gradients of the local basis functions, shape (m, dim + 1, dim)."""
    coords = mesh.vertex_coords()
    edges = coords[:, 1:, :] - coords[:, :1, :]
    inv = np.linalg.inv(edges)
    g = np.transpose(inv, (0, 2, 1))
    return np.concatenate([-g.sum(axis=1, keepdims=True), g], axis=1)


# -- symmetric assembly ----------------------------------------------------

def assemble_symmetric(simplices, local, n):
    """Sum element matrices into an exactly symmetric CSR matrix.

    Parameters
    ----------
    simplices : ndarray of int, shape (m, k)
    local : ndarray, shape (m, k, k)
        Symmetric element matrices.
    n : int
        Number of global degrees of freedom.
    """
    k = simplices.shape[1]
    iu, ju = np.triu_indices(k)
    rows = simplices[:, iu].ravel()
    cols = simplices[:, ju].ravel()
    vals = local[:, iu, ju].ravel().copy()
    # an off-diagonal local pair hitting one DOF twice adds to the diagonal twice
    folded = np.repeat((iu != ju)[None, :], simplices.shape[0], axis=0).ravel() & (rows == cols)
    vals[folded] *= 2.0
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    upper = sp.coo_matrix((vals, (lo, hi)), shape=(n, n)).tocsr()
    upper.sum_duplicates()
    full = upper + sp.triu(upper, k=1, format="csr").T
    full = full.tocsr()
    full.sort_indices()
    return full


# -- node weights ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NodeWeights:
    """Node masses ``a_i`` and basis volumes ``l_i`` of one mesh.

    Attributes
    ----------
    masses : ndarray, shape (n,)
        ``a_i``, the initial mass carried by node ``i``.
    volumes : ndarray, shape (n,)
        ``l_i``, the integral of the nodal basis function on the current mesh.
    """

    masses: np.ndarray
    volumes: np.ndarray
    quadrature_degree: int = DENSITY_QUADRATURE_DEGREE

    @property
    def ratios(self):
        """``a_i / l_i``; zero for nodes not touched by any simplex."""
        out = np.zeros_like(self.masses)
        ok = self.volumes > 0
        out[ok] = self.masses[ok] / self.volumes[ok]
        return out

    @property
    def total_mass(self):
        return float(self.masses.sum())

    def pushforward(self, mesh_t, nodes=None):
        """Weights on ``mesh_t``; ``nodes`` selects the masses of its vertices."""
        masses = self.masses if nodes is None else self.masses[nodes]
        if masses.shape[0] != mesh_t.n_nodes:
            raise ValidationError("mesh node count does not match the number of node masses")
        return NodeWeights(masses, mesh_t.node_volumes, self.quadrature_degree)


def compute_node_weights(mesh0, density, quadrature_degree=DENSITY_QUADRATURE_DEGREE):
    """Node masses ``a_i = int phi_i * density`` on the initial mesh.

    Parameters
    ----------
    density : callable or array_like
        Either ``density(points)`` for points of shape (N, dim), or per-node
        samples interpreted as a P1 function (integrated exactly).
    """
    if callable(density):
        bary, w = quadrature_rule(mesh0.dim, quadrature_degree)
        pts = quadrature_points(mesh0, quadrature_degree)
        h = np.asarray(density(pts.reshape(-1, mesh0.dim)), dtype=float).reshape(pts.shape[:2])
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise ValidationError("density must be finite and nonnegative")
        local = mesh0.volumes[:, None] * np.einsum("q,mq,qk->mk", w, h, bary)
        masses = np.zeros(mesh0.n_nodes)
        np.add.at(masses, mesh0.simplices.ravel(), local.ravel())
    else:
        h = np.asarray(density, dtype=float)
        if h.shape != (mesh0.n_nodes,):
            raise ValidationError("per-node density needs one sample per mesh node")
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise ValidationError("density must be finite and nonnegative")
        masses = assemble_mass(mesh0) @ h
    return NodeWeights(masses, mesh0.node_volumes, quadrature_degree)


# -- stiffness and mass ----------------------------------------------------

def _check_spd(tensor, rtol=1e-10):
    m, q = tensor.shape[:2]
    flat = tensor.reshape(-1, tensor.shape[-1], tensor.shape[-1])
    scale = np.abs(flat).max(axis=(1, 2))
    asym = np.abs(flat - np.transpose(flat, (0, 2, 1))).max(axis=(1, 2))
    bad = asym > rtol * np.maximum(scale, 1e-300)
    bad |= ~np.all(np.isfinite(flat), axis=(1, 2))
    if not bad.any():
        eig = np.linalg.eigvalsh(flat)
        # strongly anisotropic tensors lose their small eigenvalue to rounding
        bad = ~(eig[:, 0] > -rtol * eig[:, -1]) | ~(eig[:, -1] > 0)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise AssemblyError(f"tensor at quadrature point {idx % q} of element {idx // q} "
                            "is not symmetric positive definite")


def assemble_stiffness(mesh, tensor_field=None, node_weights=None, quadrature_degree=1):
    """P1 stiffness matrix ``int grad phi_i . B grad phi_j``.

    Parameters
    ----------
    mesh : Mesh
    tensor_field : ndarray or callable, optional
        SPD tensor ``B`` at the quadrature points, shape (m, q, dim, dim), or a
        callable mapping points of shape (m, q, dim) to such an array.
    node_weights : NodeWeights, optional
        Density weighting.  With a tensor the density surrogate
        ``sum_k (a_k/l_k) phi_k`` is evaluated at the quadrature points;
        without one, each element is weighted by the mean of ``a_k/l_k`` over
        its vertices.
    quadrature_degree : int
        Degree of the rule used for the tensor field.

    Returns
    -------
    scipy.sparse.csr_matrix
        Positive semidefinite, zero row sums.
    """
    grads = barycentric_gradients(mesh)
    vol = mesh.volumes
    ratio = None if node_weights is None else node_weights.ratios[mesh.simplices]
    if tensor_field is None:
        local = np.einsum("mkd,mld->mkl", grads, grads) * vol[:, None, None]
        if ratio is not None:
            local *= ratio.mean(axis=1)[:, None, None]
    else:
        bary, w = quadrature_rule(mesh.dim, quadrature_degree)
        if callable(tensor_field):
            tensor = tensor_field(quadrature_points(mesh, quadrature_degree))
        else:
            tensor = tensor_field
        tensor = np.asarray(tensor, dtype=float)
        expected = (mesh.n_simplices, bary.shape[0], mesh.dim, mesh.dim)
        if tensor.shape != expected:
            raise AssemblyError(f"tensor field has shape {tensor.shape}, expected {expected}")
        _check_spd(tensor)
        qw = np.broadcast_to(w, tensor.shape[:2])
        if ratio is not None:
            qw = qw * (ratio @ bary.T)
        mean_tensor = np.einsum("mq,mqij->mij", qw, tensor)
        local = np.einsum("mki,mij,mlj->mkl", grads, mean_tensor, grads) * vol[:, None, None]
    return assemble_symmetric(mesh.simplices, local, mesh.n_nodes)


def _triple_product_coefficients(dim):
    k = dim + 1
    t = np.empty((k, k, k))
    for a in range(k):
        for b in range(k):
            for c in range(k):
                exps = [0] * k
                for idx in (a, b, c):
                    exps[idx] += 1
                t[a, b, c] = simplex_monomial_integral(1.0, exps)
    return t


def assemble_mass(mesh, node_weights=None):
    """P1 mass matrix ``int phi_i phi_j``, optionally density weighted.

    With ``node_weights`` the entries are ``sum_k (a_k/l_k) int phi_i phi_j phi_k``,
    integrated exactly.
    """
    d = mesh.dim
    vol = mesh.volumes
    if node_weights is None:
        k = d + 1
        ref = np.full((k, k), simplex_monomial_integral(1.0, [1, 1] + [0] * (k - 2)))
        np.fill_diagonal(ref, simplex_monomial_integral(1.0, [2] + [0] * (k - 1)))
        local = vol[:, None, None] * ref[None]
    else:
        coef = _triple_product_coefficients(d)
        ratio = node_weights.ratios[mesh.simplices]
        local = vol[:, None, None] * np.einsum("abc,mc->mab", coef, ratio)
    return assemble_symmetric(mesh.simplices, local, mesh.n_nodes)


# -- boundary conditions ---------------------------------------------------

def apply_dirichlet(D, M, boundary):
    """Restrict ``(D, M)`` to interior degrees of freedom.

    Returns
    -------
    D_int, M_int : csr_matrix
    interior : ndarray of int
        Global index of each retained degree of freedom.
    """
    n = D.shape[0]
    boundary = np.unique(np.asarray(boundary, dtype=np.int64))
    if boundary.size and (boundary.min() < 0 or boundary.max() >= n):
        raise ValidationError("boundary node index out of range")
    keep = np.ones(n, dtype=bool)
    keep[boundary] = False
    interior = np.flatnonzero(keep)
    if interior.size == 0:
        raise ValidationError("every node is a boundary node; the Dirichlet system is empty")
    if interior.size == n:
        return D, M, interior
    D = sp.csr_matrix(D)[interior][:, interior].tocsr()
    M = sp.csr_matrix(M)[interior][:, interior].tocsr()
    return D, M, interior


def embed_vectors(vectors, interior, n):
    """Re-embed interior vectors into ``n`` global DOFs with zeros elsewhere."""
    vectors = np.asarray(vectors)
    out = np.zeros((n,) + vectors.shape[1:], dtype=vectors.dtype)
    out[interior] = vectors
    return out


# -- triplet export --------------------------------------------------------

def write_triplets(A, path):
    """Write the upper triangle ``i <= j`` as sorted ``i j value`` lines (0-based)."""
    U = sp.triu(sp.csr_matrix(A)).tocoo()
    order = np.lexsort((U.col, U.row))
    with open(path, "w") as fh:
        fh.write(f"# n={A.shape[0]}\n")
        for i, j, v in zip(U.row[order], U.col[order], U.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")


def read_triplets(path):
    """Read a matrix written by :func:`write_triplets`, mirroring the upper triangle."""
    with open(path) as fh:
        n = int(fh.readline().split("=")[1])
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((n, n))
    i, j, v = data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2]
    upper = sp.csr_matrix((v, (i, j)), shape=(n, n))
    return (upper + sp.triu(upper, k=1).T).tocsr()
