"""Averaged dynamic-Laplacian stiffness and mass matrices.

Every assembler returns the positive semidefinite average
``Dbar = (1/|T|) sum_t Dhat^t`` together with a mass matrix ``Mbar``; the
eigenproblem is ``Dbar u = -lambda Mbar u`` so reported eigenvalues are
nonpositive.
"""
import time as _time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .exceptions import (AssemblyError, GeometryError, SingularityError,
                         ValidationError)
from .fem import assemble_mass, assemble_stiffness, quadrature_points
from .flows import (DEFAULT_ATOL, DEFAULT_RTOL, flow_jacobian_fd, flow_map,
                    inv_cauchy_green)
from .mesh import median_edge_length, minimal_image, triangulate

SIGN_CONVENTION = "Dbar = (1/|T|) sum_t Dhat^t is positive semidefinite; solve Dbar u = -lambda Mbar u"

#: Number of nearest element centroids tried before widening the search.
LOCATOR_CANDIDATES = 16


@dataclass(frozen=True, eq=False)
class AssemblyResult:
    """Inputs of the generalized eigenproblem.

    Attributes
    ----------
    Dbar : csr_matrix
        Averaged stiffness, positive semidefinite.
    Mbar : csr_matrix
        Mass matrix (time-averaged for incomplete data).
    mesh0 : Mesh
        Initial mesh; its nodes carry the eigenvector values.
    boundary_nodes : ndarray of int
        Nodes on the boundary of the initial domain, for Dirichlet conditions.
    metadata : dict
        Method tag, times used, per-time nnz and timings.
    meshes : list of Mesh
        Triangulation used at each time (empty for the Cauchy-Green method).
    """

    Dbar: sp.csr_matrix
    Mbar: sp.csr_matrix
    mesh0: object
    boundary_nodes: np.ndarray
    metadata: dict = field(default_factory=dict)
    meshes: list = field(default_factory=list)

    @property
    def n(self):
        return self.Dbar.shape[0]


def _average(mats):
    total = mats[0].copy()
    for A in mats[1:]:
        total = total + A
    out = (total / len(mats)).tocsr()
    out.sort_indices()
    return out


def _metadata(method, times, per_time_nnz, start, **extra):
    meta = {"method": method, "times": [float(t) for t in times],
            "nnz_per_time": [int(v) for v in per_time_nnz],
            "sign_convention": SIGN_CONVENTION,
            "assembly_seconds": _time.perf_counter() - start}
    meta.update(extra)
    return meta


# -- Cauchy-Green ----------------------------------------------------------

def assemble_cg(mesh0, dynamics, times, quadrature_degree=1, node_weights=None,
                rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, fd_step=None):
    """Cauchy-Green assembly on the fixed initial mesh.

    For each time the inverse Cauchy-Green tensor ``C_t^{-1}`` is evaluated at
    every quadrature point from central-difference Jacobians of the flow map
    starting at ``times[0]``.

    Raises
    ------
    AssemblyError
        When a flow-map Jacobian is singular; names the point and the time.
    """
    start = _time.perf_counter()
    times = _check_times(times)
    pts = quadrature_points(mesh0, quadrature_degree)
    m, q, d = pts.shape
    flat = pts.reshape(-1, d)
    mats, nnz = [], []
    for t in times:
        if t == times[0]:
            tensor = np.broadcast_to(np.eye(d), (m, q, d, d))
        else:
            jac = flow_jacobian_fd(dynamics, flat, times[0], t, fd_step, rtol, atol)
            try:
                cinv = inv_cauchy_green(jac)
            except SingularityError as exc:
                cond = np.linalg.cond(jac)
                i = int(np.flatnonzero(~np.isfinite(cond) | (cond > 1e14))[0])
                raise AssemblyError(
                    f"singular Jacobian at point {flat[i].tolist()} for time {t}: {exc}") from None
            tensor = cinv.reshape(m, q, d, d)
        D = assemble_stiffness(mesh0, tensor, node_weights, quadrature_degree)
        mats.append(D)
        nnz.append(D.nnz)
    M = assemble_mass(mesh0, node_weights)
    meta = _metadata("cg", times, nnz, start, quadrature_degree=int(quadrature_degree),
                     tensor_evaluations=int(m * q * (len(times) - 1)),
                     weighted=node_weights is not None)
    return AssemblyResult(_average(mats), M, mesh0, mesh0.boundary_nodes, meta)


def _check_times(times):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        raise ValidationError("at least one time is required")
    if np.any(np.diff(times) <= 0):
        raise ValidationError("times must be strictly increasing")
    return times


# -- point location and collocation ----------------------------------------

class SimplexLocator:
    """Find the simplex of a mesh containing each query point.

    Candidates are the nearest element centroids (periodic axes handled by a
    toroidal KD-tree); barycentric coordinates decide containment.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        self.coords = mesh.vertex_coords()
        self.centroids = self.coords.mean(axis=1)
        origin = np.zeros(mesh.dim) if mesh.origin is None else mesh.origin
        self.origin = origin
        self.boxsize = np.array([0.0 if p is None else p for p in mesh.periods])
        edges = self.coords[:, 1:, :] - self.coords[:, :1, :]
        self.inv_edges = np.linalg.inv(edges)
        self.tree = cKDTree(self._shift(self.centroids),
                            boxsize=self.boxsize if mesh.is_periodic else None)

    def _shift(self, pts):
        if not self.mesh.is_periodic:
            return pts
        out = pts - self.origin
        for k, p in enumerate(self.mesh.periods):
            if p is not None:
                out[:, k] = np.mod(out[:, k], p)
                out[:, k] = np.where(out[:, k] >= p, 0.0, out[:, k])
        return out

    def barycentric(self, simplex, points):
        """Barycentric coordinates of ``points`` in the given simplices (periodic aware)."""
        rel = points - self.coords[simplex, 0, :]
        if self.mesh.is_periodic:
            # bring each point to the periodic image nearest the simplex centroid
            to_c = minimal_image(points - self.centroids[simplex], self.mesh.periods)
            rel = self.centroids[simplex] + to_c - self.coords[simplex, 0, :]
        lam = np.einsum("nji,nj->ni", self.inv_edges[simplex], rel)
        return np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)

    def locate(self, points, tol=1e-10):
        """Containing simplex and barycentric coordinates of each point.

        Points outside the mesh get the simplex whose barycentric coordinates
        are least negative, with coordinates clipped to [0, 1] and renormalized.

        Returns
        -------
        simplex : ndarray of int, shape (N,)
        bary : ndarray, shape (N, dim + 1)
        inside : ndarray of bool, shape (N,)
        """
        pts = np.asarray(points, dtype=float)
        if not np.all(np.isfinite(pts)):
            raise ValidationError("cannot locate non-finite points")
        n = pts.shape[0]
        simplex = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, self.mesh.dim + 1))
        best_score = np.full(n, -np.inf)
        pending = np.arange(n)
        k = min(LOCATOR_CANDIDATES, self.mesh.n_simplices)
        shifted = self._shift(pts)
        while pending.size:
            _, cand = self.tree.query(shifted[pending], k=k)
            cand = cand.reshape(pending.size, k)
            rep = np.repeat(pts[pending], k, axis=0)
            lam = self.barycentric(cand.ravel(), rep).reshape(pending.size, k, -1)
            score = lam.min(axis=2)
            j = np.argmax(score, axis=1)
            rows = np.arange(pending.size)
            better = score[rows, j] > best_score[pending]
            upd = pending[better]
            simplex[upd] = cand[rows, j][better]
            bary[upd] = lam[rows, j][better]
            best_score[upd] = score[rows, j][better]
            found = best_score[pending] >= -tol
            if k >= self.mesh.n_simplices:
                break
            pending = pending[~found]
            k = min(4 * k, self.mesh.n_simplices)
            if k > 1024:
                # points outside the mesh: the nearest candidates already decide
                break
        inside = best_score >= -tol
        bary = np.clip(bary, 0.0, None)
        bary /= bary.sum(axis=1, keepdims=True)
        return simplex, bary, inside


def collocation_alpha(mesh_t_nodes, preimages, mesh0, locator=None):
    """Collocation matrix ``alpha[i, m] = phi_i(preimage of node m)``.

    Parameters
    ----------
    mesh_t_nodes : int
        Number of nodes of the later mesh (columns of ``alpha``).
    preimages : ndarray, shape (mesh_t_nodes, dim)
        Preimages at the initial time of the later mesh's nodes.
    mesh0 : Mesh
        Initial mesh providing the basis functions ``phi_i``.

    Returns
    -------
    csr_matrix, shape (mesh0.n_nodes, mesh_t_nodes)
        Column-stochastic, entries in [0, 1].
    """
    pre = np.asarray(preimages, dtype=float)
    if pre.shape[0] != mesh_t_nodes:
        raise ValidationError("one preimage per node of the later mesh is required")
    if np.isnan(pre).any():
        raise ValidationError("preimage contains NaN")
    locator = SimplexLocator(mesh0) if locator is None else locator
    simplex, bary, _ = locator.locate(pre)
    rows = mesh0.simplices[simplex].ravel()
    cols = np.repeat(np.arange(mesh_t_nodes), mesh0.dim + 1)
    alpha = sp.coo_matrix((bary.ravel(), (rows, cols)), shape=(mesh0.n_nodes, mesh_t_nodes)).tocsr()
    alpha.eliminate_zeros()
    return alpha


# -- transfer operator, non-adapted ----------------------------------------

def assemble_to_nonadapted(mesh0, dynamics, times, meshes_t=None, node_weights=None,
                           rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
    """Transfer-operator assembly with fixed meshes at each time.

    ``Dhat^t = alpha D^t alpha^T`` where ``D^t`` is the stiffness on
    ``meshes_t[k]`` (default: ``mesh0`` at every time) and ``alpha`` collocates
    the initial basis at the preimages of that mesh's nodes.
    """
    if node_weights is not None:
        raise ValidationError("density-weighted dynamics are only supported by the adaptive "
                              "transfer-operator method")
    start = _time.perf_counter()
    times = _check_times(times)
    if meshes_t is None:
        meshes_t = [mesh0] * times.size
    if len(meshes_t) != times.size:
        raise ValidationError("one mesh per time is required")
    locator = SimplexLocator(mesh0)
    mats, nnz, nnz_raw, stoch = [], [], [], []
    for t, mesh_t in zip(times, meshes_t):
        D = assemble_stiffness(mesh_t)
        nnz_raw.append(D.nnz)
        if t == times[0] and mesh_t is mesh0:
            Dhat = D
        else:
            pre = flow_map(dynamics, mesh_t.nodes, t, times[0], rtol, atol)
            alpha = collocation_alpha(mesh_t.n_nodes, pre, mesh0, locator)
            stoch.append(float(np.abs(np.asarray(alpha.sum(axis=0)).ravel() - 1).max()))
            Dhat = _sym(alpha @ D @ alpha.T)
        mats.append(Dhat)
        nnz.append(Dhat.nnz)
    meta = _metadata("to", times, nnz, start, nnz_stiffness_per_time=nnz_raw,
                     alpha_column_sum_error=max(stoch, default=0.0))
    return AssemblyResult(_average(mats), assemble_mass(mesh0), mesh0, mesh0.boundary_nodes,
                          meta, list(meshes_t))


def _sym(A):
    # the triple product is symmetric up to rounding; store it exactly symmetric
    U = sp.triu(A, format="csr")
    out = (U + sp.triu(U, k=1).T).tocsr()
    out.sort_indices()
    return out


# -- transfer operator, adaptive -------------------------------------------

def _triangulate_at(points, dataset, alpha_radius):
    return triangulate(points, dataset.periods, dataset.origin, alpha_radius)


def default_alpha_radius(mesh0):
    """Twice the median edge length of the initial mesh."""
    return 2.0 * median_edge_length(mesh0)


def _resolve_alpha(dataset, triangulation, alpha_radius):
    if triangulation not in ("delaunay", "alpha"):
        raise ValidationError(f"unknown triangulation {triangulation!r}")
    if triangulation == "delaunay":
        return None
    if alpha_radius is None:
        _, pts0 = dataset.points_at(0)
        alpha_radius = default_alpha_radius(_triangulate_at(pts0, dataset, None))
    return float(alpha_radius)


def assemble_to_adaptive(dataset, node_weights=None, triangulation="delaunay", alpha_radius=None):
    """Adaptive transfer-operator assembly from a complete trajectory dataset.

    Each time level is triangulated from the particle positions, so ``alpha``
    is the identity.  The mass matrix comes from the initial triangulation.
    """
    if not dataset.is_complete:
        raise ValidationError("dataset has missing entries; use assemble_missing")
    start = _time.perf_counter()
    radius = _resolve_alpha(dataset, triangulation, alpha_radius)
    mats, nnz, meshes, orphans = [], [], [], []
    for k in range(dataset.n_times):
        mesh_t = _triangulate_at(dataset.positions[:, k, :], dataset, radius)
        if k == 0:
            _check_used(mesh_t, k)
        # particles squeezed onto near-duplicates of others drop out of later
        # triangulations and simply contribute nothing at that time
        orphans.append(int(np.count_nonzero(~mesh_t.used_nodes)))
        w = None if node_weights is None else node_weights.pushforward(mesh_t)
        D = assemble_stiffness(mesh_t, node_weights=w)
        mats.append(D)
        nnz.append(D.nnz)
        meshes.append(mesh_t)
    mesh0 = meshes[0]
    w0 = None if node_weights is None else node_weights.pushforward(mesh0)
    meta = _metadata("to-adaptive", dataset.times, nnz, start, triangulation=triangulation,
                     alpha_radius=radius, weighted=node_weights is not None,
                     untriangulated_per_time=orphans)
    return AssemblyResult(_average(mats), assemble_mass(mesh0, w0), mesh0, mesh0.boundary_nodes,
                          meta, meshes)


def _check_used(mesh_t, k):
    if not mesh_t.used_nodes.all():
        missing = int(np.count_nonzero(~mesh_t.used_nodes))
        raise GeometryError(f"triangulation at time index {k} leaves {missing} nodes without "
                            "a simplex; increase the alpha radius")


# -- missing data ----------------------------------------------------------

def assemble_missing(dataset, node_weights=None, triangulation="delaunay", alpha_radius=None):
    """Assembly for incomplete trajectory data.

    At each time only the observed particles ``I_t`` are triangulated.  Both
    stiffness and mass matrices are embedded into the full particle index
    space and averaged over the usable times.
    """
    start = _time.perf_counter()
    radius = _resolve_alpha(dataset, triangulation, alpha_radius)
    n, d = dataset.n_particles, dataset.dim
    stiff, mass, nnz, used_times, meshes, index_sets = [], [], [], [], [], []
    mesh0 = None
    for k in range(dataset.n_times):
        idx, pts = dataset.points_at(k)
        if idx.size < d + 1:
            warnings.warn(f"time index {k} has {idx.size} points; skipped", RuntimeWarning)
            continue
        try:
            mesh_t = _triangulate_at(pts, dataset, radius)
        except GeometryError as exc:
            warnings.warn(f"time index {k} skipped: {exc}", RuntimeWarning)
            continue
        w = None
        if node_weights is not None:
            w = node_weights.pushforward(mesh_t, nodes=idx)
        P = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(n, idx.size))
        D = P @ assemble_stiffness(mesh_t, node_weights=w) @ P.T
        M = P @ assemble_mass(mesh_t, w) @ P.T
        stiff.append(_sym(D))
        mass.append(_sym(M))
        nnz.append(D.nnz)
        used_times.append(dataset.times[k])
        meshes.append(mesh_t)
        index_sets.append(idx)
        if k == 0:
            mesh0 = mesh_t
    if len(stiff) < 2:
        raise ValidationError(f"only {len(stiff)} usable time levels; at least 2 are required")
    if mesh0 is None:
        raise ValidationError("the initial time level is not usable")
    Mbar = _average(mass)
    if np.any(Mbar.diagonal() <= 0):
        raise AssemblyError("a particle lies in no triangulation; the mass matrix is singular")
    meta = _metadata("to-missing", used_times, nnz, start, triangulation=triangulation,
                     alpha_radius=radius, weighted=node_weights is not None,
                     points_per_time=[int(i.size) for i in index_sets],
                     skipped_times=[float(t) for t in dataset.times if t not in used_times])
    boundary = index_sets[0][mesh0.boundary_nodes]
    return AssemblyResult(_average(stiff), Mbar, _full_mesh0(mesh0, index_sets[0], dataset),
                          boundary, meta, meshes)


def _full_mesh0(mesh0, idx0, dataset):
    # the initial time is never thinned, so mesh0 covers all particles
    if idx0.size != dataset.n_particles:
        raise ValidationError("the initial time must observe every particle")
    return mesh0
