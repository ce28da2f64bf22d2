"""Sparse symmetric generalized eigenproblem ``A v = -lambda M v``.

``A`` is the positive semidefinite averaged stiffness, so the eigenvalues
nearest zero from below are the largest ``lambda``.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from .exceptions import SolverError, ValidationError
from .fem import apply_dirichlet, embed_vectors

DEFAULT_K = 10
DEFAULT_TOL = 1e-8
#: Relative shift below zero keeping ``A - sigma M`` nonsingular for Neumann problems.
SHIFT_FACTOR = 1e-8


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenpairs ordered by descending eigenvalue.

    Attributes
    ----------
    eigenvalues : ndarray, shape (k,)
        ``lambda_1 >= lambda_2 >= ...``, nonpositive up to rounding.
    eigenvectors : ndarray, shape (n, k)
        M-orthonormal columns, largest-magnitude entry positive.  For
        Dirichlet systems the boundary rows are zero.
    residuals : ndarray, shape (k,)
        ``||A v + lambda M v|| / (||A|| ||v||)`` in max norms.
    boundary : str
        ``"neumann"`` or ``"dirichlet"``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    boundary: str = "neumann"

    @property
    def k(self):
        return self.eigenvalues.size


def _max_abs(A):
    return float(abs(A).max()) if sp.issparse(A) else float(np.abs(A).max())


def _fix_signs(V):
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _validate(A, M, k):
    if A.shape != M.shape or A.shape[0] != A.shape[1]:
        raise ValidationError("stiffness and mass must be square matrices of equal size")
    n = A.shape[0]
    if not 1 <= k < n:
        raise ValidationError(f"need 1 <= k < n, got k={k}, n={n}")
    for name, X in (("stiffness", A), ("mass", M)):
        asym = abs(X - X.T).max() if sp.issparse(X) else np.abs(X - X.T).max()
        if asym > 1e-12 * max(_max_abs(X), 1e-300):
            raise ValidationError(f"{name} matrix is not symmetric")


def solve_gevp(Dbar, Mbar, k=DEFAULT_K, tol=DEFAULT_TOL, seed=0):
    """Eigenvalues nearest zero of ``Dbar v = -lambda Mbar v``.

    Uses ARPACK shift-invert Lanczos around ``sigma = -1e-8 * max|Dbar|`` and
    a Rayleigh-Ritz step that makes the eigenvectors M-orthonormal.

    Parameters
    ----------
    Dbar, Mbar : sparse matrix
        Symmetric; ``Dbar`` positive semidefinite and ``Mbar`` positive definite.
    k : int
        Number of eigenpairs.
    tol : float
        Relative residual tolerance.
    seed : int
        Seed for the Lanczos start vector.

    Raises
    ------
    SolverError
        Factorization failure, non-convergence or residual above tolerance.
    """
    A = sp.csr_matrix(Dbar)
    M = sp.csr_matrix(Mbar)
    _validate(A, M, k)
    n = A.shape[0]
    scale = max(_max_abs(A), 1e-300)
    if k >= n - 1:
        mu, V = _dense(A, M)
        mu, V = mu[:k], V[:, :k]
    else:
        sigma = -SHIFT_FACTOR * scale
        v0 = np.random.default_rng(seed).standard_normal(n)
        ncv = min(n, max(2 * k + 1, 20))
        try:
            mu, V = eigsh(A.tocsc(), k=k, M=M.tocsc(), sigma=sigma, which="LM", v0=v0,
                          ncv=ncv, tol=tol * 1e-2, maxiter=max(1000, 10 * n))
        except ArpackNoConvergence as exc:
            raise SolverError(f"eigensolver did not converge: {len(exc.eigenvalues)} of {k} "
                              "eigenpairs converged") from None
        except (ArpackError, RuntimeError, ValueError) as exc:
            raise SolverError(f"shift-invert factorization failed: {exc}") from None
        mu, V = _rayleigh_ritz(A, M, V)
    lam = -mu
    order = np.argsort(-lam, kind="stable")
    lam, V = lam[order], _fix_signs(V[:, order])
    R = A @ V + (M @ V) * lam
    residuals = np.abs(R).max(axis=0) / scale / max(np.abs(V).max(), 1e-300)
    if np.any(residuals > max(tol, 1e-12) * 10):
        bad = int(np.count_nonzero(residuals <= tol * 10))
        raise SolverError(f"only {bad} of {k} eigenpairs meet the residual tolerance")
    return Spectrum(lam, V, residuals)


def _rayleigh_ritz(A, M, V):
    Ar = V.T @ (A @ V)
    Mr = V.T @ (M @ V)
    Ar = 0.5 * (Ar + Ar.T)
    Mr = 0.5 * (Mr + Mr.T)
    mu, Y = la.eigh(Ar, Mr)
    return mu, V @ Y


def _dense(A, M):
    try:
        return la.eigh(A.toarray(), M.toarray())
    except la.LinAlgError as exc:
        raise SolverError(f"dense generalized eigensolver failed: {exc}") from None


def solve_dense(Dbar, Mbar, k=DEFAULT_K):
    """Dense reference solution (small systems), same conventions as :func:`solve_gevp`."""
    A, M = sp.csr_matrix(Dbar), sp.csr_matrix(Mbar)
    _validate(A, M, k)
    mu, V = _dense(A, M)
    lam = -mu[:k]
    return Spectrum(lam, _fix_signs(V[:, :k]), np.zeros(k))


def solve_assembly(result, k=DEFAULT_K, tol=DEFAULT_TOL, boundary="neumann", seed=0):
    """Solve the eigenproblem of an assembly result under the given boundary condition.

    Dirichlet conditions remove the initial boundary nodes and re-embed the
    eigenvectors with zeros there.
    """
    if boundary == "neumann":
        spec = solve_gevp(result.Dbar, result.Mbar, k, tol, seed)
        return spec
    if boundary != "dirichlet":
        raise ValidationError(f"unknown boundary condition {boundary!r}")
    if len(result.boundary_nodes) == 0:
        raise ValidationError("no boundary nodes: Dirichlet conditions need a domain boundary")
    D, M, interior = apply_dirichlet(result.Dbar, result.Mbar, result.boundary_nodes)
    spec = solve_gevp(D, M, k, tol, seed)
    V = embed_vectors(spec.eigenvectors, interior, result.n)
    return Spectrum(spec.eigenvalues, V, spec.residuals, "dirichlet")


def eigengap(eigenvalues, boundary="neumann", rtol=1e-9):
    """Cluster count suggested by the largest spectral gap.

    The gap after the ``j``-th eigenvalue is ``lambda_j - lambda_{j+1}``
    (1-based).  For Neumann problems ``j >= 2`` is searched and ``j - 1`` sets
    are suggested, since the constant mode carries no structure.  For
    Dirichlet problems ``j >= 1`` and ``j`` is returned.  Near-equal gaps
    (within ``rtol`` relative) resolve to the smallest ``j``.

    Returns
    -------
    count : int
        Suggested number of coherent sets.
    j : int
        Position of the gap.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size < 3:
        raise ValidationError("need at least 3 eigenvalues")
    gaps = lam[:-1] - lam[1:]
    first = 2 if boundary == "neumann" else 1
    cand = gaps[first - 1:]
    best = cand.max()
    j = first + int(np.flatnonzero(cand >= best - rtol * abs(best))[0])
    return (j - 1 if boundary == "neumann" else j), j
