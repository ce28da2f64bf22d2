"""Simplicial meshes over scattered or regular node sets in 2D and 3D.

Meshes are built by Delaunay triangulation (Qhull through
:mod:`scipy.spatial`), optionally filtered to an alpha complex, and may wrap
across periodic axes.  Regular tensor-product grids are recognised and split
into Kuhn (Freudenthal) simplices, which is a Delaunay triangulation of the
grid with a fixed, deterministic choice among the cocircular alternatives.
"""
import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .exceptions import GeometryError, ValidationError

#: Simplices with volume below ``DEGENERACY_FACTOR * diameter**dim`` are dropped.
DEGENERACY_FACTOR = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh with optional periodic identification.

    Parameters
    ----------
    nodes : ndarray, shape (n, dim)
        Node coordinates.  On periodic axes these lie in the fundamental
        domain ``[origin, origin + period)``.
    simplices : ndarray of int, shape (m, dim + 1)
        Node indices of each simplex, positively oriented.
    boundary_nodes : ndarray of int
        Sorted indices of nodes on a facet that belongs to exactly one simplex.
    periods : tuple
        Per-axis period length, ``None`` for non-periodic axes.
    offsets : ndarray, shape (m, dim + 1, dim), optional
        Coordinate shift applied to each simplex vertex so that
        ``nodes[simplices] + offsets`` is the unwrapped simplex.  ``None`` when
        no simplex crosses a periodic seam.
    origin : ndarray, shape (dim,)
        Lower corner of the fundamental domain on periodic axes.
    """

    nodes: np.ndarray
    simplices: np.ndarray
    boundary_nodes: np.ndarray
    periods: tuple
    offsets: np.ndarray = None
    origin: np.ndarray = None

    def __post_init__(self):
        for arr in (self.nodes, self.simplices, self.boundary_nodes, self.offsets):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_simplices(self):
        return self.simplices.shape[0]

    @property
    def is_periodic(self):
        return any(p is not None for p in self.periods)

    def vertex_coords(self):
        """Unwrapped vertex coordinates of every simplex, shape (m, dim+1, dim)."""
        coords = self.nodes[self.simplices]
        if self.offsets is not None:
            coords = coords + self.offsets
        return coords

    @cached_property
    def volumes(self):
        v = _signed_volumes(self.vertex_coords())
        v.setflags(write=False)
        return v

    @cached_property
    def edges(self):
        """Unique node pairs ``(i, j)`` with ``i < j`` joined by a mesh edge."""
        pairs = [self.simplices[:, [a, b]]
                 for a, b in itertools.combinations(range(self.dim + 1), 2)]
        pairs = np.sort(np.concatenate(pairs), axis=1)
        e = np.unique(pairs, axis=0)
        e.setflags(write=False)
        return e

    @cached_property
    def node_volumes(self):
        """Integral of each nodal basis function, ``sum(vol(e)) / (dim+1)``."""
        out = np.zeros(self.n_nodes)
        share = np.repeat(self.volumes / (self.dim + 1), self.dim + 1)
        np.add.at(out, self.simplices.ravel(), share)
        return out

    @property
    def used_nodes(self):
        """Boolean mask of nodes referenced by at least one simplex."""
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.simplices.ravel()] = True
        return mask

    def total_volume(self):
        return float(self.volumes.sum())

    def minimal_image(self, delta):
        """Wrap coordinate differences onto ``[-L/2, L/2)`` on periodic axes."""
        return minimal_image(delta, self.periods)

    def wrap(self, points):
        return wrap_points(points, self.periods, self.origin)


def minimal_image(delta, periods):
    delta = np.array(delta, dtype=float, copy=True)
    for k, p in enumerate(periods):
        if p is not None:
            delta[..., k] -= p * np.round(delta[..., k] / p)
    return delta


def wrap_points(points, periods, origin=None):
    points = np.array(points, dtype=float, copy=True)
    for k, p in enumerate(periods):
        if p is not None:
            o = 0.0 if origin is None else origin[k]
            points[..., k] = o + np.mod(points[..., k] - o, p)
            # mod can round up to exactly p for tiny negative inputs
            points[..., k] = np.where(points[..., k] >= o + p, o, points[..., k])
    return points


def element_volume(mesh, simplex_index):
    """d-volume of one simplex (area in 2D, volume in 3D)."""
    if not -mesh.n_simplices <= simplex_index < mesh.n_simplices:
        raise IndexError(f"simplex index {simplex_index} out of range")
    return float(mesh.volumes[simplex_index])


def _signed_volumes(coords):
    d = coords.shape[-1]
    edges = coords[:, 1:, :] - coords[:, :1, :]
    return np.linalg.det(edges) / math.factorial(d)


def circumradii(coords):
    """Circumradius of each simplex given unwrapped vertex coordinates."""
    edges = coords[:, 1:, :] - coords[:, :1, :]
    rhs = 0.5 * np.einsum("mij,mij->mi", edges, edges)
    out = np.full(coords.shape[0], np.inf)
    ok = np.abs(np.linalg.det(edges)) > 0
    if ok.any():
        centre = np.linalg.solve(edges[ok], rhs[ok][..., None])[..., 0]
        out[ok] = np.linalg.norm(centre, axis=1)
    return out


def _as_points(points, dim=None):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValidationError("points must be a 2-d array of shape (n, dim)")
    if dim is not None and pts.shape[1] != dim:
        raise ValidationError(f"points have dimension {pts.shape[1]}, expected {dim}")
    if pts.shape[1] not in (2, 3):
        raise ValidationError("only 2D and 3D meshes are supported")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("points contain non-finite coordinates")
    if pts.shape[0] < pts.shape[1] + 1:
        raise GeometryError(
            f"need at least {pts.shape[1] + 1} points in {pts.shape[1]}D, got {pts.shape[0]}")
    return pts


def _diameter(pts):
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def _finalize(nodes, simplices, periods, offsets=None, origin=None, drop_degenerate=True):
    """Orient, drop slivers, compute boundary and build the Mesh."""
    simplices = np.array(simplices, dtype=np.int64).reshape(-1, nodes.shape[1] + 1)
    if offsets is not None:
        offsets = np.array(offsets, dtype=float)
    coords = nodes[simplices] + (0.0 if offsets is None else offsets)
    vol = _signed_volumes(coords)
    d = nodes.shape[1]
    if drop_degenerate:
        keep = np.abs(vol) >= DEGENERACY_FACTOR * _diameter(nodes) ** d
        simplices, vol = simplices[keep], vol[keep]
        if offsets is not None:
            offsets = offsets[keep]
    flip = vol < 0
    if flip.any():
        simplices[flip, 0], simplices[flip, 1] = simplices[flip, 1], simplices[flip, 0].copy()
        if offsets is not None:
            o0 = offsets[flip, 0].copy()
            offsets[flip, 0] = offsets[flip, 1]
            offsets[flip, 1] = o0
    if offsets is not None and not np.any(offsets):
        offsets = None
    if origin is None:
        origin = np.zeros(d)
    return Mesh(nodes=nodes, simplices=simplices,
                boundary_nodes=_boundary_nodes(simplices, d),
                periods=tuple(periods), offsets=offsets, origin=np.asarray(origin, float))


def _boundary_nodes(simplices, d):
    if simplices.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    facets = np.concatenate([np.delete(simplices, k, axis=1) for k in range(d + 1)])
    facets = np.sort(facets, axis=1)
    uniq, counts = np.unique(facets, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1])


# -- regular grids ---------------------------------------------------------

def regular_grid(shape, bounds, periods=None):
    """Tensor-product grid nodes in C order.

    Non-periodic axes include both end points; periodic axes sample
    ``[lo, lo + period)`` with spacing ``period / n``.
    """
    shape = tuple(int(s) for s in shape)
    bounds = np.asarray(bounds, dtype=float).reshape(len(shape), 2)
    periods = _normalize_periods(periods, len(shape))
    axes = []
    for n, (lo, hi), p in zip(shape, bounds, periods):
        if p is None:
            axes.append(np.linspace(lo, hi, n))
        else:
            axes.append(lo + p * np.arange(n) / n)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _tensor_grid(pts):
    """Axis coordinates and multi-index if ``pts`` is a full tensor grid."""
    axes = [np.unique(pts[:, k]) for k in range(pts.shape[1])]
    shape = tuple(len(a) for a in axes)
    if math.prod(shape) != pts.shape[0] or min(shape) < 2:
        return None
    idx = np.stack([np.searchsorted(a, pts[:, k]) for k, a in enumerate(axes)], axis=1)
    flat = np.ravel_multi_index(idx.T, shape)
    if np.unique(flat).size != pts.shape[0]:
        return None
    return axes, shape, flat


def _kuhn(pts, grid, periods, origin):
    axes, shape, flat = grid
    d = len(shape)
    node_of = np.empty(math.prod(shape), dtype=np.int64)
    node_of[flat] = np.arange(pts.shape[0])
    ranges = [range(n if p is not None else n - 1) for n, p in zip(shape, periods)]
    cells = np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, d)
    simplices, offsets = [], []
    for perm in itertools.permutations(range(d)):
        verts = [cells.copy()]
        for ax in perm:
            nxt = verts[-1].copy()
            nxt[:, ax] += 1
            verts.append(nxt)
        verts = np.stack(verts, axis=1)
        off = np.zeros(verts.shape, dtype=float)
        for ax, (n, p) in enumerate(zip(shape, periods)):
            if p is not None:
                wrapped = verts[:, :, ax] >= n
                off[:, :, ax] = np.where(wrapped, p, 0.0)
                verts[:, :, ax] = np.where(wrapped, verts[:, :, ax] - n, verts[:, :, ax])
        ids = np.ravel_multi_index(tuple(np.moveaxis(verts, -1, 0)), shape)
        simplices.append(node_of[ids])
        offsets.append(off)
    simplices = np.concatenate(simplices)
    offsets = np.concatenate(offsets) if any(p is not None for p in periods) else None
    return _finalize(pts, simplices, periods, offsets, origin, drop_degenerate=False)


def _periodic_grid_ok(grid, periods, origin):
    axes, shape, _ = grid
    for a, n, p, o in zip(axes, shape, periods, origin):
        if p is None:
            continue
        h = p / n
        if n < 3 or not np.allclose(np.diff(a), h, rtol=1e-9, atol=1e-12 * p):
            return False
        if not (o - 1e-12 * p <= a[0] < o + h):
            return False
    return True


# -- triangulation kernels -------------------------------------------------

def _qhull(pts):
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise GeometryError(f"points are affinely degenerate: {exc}".splitlines()[0]) from None
    return np.asarray(tri.simplices, dtype=np.int64)


def delaunay(points, dim=None):
    """Delaunay triangulation of the convex hull of ``points``.

    Parameters
    ----------
    points : array_like, shape (n, dim)
    dim : int, optional
        Expected spatial dimension, checked against ``points``.

    Returns
    -------
    Mesh

    Raises
    ------
    GeometryError
        Fewer than ``dim + 1`` points or all points affinely dependent.
    """
    pts = _as_points(points, dim)
    periods = (None,) * pts.shape[1]
    grid = _tensor_grid(pts)
    if grid is not None:
        return _kuhn(pts, grid, periods, None)
    mesh = _finalize(pts, _qhull(pts), periods)
    if mesh.n_simplices == 0:
        raise GeometryError("all points are affinely dependent")
    return mesh


def alpha_complex(points, alpha_radius, periods=None, origin=None):
    """Delaunay simplices with circumradius at most ``alpha_radius``.

    The result may be non-convex or disconnected; boundary nodes are
    recomputed from the retained simplices.
    """
    if not alpha_radius > 0:
        raise ValidationError("alpha_radius must be positive")
    pts = _as_points(points)
    periods = _normalize_periods(periods, pts.shape[1])
    if any(p is not None for p in periods):
        full = periodic_delaunay(pts, periods, origin)
    else:
        full = delaunay(pts)
    radii = circumradii(full.vertex_coords())
    keep = radii <= alpha_radius
    if not keep.any():
        raise GeometryError(
            f"alpha complex is empty; smallest usable radius is {radii.min():.17g}")
    offsets = None if full.offsets is None else full.offsets[keep]
    return _finalize(full.nodes, full.simplices[keep].copy(), full.periods,
                     offsets, full.origin, drop_degenerate=False)


def _normalize_periods(periods, dim):
    if periods is None:
        return (None,) * dim
    periods = tuple(None if p is None or p == 0 else float(p) for p in periods)
    if len(periods) != dim:
        raise ValidationError(f"periods has length {len(periods)}, expected {dim}")
    if any(p is not None and p <= 0 for p in periods):
        raise ValidationError("periods must be positive")
    return periods


def periodic_delaunay(points, periods, origin=None):
    """Delaunay triangulation wrapping across periodic axes.

    Points are replicated into ghost copies within a margin of each periodic
    boundary, the augmented set is triangulated, and every simplex is kept
    exactly once: in the translate whose smallest node index is an original
    (non-ghost) copy.  The margin grows until all kept simplices have their
    circumballs inside the replicated region.

    Parameters
    ----------
    points : array_like, shape (n, dim)
        Nodes inside the fundamental domain.
    periods : sequence
        Per-axis period, ``None`` for non-periodic axes.
    origin : array_like, optional
        Lower corner of the fundamental domain (default zeros).
    """
    pts = _as_points(points)
    d = pts.shape[1]
    periods = _normalize_periods(periods, d)
    origin = np.zeros(d) if origin is None else np.asarray(origin, dtype=float)
    per_axes = [k for k, p in enumerate(periods) if p is not None]
    if not per_axes:
        return delaunay(pts)
    for k in per_axes:
        lo, hi = origin[k], origin[k] + periods[k]
        bad = (pts[:, k] < lo) | (pts[:, k] >= hi)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(
                f"point {i} lies outside the fundamental domain on axis {k}: {pts[i, k]!r}")

    grid = _tensor_grid(pts)
    if grid is not None and _periodic_grid_ok(grid, periods, origin):
        return _kuhn(pts, grid, periods, origin)

    n = pts.shape[0]
    box = np.array([periods[k] for k in per_axes])
    spacing = (math.prod(box) / n) ** (1.0 / len(per_axes))
    frac = min(1.0, max(0.1, 4.0 * spacing / box.min()))
    if len(per_axes) < d:
        # the hull along non-periodic axes spans whole periods; use full copies
        frac = 1.0
    while True:
        mesh, ok = _ghost_triangulation(pts, periods, origin, per_axes, frac)
        if ok or frac >= 1.0:
            return mesh
        frac = min(1.0, 2.0 * frac)


def _ghost_triangulation(pts, periods, origin, per_axes, frac):
    n, d = pts.shape
    shifts = np.array(list(itertools.product((0, -1, 1), repeat=len(per_axes))))
    all_pts, src, shift_of = [], [], []
    for s in shifts:
        vec = np.zeros(d)
        for k, sk in zip(per_axes, s):
            vec[k] = sk * periods[k]
        moved = pts + vec
        inside = np.ones(n, dtype=bool)
        for k in per_axes:
            m = frac * periods[k]
            inside &= (moved[:, k] >= origin[k] - m) & (moved[:, k] < origin[k] + periods[k] + m)
        all_pts.append(moved[inside])
        src.append(np.flatnonzero(inside))
        shift_of.append(np.repeat(vec[None, :], inside.sum(), axis=0))
    aug = np.concatenate(all_pts)
    src = np.concatenate(src)
    shift_of = np.concatenate(shift_of)
    is_orig = np.zeros(aug.shape[0], dtype=bool)
    is_orig[:n] = True  # first block is the zero shift

    simp = _qhull(aug)
    dof = src[simp]
    # lexicographic (dof, shift) key; exactly one translate of each periodic
    # simplex has its smallest-key vertex at zero shift
    code = np.zeros(aug.shape[0])
    for j, k in enumerate(per_axes):
        code += (np.round(shift_of[:, k] / periods[k]) + 1) * 3.0 ** (len(per_axes) - 1 - j)
    key = dof * 3.0 ** len(per_axes) + code[simp]
    first = np.argmin(key, axis=1)
    keep = is_orig[simp[np.arange(simp.shape[0]), first]]
    simp, dof = simp[keep], dof[keep]
    offsets = shift_of[simp]
    coords = aug[simp]

    radii = circumradii(coords)
    edges = coords[:, 1:, :] - coords[:, :1, :]
    rhs = 0.5 * np.einsum("mij,mij->mi", edges, edges)
    ok = True
    finite = np.isfinite(radii)
    small = finite & (radii < 0.25 * min(periods[k] for k in per_axes))
    if small.any():
        centre = coords[small, 0, :] + np.linalg.solve(edges[small], rhs[small][..., None])[..., 0]
        r = radii[small]
        for k in per_axes:
            m = frac * periods[k]
            lo, hi = origin[k] - m, origin[k] + periods[k] + m
            if np.any(centre[:, k] - r < lo) or np.any(centre[:, k] + r > hi):
                ok = False
    mesh = _finalize(pts, dof, periods, offsets, origin)
    return mesh, ok


def triangulate(points, periods=None, origin=None, alpha_radius=None):
    """Dispatch to Delaunay, periodic Delaunay or alpha complex."""
    pts = _as_points(points)
    periods = _normalize_periods(periods, pts.shape[1])
    if alpha_radius is not None and np.isfinite(alpha_radius):
        return alpha_complex(pts, alpha_radius, periods, origin)
    if any(p is not None for p in periods):
        return periodic_delaunay(pts, periods, origin)
    return delaunay(pts)


def median_edge_length(mesh):
    coords = mesh.vertex_coords()
    lengths = []
    for a, b in itertools.combinations(range(mesh.dim + 1), 2):
        lengths.append(np.linalg.norm(coords[:, a] - coords[:, b], axis=1))
    return float(np.median(np.concatenate(lengths)))


def positive_offdiagonal_count(stiffness, tol=1e-12):
    """Number of strictly positive off-diagonal stiffness entries (diagnostic)."""
    coo = stiffness.tocoo()
    off = coo.row != coo.col
    scale = np.abs(coo.data).max() if coo.nnz else 1.0
    return int(np.count_nonzero(coo.data[off] > tol * scale))


# -- text export -----------------------------------------------------------

def write_mesh(mesh, path):
    """Write node and simplex tables, one record per line."""
    with open(path, "w") as fh:
        fh.write(f"# mesh dim={mesh.dim} nodes={mesh.n_nodes} simplices={mesh.n_simplices}\n")
        fh.write("nodes\n")
        for i, x in enumerate(mesh.nodes):
            fh.write(f"{i} " + " ".join(f"{v:.17g}" for v in x) + "\n")
        fh.write("simplices\n")
        for s in mesh.simplices:
            fh.write(" ".join(str(int(v)) for v in s) + "\n")


def read_mesh(path, periods=None, origin=None):
    """Read a mesh written by :func:`write_mesh` (geometry is re-derived)."""
    nodes, simplices, section = [], [], None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line in ("nodes", "simplices"):
                section = line
                continue
            fields = line.split()
            if section == "nodes":
                nodes.append([float(v) for v in fields[1:]])
            else:
                simplices.append([int(v) for v in fields])
    nodes = np.array(nodes)
    simplices = np.array(simplices, dtype=np.int64)
    periods = _normalize_periods(periods, nodes.shape[1])
    offsets = None
    if any(p is not None for p in periods):
        # unwrap each simplex around its first vertex by minimal image
        delta = nodes[simplices] - nodes[simplices[:, :1]]
        offsets = minimal_image(delta, periods) - delta
    return _finalize(nodes, simplices, periods, offsets=offsets, origin=origin,
                     drop_degenerate=False)
