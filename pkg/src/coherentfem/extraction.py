"""Coherent-set extraction and dynamic Cheeger ratios.

Partitions come from k-means on eigenvector embeddings or from level sets of
a single eigenvector.  The interface of a two-set partition is the level set
of the piecewise-linear interpolant of its defining function: the eigenvector
for level-set partitions, the 0/1 label indicator otherwise (whose half level
set runs through the midpoints of edges joining different labels).  Its
evolved size uses the node positions at each time with the same connectivity.
"""
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from .exceptions import ValidationError
from .flows import flow_map
from .mesh import minimal_image

DEFAULT_RESTARTS = 20


@dataclass(frozen=True, eq=False)
class Partition:
    """Per-node labels ``0..k-1`` with provenance.

    Attributes
    ----------
    labels : ndarray of int, shape (n,)
    k : int
        Number of labels in use.
    source : dict
        How the labels were obtained (eigenvector indices, method, threshold).
    level_function : ndarray, optional
        Node values whose super-level set ``> source["threshold"]`` is label 1.
    """

    labels: np.ndarray
    k: int
    source: dict = field(default_factory=dict)
    level_function: np.ndarray = None

    def boundary_edges(self, mesh):
        """Mesh edges whose end points carry different labels, shape (e, 2)."""
        e = mesh.edges
        return e[self.labels[e[:, 0]] != self.labels[e[:, 1]]]


def _canonical(labels):
    # number clusters by first appearance in node order
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=np.int64)
    remap[np.unique(labels)[order]] = np.arange(order.size)
    return remap[labels]


def kmeans_partition(spectrum, num_vectors, k, restarts=DEFAULT_RESTARTS, rng_seed=0):
    """k-means clustering of nodes embedded by their eigenvector values.

    Node ``i`` is embedded as ``(v_1(i), ..., v_num_vectors(i))``, including the
    first eigenvector.  k-means++ seeding with ``restarts`` starts; the
    clustering with the lowest within-cluster sum of squares is kept.
    """
    V = spectrum.eigenvectors if hasattr(spectrum, "eigenvectors") else np.asarray(spectrum)
    V = np.atleast_2d(V.T).T
    if not 1 <= num_vectors <= V.shape[1]:
        raise ValidationError(f"num_vectors must lie in [1, {V.shape[1]}]")
    n = V.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"cannot form {k} clusters from {n} nodes")
    X = V[:, :num_vectors]
    source = {"method": "kmeans", "num_vectors": int(num_vectors), "restarts": int(restarts),
              "seed": int(rng_seed)}
    if k == 1:
        return Partition(np.zeros(n, dtype=np.int64), 1, source)
    km = KMeans(n_clusters=k, init="k-means++", n_init=restarts, random_state=rng_seed)
    labels = km.fit_predict(X)
    source["inertia"] = float(km.inertia_)
    labels = _canonical(labels)
    return Partition(labels, int(labels.max()) + 1, source)


def level_set_partition(eigenvector, threshold):
    """Two-set partition: label 1 where ``v > threshold``, else 0."""
    v = np.asarray(eigenvector, dtype=float)
    if np.ptp(v) == 0:
        raise ValidationError("eigenvector is constant; no level set separates it")
    labels = (v > threshold).astype(np.int64)
    return Partition(labels, 2, {"method": "level_set", "threshold": float(threshold)}, v)


# -- interface geometry ----------------------------------------------------

def node_positions(mesh0, dataset=None, dynamics=None, times=None, rtol=1e-3, atol=1e-3):
    """Node positions at each time, shape (m, n, dim), and whether they are wrapped.

    Trajectory data supplies stored (wrapped) positions.  A model pushes the
    initial nodes forward without wrapping, so element geometry at later times
    is exact on periodic axes.
    """
    if dataset is not None:
        if not dataset.is_complete:
            raise ValidationError("evolved interfaces need a position for every node at every time")
        if dataset.n_particles != mesh0.n_nodes:
            raise ValidationError("dataset particles do not match the mesh nodes")
        return np.transpose(dataset.positions, (1, 0, 2)), True
    if dynamics is None:
        return mesh0.nodes[None].copy(), True
    times = np.atleast_1d(np.asarray(times, dtype=float))
    pos = [mesh0.nodes if t == times[0] else
           flow_map(dynamics, mesh0.nodes, times[0], t, rtol, atol, wrap=False) for t in times]
    return np.stack(pos), False


def _element_coords(mesh0, positions, wrapped):
    # (m_times, n_simplices, dim+1, dim) unwrapped vertex coordinates per time
    coords = positions[:, mesh0.simplices, :]
    if mesh0.offsets is not None:
        coords = coords + mesh0.offsets[None]
    if wrapped and mesh0.is_periodic:
        rel = minimal_image(coords - coords[:, :, :1, :], mesh0.periods)
        coords = coords[:, :, :1, :] + rel
    return coords


def _tri_area(a, b, c):
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)


def _tet_volume(a, b, c, d):
    return np.abs(np.einsum("...i,...i->...", np.cross(b - a, c - a), d - a)) / 6.0


def _cut(vals, coords, c):
    """Interface size per time and super-level volume fraction of cut elements.

    Parameters
    ----------
    vals : ndarray, shape (m, dim+1)
        Level-function values at the vertices of the cut elements.
    coords : ndarray, shape (T, m, dim+1, dim)
        Vertex coordinates per time; index 0 is the initial time.
    c : float
        Threshold; the super-level set is ``vals > c``.

    Returns
    -------
    measure : ndarray, shape (T, m)
    fraction : ndarray, shape (m,)
    """
    d = vals.shape[1] - 1
    above = vals > c
    order = np.argsort(above, axis=1, kind="stable")
    rows = np.arange(vals.shape[0])[:, None]
    V = vals[rows, order]
    X = coords[:, rows, order, :]
    j = above.sum(axis=1)

    def cross_pt(a, b):
        # point where the interpolant equals c on the edge from vertex b to vertex a
        s = (c - V[:, b]) / (V[:, a] - V[:, b])
        return X[:, :, b] + s[None, :, None] * (X[:, :, a] - X[:, :, b]), s

    measure = np.zeros((coords.shape[0], vals.shape[0]))
    fraction = np.zeros(vals.shape[0])
    if d == 2:
        for jj, lone, others in ((1, 2, (0, 1)), (2, 0, (1, 2))):
            sel = j == jj
            if not sel.any():
                continue
            p, s1 = cross_pt(others[0], lone)
            q, s2 = cross_pt(others[1], lone)
            measure[:, sel] = np.linalg.norm(p - q, axis=-1)[:, sel]
            corner = (s1 * s2)[sel]
            fraction[sel] = corner if jj == 1 else 1.0 - corner
        return measure, fraction
    for jj, lone, others in ((1, 3, (0, 1, 2)), (3, 0, (1, 2, 3))):
        sel = j == jj
        if not sel.any():
            continue
        (p, s1), (q, s2), (r, s3) = (cross_pt(o, lone) for o in others)
        measure[:, sel] = _tri_area(p, q, r)[:, sel]
        corner = (s1 * s2 * s3)[sel]
        fraction[sel] = corner if jj == 1 else 1.0 - corner
    sel = j == 2
    if sel.any():
        # below: vertices 0, 1; above: 2, 3; the cut is the quad p20 p21 p31 p30
        p20, _ = cross_pt(2, 0)
        p21, _ = cross_pt(2, 1)
        p31, _ = cross_pt(3, 1)
        p30, _ = cross_pt(3, 0)
        area = _tri_area(p20, p21, p31) + _tri_area(p20, p31, p30)
        measure[:, sel] = area[:, sel]
        # the super-level part is a prism (X2, p20, p21) -> (X3, p30, p31)
        A, B, C = X[0, :, 2], p20[0], p21[0]
        A2, B2, C2 = X[0, :, 3], p30[0], p31[0]
        prism = _tet_volume(A, B, C, A2) + _tet_volume(B, C, A2, B2) + _tet_volume(C, A2, B2, C2)
        whole = _tet_volume(X[0, :, 0], X[0, :, 1], X[0, :, 2], X[0, :, 3])
        fraction[sel] = (prism / whole)[sel]
    return measure, fraction


def _level_geometry(mesh0, coords, values, c):
    """Time-averaged interface size and super-level volume fraction per element."""
    vals = values[mesh0.simplices]
    j = (vals > c).sum(axis=1)
    fraction = (j == mesh0.dim + 1).astype(float)
    measure = np.zeros(mesh0.n_simplices)
    cut = np.flatnonzero((j > 0) & (j <= mesh0.dim))
    if cut.size:
        # crossing parameters are formed for every edge pairing, then masked
        with np.errstate(divide="ignore", invalid="ignore"):
            m_cut, f_cut = _cut(vals[cut], coords[:, cut], c)
        measure[cut] = m_cut.mean(axis=0)
        fraction[cut] = f_cut
    return measure, fraction


def _element_masses(mesh0, node_weights):
    if node_weights is None:
        return mesh0.volumes
    return mesh0.volumes * node_weights.ratios[mesh0.simplices].mean(axis=1)


def _ratio(numerator, vol_above, vol_below, mode):
    if mode == "neumann":
        denom = min(vol_above, vol_below)
    elif mode == "dirichlet":
        denom = vol_above
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    if numerator <= 0 or denom <= 0:
        raise ValidationError("partition has an empty interface or an empty set")
    return numerator / denom


def _defining_function(partition):
    if partition.level_function is not None and "threshold" in partition.source:
        return np.asarray(partition.level_function, dtype=float), partition.source["threshold"]
    return np.asarray(partition.labels, dtype=float), 0.5


def cheeger_ratio(partition, mesh0, dataset=None, dynamics=None, times=None, mode="neumann",
                  node_weights=None, refine=False, rtol=1e-3, atol=1e-3):
    """Dynamic Cheeger ratio of a two-set partition.

    The numerator averages the evolved interface size over the times; the
    denominator is the smaller set volume (``mode="neumann"``) or the volume
    of the label-1 set ``A`` (``mode="dirichlet"``, where ``A`` must avoid the
    domain boundary).  Volumes are measured at the initial time, as masses
    when ``node_weights`` is given.

    Parameters
    ----------
    partition : Partition
        Labels 0 and 1.
    mesh0 : Mesh
        Initial mesh carrying the labels.
    dataset : TrajectoryDataset, optional
        Node positions at every time.
    dynamics, times : optional
        Model used to push the nodes forward instead of a dataset.  Without
        either, the static ratio is returned.
    refine : bool
        In 2D with a model, also push each interface segment's midpoint and
        measure the resulting two-piece polyline.
    """
    labels = np.asarray(partition.labels)
    if labels.shape != (mesh0.n_nodes,) or set(np.unique(labels).tolist()) - {0, 1}:
        raise ValidationError("cheeger_ratio needs a two-set partition with labels 0 and 1")
    if mode == "dirichlet" and np.any(labels[mesh0.boundary_nodes] == 1):
        raise ValidationError("the Dirichlet set must not contain boundary nodes")
    values, c = _defining_function(partition)
    positions, wrapped = node_positions(mesh0, dataset, dynamics, times, rtol, atol)
    coords = _element_coords(mesh0, positions, wrapped)
    measure, fraction = _level_geometry(mesh0, coords, values, c)
    numerator = measure.sum()
    if refine:
        if dynamics is None or mesh0.dim != 2:
            raise ValidationError("midpoint refinement needs a model and a 2D mesh")
        numerator = _refined_length(mesh0, values, c, dynamics, times, rtol, atol)
    mass = _element_masses(mesh0, node_weights)
    vol_above = float((fraction * mass).sum())
    vol_below = float(((1.0 - fraction) * mass).sum())
    return _ratio(float(numerator), vol_above, vol_below, mode)


def _refined_length(mesh0, values, c, dynamics, times, rtol, atol):
    vals = values[mesh0.simplices]
    j = (vals > c).sum(axis=1)
    cut = np.flatnonzero((j > 0) & (j < 3))
    X0 = mesh0.vertex_coords()[cut]
    V = vals[cut]
    above = V > c
    order = np.argsort(above, axis=1, kind="stable")
    r = np.arange(cut.size)
    V, X0 = V[r[:, None], order], X0[r[:, None], order]
    lone = np.where(j[cut] == 1, 2, 0)
    others = np.where(j[cut][:, None] == 1, [0, 1], [1, 2])

    def cross_pt(o):
        s = (c - V[r, lone]) / (V[r, o] - V[r, lone])  # nonzero: o and lone lie on opposite sides
        return X0[r, lone] + s[:, None] * (X0[r, o] - X0[r, lone])

    p1, p2 = cross_pt(others[:, 0]), cross_pt(others[:, 1])
    pts = np.concatenate([p1, 0.5 * (p1 + p2), p2])
    times = np.atleast_1d(np.asarray(times, dtype=float))
    total = 0.0
    for t in times:
        img = pts if t == times[0] else flow_map(dynamics, pts, times[0], t, rtol, atol, wrap=False)
        a, b, e = np.split(img, 3)
        total += (np.linalg.norm(b - a, axis=1) + np.linalg.norm(e - b, axis=1)).sum()
    return total / times.size


def optimal_level_set(eigenvector, mesh0, dataset=None, dynamics=None, times=None,
                      mode="neumann", node_weights=None, rtol=1e-3, atol=1e-3):
    """Threshold among the node values minimizing the dynamic Cheeger ratio.

    For ``mode="dirichlet"`` only thresholds above the largest boundary value
    are scanned, so the closure of ``{v > c}`` avoids the boundary.

    Returns
    -------
    partition : Partition
    ratio : float
    """
    v = np.asarray(eigenvector, dtype=float)
    if np.ptp(v) == 0:
        raise ValidationError("eigenvector is constant; no level set separates it")
    positions, wrapped = node_positions(mesh0, dataset, dynamics, times, rtol, atol)
    coords = _element_coords(mesh0, positions, wrapped)
    mass = _element_masses(mesh0, node_weights)
    total = float(mass.sum())
    cands = np.unique(v)[:-1]
    if mode == "dirichlet" and mesh0.boundary_nodes.size:
        cands = cands[cands > v[mesh0.boundary_nodes].max()]
    best = (np.inf, None)
    for c in cands:
        measure, fraction = _level_geometry(mesh0, coords, v, c)
        num = measure.sum()
        vol_above = float((fraction * mass).sum())
        denom = min(vol_above, total - vol_above) if mode == "neumann" else vol_above
        if num > 0 and denom > 0 and num / denom < best[0]:
            best = (num / denom, c)
    if best[1] is None:
        raise ValidationError("no threshold yields a nonempty interface")
    part = level_set_partition(v, best[1])
    part.source.update({"method": "optimal_level_set", "mode": mode})
    return part, float(best[0])


def check_cheeger_bounds(spectrum, ratio, mode="neumann"):
    """Compare a Cheeger ratio with its spectral upper bound.

    Neumann: ``h <= 2 sqrt(-lambda_2)``.  Dirichlet: ``h_d <= sqrt(-2 lambda_1)``.
    """
    lam = np.asarray(spectrum.eigenvalues if hasattr(spectrum, "eigenvalues") else spectrum)
    if mode == "neumann":
        eig = float(lam[1])
        bound = 2.0 * np.sqrt(max(-eig, 0.0))
    elif mode == "dirichlet":
        eig = float(lam[0])
        bound = np.sqrt(max(-2.0 * eig, 0.0))
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    return {"mode": mode, "ratio": float(ratio), "eigenvalue": eig, "bound": float(bound),
            "holds": bool(ratio <= bound)}


# -- export ----------------------------------------------------------------

def write_partition(partition, path, ids=None):
    """One ``<id> <label>`` line per node, in node order."""
    ids = np.arange(partition.labels.size) if ids is None else np.asarray(ids)
    with open(path, "w") as fh:
        for i, lab in zip(ids, partition.labels):
            fh.write(f"{i} {lab}\n")


def write_boundary_edges(partition, mesh, path):
    """One ``<i> <j>`` line per mesh edge joining differently labelled nodes."""
    with open(path, "w") as fh:
        for a, b in partition.boundary_edges(mesh):
            fh.write(f"{a} {b}\n")
