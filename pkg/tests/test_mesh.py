import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from coherentfem import mesh
from coherentfem.exceptions import GeometryError, ValidationError


def test_regular_grid_25_has_1152_triangles(square25):
    assert square25.n_nodes == 625
    assert square25.n_simplices == 1152
    assert square25.boundary_nodes.size == 96


def test_single_triangle():
    m = mesh.delaunay([[0, 0], [1, 0], [0, 1]])
    assert m.n_simplices == 1
    assert sorted(m.boundary_nodes.tolist()) == [0, 1, 2]
    assert mesh.element_volume(m, 0) == pytest.approx(0.5)


def test_unit_square_corners():
    m = mesh.delaunay([[0, 0], [1, 0], [1, 1], [0, 1]])
    assert m.n_simplices == 2
    assert m.total_volume() == pytest.approx(1.0, abs=1e-15)


def test_reference_tetrahedron():
    m = mesh.delaunay([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    assert mesh.element_volume(m, 0) == pytest.approx(1 / 6)


def test_element_volume_index_check():
    m = mesh.delaunay([[0, 0], [1, 0], [0, 1]])
    with pytest.raises(IndexError):
        mesh.element_volume(m, 1)


def test_degenerate_inputs():
    with pytest.raises(GeometryError):
        mesh.delaunay([[0, 0], [1, 1]])
    with pytest.raises(GeometryError):
        mesh.delaunay([[0, 0], [1, 1], [2, 2], [3, 3]])
    with pytest.raises(ValidationError):
        mesh.delaunay([[0, 0], [1, np.nan], [0, 1]])
    with pytest.raises(ValidationError):
        mesh.delaunay([[0, 0, 0, 0]] * 5)


def test_simplices_positive_and_distinct(square25):
    s = square25.simplices
    assert np.all(np.sort(s, axis=1)[:, 1:] != np.sort(s, axis=1)[:, :-1])
    assert np.all(square25.volumes > 0)


def test_boundary_brute_force():
    rng = np.random.default_rng(3)
    m = mesh.delaunay(rng.random((60, 2)))
    hull = ConvexHull(m.nodes)
    on_hull = set(hull.vertices.tolist())
    assert on_hull <= set(m.boundary_nodes.tolist())
    # every boundary node lies on a hull edge
    eqs = hull.equations
    dist = np.min(np.abs(m.nodes[m.boundary_nodes] @ eqs[:, :2].T + eqs[:, 2]), axis=1)
    assert np.all(dist < 1e-12)


@given(st.integers(0, 10_000), st.sampled_from([2, 3]))
def test_volume_equals_hull_volume(seed, dim):
    pts = np.random.default_rng(seed).random((30, dim))
    m = mesh.delaunay(pts)
    assert m.total_volume() == pytest.approx(ConvexHull(pts).volume, rel=1e-12)


def test_delaunay_deterministic():
    pts = np.random.default_rng(0).random((200, 2))
    a, b = mesh.delaunay(pts), mesh.delaunay(pts)
    assert np.array_equal(a.simplices, b.simplices)


def test_grid_3d_kuhn():
    m = mesh.delaunay(mesh.regular_grid((4, 4, 4), [[0, 1]] * 3))
    assert m.n_simplices == 6 * 27
    assert m.total_volume() == pytest.approx(1.0, rel=1e-12)


def test_alpha_infinite_equals_delaunay():
    pts = np.random.default_rng(1).random((50, 2))
    a, d = mesh.alpha_complex(pts, np.inf), mesh.delaunay(pts)
    assert np.array_equal(np.sort(a.simplices, axis=1), np.sort(d.simplices, axis=1))


def test_alpha_grid_keeps_all():
    pts = mesh.regular_grid((25, 25), [[0, 1], [0, 1]])
    a = mesh.alpha_complex(pts, np.sqrt(2) / 24)
    assert a.n_simplices == 1152


def _components(m):
    parent = list(range(m.n_nodes))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in m.edges:
        parent[find(i)] = find(j)
    used = np.flatnonzero(m.used_nodes)
    return len({find(i) for i in used})


def test_alpha_two_clusters():
    rng = np.random.default_rng(2)
    pts = np.vstack([rng.random((5, 2)) * 0.1, rng.random((5, 2)) * 0.1 + [5.0, 0.0]])
    m = mesh.alpha_complex(pts, 1.0)
    radii = mesh.circumradii(mesh.delaunay(pts).vertex_coords())
    assert m.n_simplices == int(np.sum(radii <= 1.0))
    assert _components(m) == 2


def test_alpha_empty():
    with pytest.raises(GeometryError):
        mesh.alpha_complex(mesh.regular_grid((5, 5), [[0, 1], [0, 1]]), 1e-6)


def test_torus_grid():
    L = 2 * np.pi
    pts = mesh.regular_grid((40, 40), [[0, L], [0, L]], periods=(L, L))
    m = mesh.periodic_delaunay(pts, (L, L))
    assert m.n_nodes == 1600 and m.n_simplices == 3200
    assert m.boundary_nodes.size == 0
    assert m.total_volume() == pytest.approx(L * L, rel=1e-12)


def test_torus_scattered():
    L = 2 * np.pi
    pts = np.random.default_rng(5).random((300, 2)) * L
    m = mesh.periodic_delaunay(pts, (L, L))
    assert m.boundary_nodes.size == 0
    assert m.total_volume() == pytest.approx(L * L, rel=1e-10)
    assert m.n_simplices == 600  # Euler characteristic of the torus


def test_bickley_strip_boundary():
    pts = mesh.regular_grid((20, 7), [[0, 20], [-3, 3]], periods=(20.0, None))
    m = mesh.periodic_delaunay(pts, (20.0, None))
    y = m.nodes[m.boundary_nodes, 1]
    assert np.all(np.isclose(np.abs(y), 3.0))
    assert m.boundary_nodes.size == 40
    assert m.total_volume() == pytest.approx(120.0, rel=1e-12)


def test_strip_scattered():
    rng = np.random.default_rng(7)
    pts = np.column_stack([rng.random(200) * 20, rng.random(200) * 6 - 3])
    m = mesh.periodic_delaunay(pts, (20.0, None))
    assert np.all(m.volumes > 0)
    ys = m.nodes[m.boundary_nodes, 1]
    assert ys.min() == pts[:, 1].min() and ys.max() == pts[:, 1].max()


def test_periodic_without_axes_is_delaunay():
    pts = np.random.default_rng(4).random((40, 2))
    a, d = mesh.periodic_delaunay(pts, (None, None)), mesh.delaunay(pts)
    assert np.array_equal(a.simplices, d.simplices)


def test_periodic_rejects_outside_points():
    with pytest.raises(ValidationError):
        mesh.periodic_delaunay([[0, 0], [1.5, 0.2], [0.3, 0.7], [0.6, 0.4]], (1.0, 1.0))


def test_minimal_image_and_wrap():
    d = mesh.minimal_image(np.array([[0.9, 0.3]]), (1.0, None))
    assert d[0, 0] == pytest.approx(-0.1) and d[0, 1] == 0.3
    w = mesh.wrap_points(np.array([[-1e-20, 2.5], [1.25, 0.0]]), (1.0, None))
    assert 0 <= w[0, 0] < 1 and w[1, 0] == pytest.approx(0.25)


def test_mesh_roundtrip(tmp_path):
    L = 2 * np.pi
    pts = mesh.regular_grid((6, 6), [[0, L], [0, L]], periods=(L, L))
    m = mesh.periodic_delaunay(pts, (L, L))
    mesh.write_mesh(m, tmp_path / "m.txt")
    r = mesh.read_mesh(tmp_path / "m.txt", periods=(L, L))
    assert np.array_equal(r.nodes, m.nodes)
    assert np.array_equal(r.simplices, m.simplices)
    np.testing.assert_allclose(r.volumes, m.volumes, rtol=1e-12)


def test_mesh_is_read_only(square25):
    with pytest.raises(ValueError):
        square25.nodes[0, 0] = 1.0
