import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from coherentfem import flows, mesh, trajectories as tr
from coherentfem.exceptions import InfeasibleError, ParseError, ValidationError

from conftest import zero_field


def _write(path, text):
    path.write_text(text)
    return path


def test_zero_field_columns():
    seeds = np.random.default_rng(0).random((10, 2))
    ds = tr.generate_trajectories(zero_field(), seeds, [0, 0.5, 1])
    for k in range(3):
        np.testing.assert_array_equal(ds.positions[:, k], seeds)


def test_matches_pointwise_integration(double_gyre):
    seeds = mesh.regular_grid((25, 25), [[0, 1], [0, 1]])
    ds = tr.generate_trajectories(double_gyre, seeds, [0, 1])
    np.testing.assert_array_equal(ds.positions[:, 1], flows.integrate_flow(double_gyre, seeds, 0, 1))
    # single-point calls take their own step sequence, so compare at tight tolerances
    tight = tr.generate_trajectories(double_gyre, seeds, [0, 1], rtol=1e-9, atol=1e-9)
    for i in (0, 100, 312, 624):
        ref = flows.integrate_flow(double_gyre, seeds[i], 0, 1, 1e-9, 1e-9)
        np.testing.assert_allclose(tight.positions[i, 1], ref, atol=1e-6)


def test_bickley_columns_wrapped():
    f = flows.builtin_field("bickley")
    rng = np.random.default_rng(0)
    seeds = np.column_stack([rng.random(3000) * 20, rng.random(3000) * 6 - 3])
    ds = tr.generate_trajectories(f, seeds, np.arange(0, 41, 4))
    assert ds.n_times == 11
    x = ds.positions[..., 0]
    assert np.all((x >= 0) & (x < 20))


def test_load_complete(tmp_path):
    p = _write(tmp_path / "t.txt", "dim=2 times=0,1\n1 0 0 0\n1 1 0.1 0\n2 0 1 0\n2 1 1.1 0\n3 0 0 1\n3 1 0 1.1\n")
    ds = tr.load_trajectories(p)
    assert ds.n_particles == 3 and ds.n_times == 2
    I, T = tr.index_sets(ds)
    assert all(list(i) == [0, 1, 2] for i in I)


def test_load_missing_entry(tmp_path):
    p = _write(tmp_path / "t.txt", "dim=2 times=0,1\n1 0 0 0\n1 1 0.1 0\n2 0 1 0\n3 0 0 1\n3 1 0 1.1\n")
    ds = tr.load_trajectories(p)
    I, T = tr.index_sets(ds)
    assert list(T[1]) == [0]
    assert list(I[1]) == [0, 2]


def test_load_overlap_violation(tmp_path):
    p = _write(tmp_path / "t.txt", "dim=2 times=0,1\n1 0 0 0\n2 1 1 0\n")
    with pytest.raises(ValidationError):
        tr.load_trajectories(p)


@pytest.mark.parametrize("body,line", [
    ("1 0 0\n", 2),
    ("1 0 a b\n", 2),
    ("1 0 0 0\n1 0 0 0\n", 3),
    ("1 5 0 0\n", 2),
    ("1 0 nan 0\n", 2),
])
def test_load_parse_errors(tmp_path, body, line):
    p = _write(tmp_path / "t.txt", "dim=2 times=0,1\n" + body)
    with pytest.raises(ParseError) as exc:
        tr.load_trajectories(p)
    assert exc.value.line == line


def test_bad_header(tmp_path):
    with pytest.raises(ParseError):
        tr.load_trajectories(_write(tmp_path / "t.txt", "times=0,1\n"))


def test_dataset_validation():
    with pytest.raises(ValidationError):
        tr.TrajectoryDataset([0.0], np.zeros((2, 1, 2)), [0, 1])
    with pytest.raises(ValidationError):
        tr.TrajectoryDataset([0.0, 1.0], np.zeros((2, 2, 2)), [0, 0])
    pos = np.zeros((2, 2, 2))
    pos[0, 1, 0] = np.nan
    with pytest.raises(ValidationError):
        tr.TrajectoryDataset([0.0, 1.0], pos, [0, 1])


def test_empty_time_column():
    pos = np.random.default_rng(0).random((4, 3, 2))
    pos[:, 1] = np.nan
    ds = tr.TrajectoryDataset([0, 1, 2], pos, np.arange(4))
    I, _ = tr.index_sets(ds)
    assert I[1].size == 0
    tr.validate_dataset(ds)


def test_validate_bounds():
    pos = np.zeros((2, 2, 2))
    pos[1, 1] = [2.0, 0.5]
    ds = tr.TrajectoryDataset([0, 1], pos, [0, 1])
    with pytest.raises(ValidationError):
        tr.validate_dataset(ds, bounds=[[0, 1], [0, 1]])


@given(hnp.arrays(np.float64, (5, 3, 2), elements=st.floats(-1e6, 1e6)),
       hnp.arrays(bool, (5, 3)))
def test_roundtrip_bit_exact(tmp_path_factory, pos, missing):
    missing[:, 0] = False
    pos = pos.copy()
    pos[missing] = np.nan
    ds = tr.TrajectoryDataset([0.0, 0.1, 1 / 3], pos, np.arange(10, 15))
    path = tmp_path_factory.mktemp("rt") / "t.txt"
    tr.save_trajectories(ds, path)
    back = tr.load_trajectories(path)
    np.testing.assert_array_equal(back.positions, ds.positions)
    np.testing.assert_array_equal(back.times, ds.times)
    np.testing.assert_array_equal(back.particle_ids, ds.particle_ids)


def _full(n, m, seed=0):
    pos = np.random.default_rng(seed).random((n, m, 2))
    return tr.TrajectoryDataset(np.arange(m, dtype=float), pos, np.arange(n))


def test_delete_zero_fraction():
    ds = _full(20, 4)
    out = tr.delete_random(ds, 0.0, 1)
    np.testing.assert_array_equal(out.positions, ds.positions)


def test_delete_reproducible():
    ds = _full(50, 4)
    a, b = tr.delete_random(ds, 0.5, 9), tr.delete_random(ds, 0.5, 9)
    np.testing.assert_array_equal(a.present, b.present)
    assert a.present[:, 0].all()


def test_delete_625_by_6():
    ds = _full(625, 6)
    counts = tr.delete_random(ds, 0.6, 0).present[:, 1:].sum(axis=0)
    sigma = np.sqrt(625 * 0.4 * 0.6)
    assert np.all(np.abs(counts - 250) <= 3 * sigma)


def test_delete_bickley_shape():
    ds = _full(3000, 11)
    counts = tr.delete_random(ds, 0.8, 0).present[:, 1:].sum(axis=0)
    assert np.all(np.abs(counts - 600) <= 3 * np.sqrt(3000 * 0.16))


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.9))
def test_delete_count_statistics(seed, fraction):
    ds = _full(400, 3)
    out = tr.delete_random(ds, fraction, seed)
    counts = out.present[:, 1:].sum(axis=0)
    mean, sd = 400 * (1 - fraction), np.sqrt(400 * fraction * (1 - fraction))
    # binomial 3 sigma per time, widened by the Bonferroni factor for two columns
    assert np.all(np.abs(counts - mean) <= 3.5 * sd)
    assert tr.find_overlap_violation(out.present) is None


def test_delete_invalid_fraction():
    with pytest.raises(ValidationError):
        tr.delete_random(_full(5, 3), 1.0, 0)


def test_delete_infeasible():
    pos = np.random.default_rng(0).random((2, 3, 2))
    pos[0, 0] = np.nan
    pos[1, 1:] = np.nan
    ds = tr.TrajectoryDataset([0, 1, 2], pos, [0, 1])
    with pytest.raises(InfeasibleError):
        tr.delete_random(ds, 0.5, 0)


def test_overlap_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        present = rng.random((12, 4)) < 0.4
        brute = any(not np.any(present[i] & present[j]) for i in range(12) for j in range(12))
        assert (tr.find_overlap_violation(present, chunk=5) is not None) == brute
