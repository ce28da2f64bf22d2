"""Trajectory datasets with explicit missingness.

A dataset holds positions ``x_i^t`` of ``n`` particles at ``m`` times.
Missing observations are stored as NaN rows internally and written to disk
by omitting the record.

File format (text, one observation per line)::

    dim=2 times=0,0.5,1
    <particle_id> <time_index> <x_1> ... <x_d>

Time indices are 0-based.
"""
from dataclasses import dataclass

import numpy as np

from . import _ode
from .exceptions import (InfeasibleError, IntegrationError, ParseError,
                         ValidationError)
from .flows import DEFAULT_ATOL, DEFAULT_RTOL, DiscreteMap, flow_map
from .mesh import wrap_points


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """Positions of ``n`` particles at ``m`` ordered times.

    Parameters
    ----------
    times : ndarray, shape (m,)
    positions : ndarray, shape (n, m, dim)
        NaN rows mark missing observations.
    particle_ids : ndarray of int, shape (n,)
    periods : tuple, optional
        Per-axis period of the domain (``None`` for open axes).
    origin : ndarray, optional
        Lower corner of the fundamental domain.
    """

    times: np.ndarray
    positions: np.ndarray
    particle_ids: np.ndarray
    periods: tuple = None
    origin: np.ndarray = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 3 or pos.shape[1] != times.size:
            raise ValidationError("positions must have shape (n, len(times), dim)")
        if times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValidationError("need at least 2 strictly increasing times")
        partial = np.isnan(pos).any(axis=2) & ~np.isnan(pos).all(axis=2)
        if partial.any():
            raise ValidationError("an observation has some but not all coordinates missing")
        if np.isinf(pos).any():
            raise ValidationError("positions contain infinite coordinates")
        ids = np.asarray(self.particle_ids)
        if ids.shape != (pos.shape[0],) or np.unique(ids).size != ids.size:
            raise ValidationError("particle_ids must be unique, one per particle")
        periods = self.periods if self.periods is not None else (None,) * pos.shape[2]
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "particle_ids", ids)
        object.__setattr__(self, "periods", tuple(periods))
        for arr in (times, pos, ids):
            arr.setflags(write=False)

    @property
    def n_particles(self):
        return self.positions.shape[0]

    @property
    def n_times(self):
        return self.positions.shape[1]

    @property
    def dim(self):
        return self.positions.shape[2]

    @property
    def present(self):
        """Boolean mask of shape (n, m); True where ``x_i^t`` exists."""
        return ~np.isnan(self.positions[:, :, 0])

    @property
    def is_complete(self):
        return bool(self.present.all())

    def points_at(self, k):
        """Indices ``I_t`` and positions of the particles observed at time index ``k``."""
        idx = np.flatnonzero(self.present[:, k])
        return idx, self.positions[idx, k, :]


def index_sets(dataset):
    """Return ``(I_t per time, T_i per particle)`` as lists of index arrays.

    ``I_t`` holds particle indices observed at time index ``t``; ``T_i`` holds
    the time indices at which particle ``i`` is observed.
    """
    present = dataset.present
    I = [np.flatnonzero(present[:, k]) for k in range(dataset.n_times)]
    T = [np.flatnonzero(present[i]) for i in range(dataset.n_particles)]
    return I, T


def find_overlap_violation(present, chunk=2048):
    """First pair ``(i, j)`` never observed at a common time, or None."""
    present = np.asarray(present, dtype=bool)
    if present.all(axis=0).any():
        return None
    P = present.astype(np.float32)
    n = P.shape[0]
    for start in range(0, n, chunk):
        block = P[start:start + chunk] @ P.T
        bad = np.argwhere(block == 0)
        if bad.size:
            i, j = bad[0]
            return int(start + i), int(j)
    return None


def validate_dataset(dataset, bounds=None):
    """Check the pairwise-overlap invariant and, optionally, domain bounds."""
    pair = find_overlap_violation(dataset.present)
    if pair is not None:
        i, j = pair
        raise ValidationError(
            f"particles {dataset.particle_ids[i]} and {dataset.particle_ids[j]} "
            "are never observed at a common time")
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=float)
        pts = wrap_points(dataset.positions, dataset.periods, bounds[:, 0])
        ok = np.isnan(pts[..., 0])
        inside = np.all((pts >= bounds[:, 0] - 1e-9) & (pts <= bounds[:, 1] + 1e-9), axis=2)
        if not np.all(ok | inside):
            i, k = np.argwhere(~(ok | inside))[0]
            raise ValidationError(
                f"particle {dataset.particle_ids[i]} at time index {k} lies outside the domain")
    return dataset


def generate_trajectories(dynamics, seed_points, times, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
    """Complete dataset ``x_i^{t_k} = Phi^{t_k}(x_i)`` from a model.

    Trajectories are integrated piecewise between consecutive times from the
    unwrapped state, and stored wrapped into the fundamental domain.
    """
    seeds = np.atleast_2d(np.asarray(seed_points, dtype=float))
    times = np.asarray(times, dtype=float)
    if seeds.shape[1] != dynamics.dim:
        raise ValidationError(f"seed points have dimension {seeds.shape[1]}, expected {dynamics.dim}")
    pos = np.empty((seeds.shape[0], times.size, dynamics.dim))
    state = seeds.copy()
    pos[:, 0] = wrap_points(state, dynamics.periods, dynamics.origin)
    for k in range(1, times.size):
        try:
            if isinstance(dynamics, DiscreteMap):
                state = flow_map(dynamics, state, times[k - 1], times[k])
            else:
                state = _ode.integrate(dynamics.velocity, state, times[k - 1], times[k], rtol, atol)
        except IntegrationError as exc:
            ids = exc.particles if exc.particles is not None else []
            raise IntegrationError(
                f"{exc} (particles {list(ids)[:5]}, interval {times[k - 1]}->{times[k]})",
                time=exc.time, particles=exc.particles) from None
        pos[:, k] = wrap_points(state, dynamics.periods, dynamics.origin)
    return TrajectoryDataset(times, pos, np.arange(seeds.shape[0]),
                             tuple(dynamics.periods), np.asarray(dynamics.origin, float))


def save_trajectories(dataset, path):
    """Write ``dataset`` in the line-oriented text format (17 significant digits)."""
    with open(path, "w") as fh:
        fh.write(f"dim={dataset.dim} times=" + ",".join(f"{t:.17g}" for t in dataset.times) + "\n")
        present = dataset.present
        for i, pid in enumerate(dataset.particle_ids):
            for k in np.flatnonzero(present[i]):
                coords = " ".join(f"{v:.17g}" for v in dataset.positions[i, k])
                fh.write(f"{pid} {k} {coords}\n")


def load_trajectories(path, periods=None, origin=None):
    """Read a trajectory file; absent records become missing observations.

    Raises
    ------
    ParseError
        Malformed header or record (message carries the line number).
    ValidationError
        Two particles never observed at a common time.
    """
    records = {}
    with open(path) as fh:
        header = fh.readline()
        dim, times = _parse_header(header)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 2 + dim:
                raise ParseError(f"expected {2 + dim} fields, got {len(fields)}", lineno)
            try:
                pid, k = int(fields[0]), int(fields[1])
                x = [float(v) for v in fields[2:]]
            except ValueError:
                raise ParseError(f"cannot parse record {line!r}", lineno) from None
            if not 0 <= k < len(times):
                raise ParseError(f"time index {k} out of range", lineno)
            if not np.all(np.isfinite(x)):
                raise ParseError("non-finite coordinate", lineno)
            if (pid, k) in records:
                raise ParseError(f"duplicate record for particle {pid} at time index {k}", lineno)
            records[(pid, k)] = x
    ids = np.array(sorted({pid for pid, _ in records}), dtype=np.int64)
    row = {pid: r for r, pid in enumerate(ids)}
    pos = np.full((ids.size, len(times), dim), np.nan)
    for (pid, k), x in records.items():
        pos[row[pid], k] = x
    ds = TrajectoryDataset(np.array(times), pos, ids, periods,
                           None if origin is None else np.asarray(origin, float))
    return validate_dataset(ds)


def _parse_header(line):
    try:
        fields = dict(tok.split("=", 1) for tok in line.split())
        dim = int(fields["dim"])
        times = [float(t) for t in fields["times"].split(",")]
    except (KeyError, ValueError):
        raise ParseError(f"malformed header {line.strip()!r}", 1) from None
    if dim not in (2, 3):
        raise ParseError(f"unsupported dimension {dim}", 1)
    return dim, times


def delete_random(dataset, fraction, rng_seed):
    """Randomly remove a fraction of the non-initial-time observations.

    Each present entry at a non-initial time is deleted independently with
    probability ``fraction``.  Entries at the initial time are never deleted.
    If the pairwise-overlap invariant breaks, offending pairs get one common
    observation restored at a randomly chosen time.

    Raises
    ------
    InfeasibleError
        When no restoration can repair the overlap invariant.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValidationError("fraction must lie in [0, 1)")
    rng = np.random.default_rng(rng_seed)
    original = dataset.present
    present = original.copy()
    drop = rng.random(present.shape) < fraction
    drop[:, 0] = False
    present &= ~drop
    for _ in range(10 * dataset.n_particles + 10):
        pair = find_overlap_violation(present)
        if pair is None:
            break
        i, j = pair
        common = np.flatnonzero(original[i] & original[j])
        if common.size == 0:
            raise InfeasibleError(
                f"particles {dataset.particle_ids[i]} and {dataset.particle_ids[j]} share no time")
        k = rng.choice(common)
        present[i, k] = present[j, k] = True
    else:
        raise InfeasibleError(f"cannot delete fraction {fraction} while keeping pairwise overlap")
    pos = dataset.positions.copy()
    pos[~present] = np.nan
    return TrajectoryDataset(dataset.times, pos, dataset.particle_ids.copy(),
                             dataset.periods, dataset.origin)
