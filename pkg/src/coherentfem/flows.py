"""Benchmark dynamics, numerical flow maps and Cauchy-Green tensors.

Two kinds of dynamics are supported: a :class:`VectorField`, integrated with
a batched Dormand-Prince 5(4) scheme, and a :class:`DiscreteMap`, for which
"flowing to time ``t``" means ``t`` iterations of the map.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import _ode
from .exceptions import ConfigError, SingularityError, ValidationError
from .mesh import minimal_image, wrap_points

DEFAULT_RTOL = 1e-3
DEFAULT_ATOL = 1e-3
FD_STEP_FACTOR = 1e-5
SINGULAR_CONDITION = 1e14


@dataclass
class VectorField:
    """Time-dependent velocity field ``velocity(t, x)``.

    ``velocity`` must accept an array of points of shape (N, dim) and return
    velocities of the same shape.
    """

    name: str
    dim: int
    velocity: callable
    bounds: np.ndarray
    periods: tuple
    params: dict = field(default_factory=dict)
    density: callable = None

    def evaluate(self, point, time):
        x = np.atleast_2d(np.asarray(point, dtype=float))
        v = self.velocity(float(time), x)
        return v[0] if np.ndim(point) == 1 else v

    @property
    def origin(self):
        return self.bounds[:, 0]

    @property
    def extent(self):
        return self.bounds[:, 1] - self.bounds[:, 0]


@dataclass
class DiscreteMap:
    """Map on a (periodic) domain; ``forward`` and ``inverse`` act on (N, dim) arrays."""

    name: str
    dim: int
    forward: callable
    bounds: np.ndarray
    periods: tuple
    inverse: callable = None
    params: dict = field(default_factory=dict)
    density: callable = None

    @property
    def origin(self):
        return self.bounds[:, 0]

    @property
    def extent(self):
        return self.bounds[:, 1] - self.bounds[:, 0]


def _iterations(t0, t1):
    n = t1 - t0
    if abs(n - round(n)) > 1e-12:
        raise ValidationError(f"discrete maps need integer time differences, got {t0}->{t1}")
    return int(round(n))


def flow_map(dynamics, points, t0, t1, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, wrap=True):
    """Images of a batch of points under the flow from ``t0`` to ``t1``.

    With ``wrap=False`` vector-field endpoints are returned unwrapped, which
    is what finite differences across periodic seams need.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if isinstance(dynamics, DiscreteMap):
        n = _iterations(t0, t1)
        if n < 0 and dynamics.inverse is None:
            raise ValidationError(f"{dynamics.name} has no inverse")
        step = dynamics.forward if n >= 0 else dynamics.inverse
        out = pts
        for _ in range(abs(n)):
            out = step(out)
        return wrap_points(out, dynamics.periods, dynamics.origin) if wrap else out
    out = _ode.integrate(dynamics.velocity, pts, float(t0), float(t1), rtol, atol)
    if wrap:
        out = wrap_points(out, dynamics.periods, dynamics.origin)
    return out


def integrate_flow(field, x0, t0, t1, rel_tol=DEFAULT_RTOL, abs_tol=DEFAULT_ATOL):
    """Endpoint of the trajectory through ``x0`` at ``t0``, evaluated at ``t1``.

    Uses an adaptive embedded Runge-Kutta 4(5) pair; the result is wrapped
    into the fundamental domain on periodic axes.  Accepts a single point or
    an (N, dim) batch.
    """
    if t1 < t0:
        raise ValidationError("integrate_flow requires t0 <= t1")
    single = np.ndim(x0) == 1
    out = flow_map(field, x0, t0, t1, rel_tol, abs_tol)
    return out[0] if single else out


def default_fd_step(dynamics):
    return FD_STEP_FACTOR * np.asarray(dynamics.extent, dtype=float)


def flow_jacobian_fd(field, x0, t0, t1, fd_step=None, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
    """Central-difference approximation of the flow-map Jacobian.

    Column ``k`` is ``(Phi(x + h_k e_k) - Phi(x - h_k e_k)) / (2 h_k)``.  All
    stencil points of all base points are integrated as one batch.

    Parameters
    ----------
    x0 : array_like, shape (dim,) or (N, dim)
    fd_step : float or array_like, optional
        Per-axis step; defaults to ``1e-5`` times the domain extent.

    Returns
    -------
    ndarray, shape (dim, dim) or (N, dim, dim)
    """
    single = np.ndim(x0) == 1
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x.shape
    h = default_fd_step(field) if fd_step is None else np.broadcast_to(
        np.asarray(fd_step, dtype=float), (d,))
    stencil = np.repeat(x[:, None, :], 2 * d, axis=1)
    for k in range(d):
        stencil[:, 2 * k, k] += h[k]
        stencil[:, 2 * k + 1, k] -= h[k]
    images = flow_map(field, stencil.reshape(-1, d), t0, t1, rtol, atol, wrap=False)
    images = images.reshape(n, 2 * d, d)
    diff = images[:, 0::2, :] - images[:, 1::2, :]
    if isinstance(field, DiscreteMap):
        diff = minimal_image(diff, field.periods)
    jac = np.transpose(diff, (0, 2, 1)) / (2.0 * h[None, None, :])
    return jac[0] if single else jac


def inv_cauchy_green(jacobian):
    """Inverse right Cauchy-Green tensor ``J^-1 J^-T``, symmetrised.

    Raises
    ------
    SingularityError
        If a Jacobian has condition number above ``1e14``.
    """
    J = np.asarray(jacobian, dtype=float)
    single = J.ndim == 2
    J = J[None] if single else J
    cond = np.linalg.cond(J)
    bad = ~np.isfinite(cond) | (cond > SINGULAR_CONDITION)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SingularityError(f"singular flow-map Jacobian (index {i}, condition {cond[i]:.3g})")
    Jinv = np.linalg.inv(J)
    C = Jinv @ np.transpose(Jinv, (0, 2, 1))
    C = 0.5 * (C + np.transpose(C, (0, 2, 1)))
    return C[0] if single else C


# -- built-in dynamics ----------------------------------------------------

def _double_gyre(params):
    p = {"x_min": 0.0, "x_max": 1.0, "y_min": 0.0, "y_max": 1.0}
    p.update(params)

    def s(t):
        if t < 0:
            return 0.0
        if t > 1:
            return 1.0
        return t * t * (3.0 - 2.0 * t)

    def velocity(t, xy):
        x, y = xy[:, 0], xy[:, 1]
        st = s(t)
        pi = np.pi
        # psi = (1-s) sin(2 pi x) sin(pi y) + s sin(pi x) sin(2 pi y); H = -psi
        dpsi_dx = (1 - st) * 2 * pi * np.cos(2 * pi * x) * np.sin(pi * y) \
            + st * pi * np.cos(pi * x) * np.sin(2 * pi * y)
        dpsi_dy = (1 - st) * pi * np.sin(2 * pi * x) * np.cos(pi * y) \
            + st * 2 * pi * np.sin(pi * x) * np.cos(2 * pi * y)
        return np.stack([-dpsi_dy, dpsi_dx], axis=1)

    bounds = np.array([[p["x_min"], p["x_max"]], [p["y_min"], p["y_max"]]])
    return VectorField("double_gyre", 2, velocity, bounds, (None, None), p)


def _bickley(params):
    # physical units: U0 [m/s], L0 and r_e [km]; model units: Mm and days
    p = {"U0": 62.66, "L0": 1770.0, "r_e": 6371.0,
         "A1": 0.0075, "A2": 0.15, "A3": 0.3,
         "c1_factor": 0.1446, "c2_factor": 0.205, "c3_factor": 0.461,
         "period": 20.0, "y_half_width": 3.0}
    p.update(params)
    U0 = p["U0"] * 86400.0 / 1e6
    L0 = p["L0"] / 1000.0
    re = p["r_e"] / 1000.0
    A = np.array([p["A1"], p["A2"], p["A3"]])
    c = np.array([p["c1_factor"], p["c2_factor"], p["c3_factor"]]) * U0
    k = np.array([2.0, 4.0, 6.0]) / re
    p.update({"U0_model": U0, "L0_model": L0, "r_e_model": re,
              "c": tuple(c), "k": tuple(k)})

    def velocity(t, xy):
        x, y = xy[:, 0], xy[:, 1]
        sech2 = 1.0 / np.cosh(y / L0) ** 2
        th = np.tanh(y / L0)
        phase = k[None, :] * (x[:, None] - c[None, :] * t)
        cos_sum = (A[None, :] * np.cos(phase)).sum(axis=1)
        sin_sum = (A[None, :] * k[None, :] * np.sin(phase)).sum(axis=1)
        u = U0 * sech2 + 2.0 * U0 * sech2 * th * cos_sum
        v = -U0 * L0 * sech2 * sin_sum
        return np.stack([u, v], axis=1)

    w = p["y_half_width"]
    bounds = np.array([[0.0, p["period"]], [-w, w]])
    return VectorField("bickley", 2, velocity, bounds, (p["period"], None), p)


def _abc(params):
    p = {"A": math.sqrt(3.0), "B": math.sqrt(2.0), "C": 1.0}
    p.update(params)
    A, B, C = p["A"], p["B"], p["C"]

    def velocity(t, xyz):
        x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
        a = A + 0.5 * t * math.sin(math.pi * t)
        return np.stack([a * np.sin(z) + C * np.cos(y),
                         B * np.sin(x) + a * np.cos(z),
                         C * np.sin(y) + B * np.cos(x)], axis=1)

    two_pi = 2.0 * np.pi
    bounds = np.array([[0.0, two_pi]] * 3)
    return VectorField("abc", 3, velocity, bounds, (two_pi,) * 3, p)


def _standard_map_nvp(params):
    p = {"compression": 0.3, "kick": 8.0, "density_scale": 1.0 / (4.0 * np.pi ** 2)}
    p.update(params)
    eps, kick = p["compression"], p["kick"]
    two_pi = 2.0 * np.pi
    periods = (two_pi, two_pi)

    def forward(xy):
        x = xy[:, 0] + eps * np.cos(2.0 * xy[:, 0])
        y = xy[:, 1]
        out = np.stack([x + y, y + kick * np.sin(x + y)], axis=1)
        return wrap_points(out, periods)

    def inverse(xy):
        X, Y = xy[:, 0], xy[:, 1]
        y = Y - kick * np.sin(X)
        xs = X - y
        # invert x + eps cos(2x) = xs; monotone for eps < 1/2
        x = xs.copy()
        for _ in range(50):
            g = x + eps * np.cos(2.0 * x) - xs
            x = x - g / (1.0 - 2.0 * eps * np.sin(2.0 * x))
            if np.max(np.abs(g)) < 1e-15:
                break
        return wrap_points(np.stack([x, y], axis=1), periods)

    scale = p["density_scale"]

    def density(xy):
        xy = np.atleast_2d(xy)
        return scale * (np.sin(xy[:, 1] - np.pi / 2.0) + 1.0)

    bounds = np.array([[0.0, two_pi], [0.0, two_pi]])
    return DiscreteMap("standard_map_nvp", 2, forward, bounds, periods, inverse, p, density)


BUILTINS = {
    "double_gyre": _double_gyre,
    "bickley": _bickley,
    "abc": _abc,
    "standard_map_nvp": _standard_map_nvp,
}


def builtin_field(name, params=None):
    """Construct a built-in benchmark flow or map.

    Parameters
    ----------
    name : {'double_gyre', 'bickley', 'abc', 'standard_map_nvp'}
    params : dict, optional
        Overrides for the default constants.

    Raises
    ------
    ConfigError
        Unknown name or unknown parameter key.
    """
    if name not in BUILTINS:
        raise ConfigError(f"unknown field {name!r}; choose from {sorted(BUILTINS)}")
    params = dict(params or {})
    defaults = BUILTINS[name]({}).params
    unknown = set(params) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown parameters for {name}: {sorted(unknown)}")
    return BUILTINS[name](params)
