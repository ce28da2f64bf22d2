"""Batched Dormand-Prince 5(4) integrator.

All particles of a batch advance with a common step sequence.  Error control
takes the worst particle, so every trajectory meets the tolerance, and
neighbouring initial conditions see identical discretisations, which keeps
central finite differences of the numerical flow map smooth.
"""
import numpy as np

from .exceptions import IntegrationError

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B4

MAX_STEPS = 1_000_000


def _error_norm(err, y0, y1, rtol, atol):
    # max-norm against max(atol, rtol*|y|), as in MATLAB's ode45
    scale = np.maximum(atol, rtol * np.maximum(np.abs(y0), np.abs(y1)))
    return float(np.max(np.abs(err) / scale)) if err.size else 0.0


def _initial_step(y0, f0, span, rtol, atol, max_step):
    # ode45's rule: keep the first step's predicted relative change below 0.8 rtol^(1/5)
    h = min(max_step, span)
    rate = np.max(np.abs(f0) / np.maximum(np.abs(y0), atol / rtol)) / (0.8 * rtol ** 0.2)
    if h * rate > 1.0:
        h = 1.0 / rate
    return h


def integrate(f, y0, t0, t1, rtol=1e-3, atol=1e-3, max_steps=MAX_STEPS, max_step=None):
    """Integrate ``dy/dt = f(t, y)`` for a batch of states from ``t0`` to ``t1``.

    Parameters
    ----------
    f : callable
        ``f(t, y)`` with ``y`` of shape (N, d), returning the same shape.
    y0 : ndarray, shape (N, d)
    t0, t1 : float
        Start and end time; ``t1 < t0`` integrates backward.

    max_step : float, optional
        Upper bound on the step size; defaults to a tenth of ``|t1 - t0|``.

    Returns
    -------
    ndarray, shape (N, d)
        States at ``t1``.
    """
    y = np.array(y0, dtype=float, copy=True)
    if t1 == t0 or y.size == 0:
        return y
    direction = 1.0 if t1 > t0 else -1.0
    t = float(t0)
    k0 = f(t, y)
    _check_finite(k0, t)
    if max_step is None:
        max_step = 0.1 * abs(t1 - t0)
    h = _initial_step(y, k0, abs(t1 - t0), rtol, atol, max_step)
    h_min_factor = 16 * np.finfo(float).eps
    steps = 0
    while direction * (t1 - t) > 0:
        if steps >= max_steps:
            raise IntegrationError(f"maximum number of steps ({max_steps}) exceeded at t={t}", time=t)
        h_min = h_min_factor * max(abs(t), abs(t1), 1.0)
        # absorb a remainder too small to step over separately
        last = h >= abs(t1 - t) - h_min
        if last:
            h = abs(t1 - t)
        elif h < h_min:
            raise IntegrationError(f"step size underflow at t={t}", time=t)
        dt = direction * h
        k = [k0]
        for s in range(1, 7):
            ys = y + dt * sum(a * kj for a, kj in zip(_A[s], k) if a != 0.0)
            k.append(f(t + _C[s] * dt, ys))
        y_new = y + dt * sum(b * kj for b, kj in zip(_B, k) if b != 0.0)
        err = dt * sum(e * kj for e, kj in zip(_E, k))
        if not np.all(np.isfinite(y_new)):
            bad = np.flatnonzero(~np.all(np.isfinite(y_new.reshape(y.shape[0], -1)), axis=1))
            if h <= h_min_factor * max(abs(t), 1.0) * 1e3:
                raise IntegrationError(f"non-finite state at t={t}", time=t, particles=bad)
            h *= 0.2
            continue
        en = _error_norm(err, y, y_new, rtol, atol)
        steps += 1
        if en <= 1.0:
            t = float(t1) if last else t + dt
            y = y_new
            k0 = k[6]
            factor = 5.0 if en == 0 else min(5.0, 0.8 * en ** (-1 / 5))
            h = min(h * factor, max_step)
        else:
            h *= max(0.1, 0.8 * en ** (-1 / 5))
    return y


def _check_finite(v, t):
    if not np.all(np.isfinite(v)):
        raise IntegrationError(f"non-finite velocity at t={t}", time=t)
