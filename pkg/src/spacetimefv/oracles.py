"""Closed-form and characteristics-based exact solutions for the studies.

These are written directly from the classical solution formulas, not from
any solver machinery, so convergence tables measure the solver against an
independent target.  Every oracle is a callable (t, x) -> values with the
spatial argument following the scenario convention: plain arrays on the
circle, trailing pairs on the torus.
"""

from __future__ import annotations

import numpy as np

from .scenarios import InitialCondition, Scenario, rational_velocity

__all__ = [
    "OracleDomainError",
    "exact_burgers_oracle",
    "make_oracle",
    "smooth_shock_time",
]

CHARACTERISTIC_TOL = 1e-13
_DERIVATIVE_GRID = 8192
_FD_STEP = 1e-7


class OracleDomainError(ValueError):
    """Query outside the validity window of a closed-form solution."""


def smooth_shock_time(u0) -> float:
    """First characteristic crossing time of smooth periodic data.

    Estimated as -1 / min u0' with the derivative sampled by central
    differences on a fine periodic grid; infinite for nondecreasing data.
    """
    x = np.linspace(0.0, 1.0, _DERIVATIVE_GRID, endpoint=False)
    slope = (u0(x + _FD_STEP) - u0(x - _FD_STEP)) / (2.0 * _FD_STEP)
    worst = float(np.min(slope))
    return np.inf if worst >= 0.0 else -1.0 / worst


def _characteristics(u0, t: float, x, t_star: float):
    if t >= t_star:
        raise OracleDomainError(
            "smooth branch queried at t=%.17g past the crossing time %.17g"
            % (t, t_star))
    x = np.asarray(x, dtype=float)
    u = np.asarray(u0(x), dtype=float).copy()
    # Newton on u - u0(x - u t) = 0; the derivative stays positive before
    # characteristics cross, so the iteration is uniformly contracting.
    for _ in range(80):
        y = x - u * t
        f = u - u0(y)
        if float(np.max(np.abs(f))) <= CHARACTERISTIC_TOL:
            break
        slope = (u0(y + _FD_STEP) - u0(y - _FD_STEP)) / (2.0 * _FD_STEP)
        u = u - f / (1.0 + t * slope)
    f = u - u0(x - u * t)
    if float(np.max(np.abs(f))) > CHARACTERISTIC_TOL:
        raise OracleDomainError(
            "characteristic fixed point stalled at residual %.3g"
            % float(np.max(np.abs(f))))
    return u


def _two_front(t: float, x, left: float, right: float, jump: float):
    """Piecewise solution of circle data: left state on [0, jump), right after.

    The downward jump at x=jump becomes a shock with speed (left + right)/2;
    the upward jump at the periodic seam x=0 opens a rarefaction fan.  The
    form stays valid until the fan head reaches the shock.
    """
    if not (left > right):
        raise OracleDomainError("two-front form needs a downward interior jump")
    shock_speed = 0.5 * (left + right)
    collision = (jump - 0.0) / (left - shock_speed) if left > shock_speed else np.inf
    if t >= collision:
        raise OracleDomainError(
            "two-front form queried at t=%.17g past the fan-shock collision %.17g"
            % (t, collision))
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    shock = jump + shock_speed * t
    if shock >= 1.0:
        raise OracleDomainError(
            "two-front shock left the chart window at t=%.17g" % t)
    fan_lo = right * t
    fan_hi = left * t
    if t == 0.0:
        return np.where(x < jump, left, right)
    u = np.where(x < shock, left, right)
    # Fan spans [right t, left t]; for the shipped data right = 0 keeps the
    # fan inside the chart, and the wrapped seam carries the right state.
    in_fan = (x >= fan_lo) & (x < fan_hi)
    u = np.where(in_fan, x / t, u)
    u = np.where(x < fan_lo, right, u)
    return u


def exact_burgers_oracle(initial: InitialCondition, t: float, x):
    """Exact Burgers values for one of the shipped initial-data kinds."""
    if initial.oracle == "burgers-smooth":
        return _characteristics(initial.fn, t, x, smooth_shock_time(initial.fn))
    if initial.oracle == "burgers-two-front":
        return _two_front(t, x, initial.params["left"], initial.params["right"],
                          initial.params["jump"])
    if initial.oracle == "constant":
        x = np.asarray(x, dtype=float)
        return np.full_like(x, initial.params["value"])
    raise ValueError("no closed-form Burgers solution for initial data %r"
                     % initial.name)


def _translation_oracle(initial: InitialCondition, velocities):
    a = float(rational_velocity(velocities[0]))
    b = float(rational_velocity(velocities[1]))

    def fn(t, x):
        x = np.asarray(x, dtype=float)
        shifted = np.empty_like(x)
        shifted[..., 0] = np.mod(x[..., 0] - a * t, 1.0)
        shifted[..., 1] = np.mod(x[..., 1] - b * t, 1.0)
        return initial.fn(shifted)

    return fn


def make_oracle(scenario: Scenario, initial: InitialCondition):
    """Exact-solution callable (t, x) for the pair, or None when absent."""
    if initial.oracle is None:
        return None
    if initial.oracle == "translation":
        return _translation_oracle(initial, scenario.velocities)
    if initial.oracle == "constant":
        if scenario.dim == 1:
            return lambda t, x: np.full_like(np.asarray(x, dtype=float),
                                             initial.params["value"])
        return lambda t, x: np.full(np.asarray(x, dtype=float).shape[:-1],
                                    initial.params["value"])
    if initial.oracle in ("burgers-smooth", "burgers-two-front"):
        cached_star = (smooth_shock_time(initial.fn)
                       if initial.oracle == "burgers-smooth" else None)

        def fn(t, x):
            if initial.oracle == "burgers-smooth":
                return _characteristics(initial.fn, t, x, cached_star)
            return exact_burgers_oracle(initial, t, x)

        return fn
    raise ValueError("unknown oracle kind %r" % initial.oracle)
