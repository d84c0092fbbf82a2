"""Overshoot and reach-time certificates, and their regularizations.

``DeltaCertificate`` tabulates an overshoot bound: starting within distance
``delta(eps)`` of the goal keeps the trajectory within ``eps`` forever.
``ReachCertificate`` tabulates a reach time ``T(v, eps)``: from the ball of
radius ``v`` the trajectory is within ``eps`` for every time ``>= T(v, eps)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, ContractError
from .functions import PiecewiseKappa, chi


@dataclass(frozen=True, eq=False)
class DeltaCertificate:
    """Table of ``(eps, delta)`` pairs with ``delta <= eps``."""

    eps: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        eps = np.array(self.eps, dtype=float)
        delta = np.array(self.delta, dtype=float)
        eps.setflags(write=False)
        delta.setflags(write=False)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "delta", delta)
        if eps.ndim != 1 or delta.shape != eps.shape:
            raise ContractError("eps and delta must be 1-D arrays of equal length")
        if eps.size == 0:
            return
        if np.any(eps < 0) or np.any(np.diff(eps) <= 0):
            raise ContractError("eps must be nonnegative and strictly increasing")
        if np.any(delta < 0):
            raise ContractError("delta must be nonnegative")
        if np.any(delta > eps):
            raise ContractError("an overshoot certificate needs delta(eps) <= eps")

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.delta) >= 0))

    @property
    def v0(self) -> float:
        """Right edge of the closure of the zero set of the monotone envelope."""
        if self.eps.size == 0:
            raise ContractError("empty delta table")
        env = np.maximum.accumulate(self.delta)
        zeros = np.flatnonzero(env == 0.0)
        return float(self.eps[zeros[-1]]) if zeros.size else 0.0

    @property
    def c0(self) -> float:
        """The argument offset ``delta^{-1}(0)``; equals ``v0`` after regularization."""
        return self.v0

    def as_kappa(self) -> PiecewiseKappa:
        """Piecewise-linear interpolation of a monotone table starting at ``eps = 0``."""
        if not self.is_monotone:
            raise ContractError("run monotone_envelope first")
        if self.eps.size == 0 or self.eps[0] != 0.0:
            raise ConfigurationError("delta table must start at eps = 0")
        slope = 0.0
        if self.eps.size > 1:
            slope = (self.delta[-1] - self.delta[-2]) / (self.eps[-1] - self.eps[-2])
        return PiecewiseKappa(self.eps, self.delta, slope)


def monotone_envelope(d: DeltaCertificate) -> DeltaCertificate:
    """Running maximum of ``delta`` over ``eps``."""
    if d.eps.size == 0:
        raise ContractError("monotone_envelope of an empty table")
    return DeltaCertificate(d.eps, np.maximum.accumulate(d.delta))


def riemann_smooth(d: DeltaCertificate) -> PiecewiseKappa:
    """``(1/(eps+1)) * int_0^eps delta``, integrated exactly for the linear interpolant.

    The result vanishes exactly where ``delta`` does, lies below ``delta``,
    and is strictly increasing past the zero set.
    """
    if d.eps.size and not d.is_monotone:
        raise ContractError("riemann_smooth needs a monotone delta; run monotone_envelope first")
    base = d.as_kappa()
    eps, dl = base.v, base.y
    increments = 0.5 * (dl[1:] + dl[:-1]) * np.diff(eps)
    integral = np.concatenate(([0.0], np.cumsum(increments)))
    smooth = integral / (eps + 1.0)
    # ratio of two rounded quantities; the exact values are nondecreasing
    smooth = np.maximum.accumulate(smooth)
    slope = 0.0
    if eps.size > 1:
        slope = (smooth[-1] - smooth[-2]) / (eps[-1] - eps[-2])
    return PiecewiseKappa(eps, smooth, slope)


def polygonal_delta(d: DeltaCertificate | PiecewiseKappa) -> PiecewiseKappa:
    """Broken-line lower bound through ``(0, d1), (1, d1), (2, d2), ...``.

    ``d_{k+1}`` is the infimum of the interpolated ``delta`` over ``[k, k+1]``.
    Any nondecreasing piecewise-linear function is accepted in place of a
    certificate table.
    """
    base = d if isinstance(d, PiecewiseKappa) else d.as_kappa()
    n_units = int(np.floor(base.v[-1]))
    if n_units < 1:
        raise ConfigurationError("delta table must cover at least the unit interval")
    d_vals = []
    for k in range(n_units):
        inside = base.v[(base.v >= k) & (base.v <= k + 1)]
        pts = np.concatenate(([k, k + 1], inside))
        d_vals.append(float(np.min(base(pts))))
    knots = np.arange(n_units + 1, dtype=float)
    values = np.array([d_vals[0]] + d_vals)
    slope = 0.0 if n_units < 2 else values[-1] - values[-2]
    return PiecewiseKappa(knots, values, slope)


def polygonal_chain_value(levels, tau):
    """Evaluate ``levels[0] + sum_i (levels[i] - levels[i-1]) * chi(tau - i)``.

    This is the closed form of the broken line through ``(0, l1), (1, l1),
    (2, l2), ...``; it is used as an independent check of the knot-based
    representation.
    """
    lv = np.asarray(levels, dtype=float)
    t = np.asarray(tau, dtype=float)
    out = np.full(t.shape, lv[0])
    for i in range(1, lv.size):
        out = out + (lv[i] - lv[i - 1]) * chi(t - i)
    return out


@dataclass(frozen=True, eq=False)
class ReachCertificate:
    """Reach times ``T[i, k] = T(v_grid[i], eps_grid[k])``; ``inf`` marks unreached."""

    v_grid: np.ndarray
    eps_grid: np.ndarray
    table: np.ndarray

    def __post_init__(self):
        v = np.array(self.v_grid, dtype=float)
        e = np.array(self.eps_grid, dtype=float)
        t = np.array(self.table, dtype=float)
        for arr in (v, e, t):
            arr.setflags(write=False)
        object.__setattr__(self, "v_grid", v)
        object.__setattr__(self, "eps_grid", e)
        object.__setattr__(self, "table", t)
        if t.shape != (v.size, e.size):
            raise ConfigurationError(f"table shape {t.shape} != ({v.size}, {e.size})")
        if np.any(v < 0) or np.any(np.diff(v) <= 0):
            raise ContractError("v_grid must be nonnegative and strictly increasing")
        if np.any(e <= 0) or np.any(np.diff(e) <= 0):
            raise ContractError("eps_grid must be positive and strictly increasing")
        if np.any(np.isnan(t)) or np.any(t < 0):
            raise ContractError("reach times must be nonnegative (inf allowed)")

    @property
    def is_monotone(self) -> bool:
        t = self.table
        with np.errstate(invalid="ignore"):
            in_v = np.all((np.diff(t, axis=0) >= 0) | np.isinf(t[1:]))
            in_eps = np.all((np.diff(t, axis=1) <= 0) | np.isinf(t[:, :-1]))
        return bool(in_v and in_eps)


def reach_envelope(r: ReachCertificate) -> ReachCertificate:
    """Smallest table above ``r`` that is nondecreasing in v and nonincreasing in eps."""
    t = np.maximum.accumulate(r.table, axis=0)
    t = np.maximum.accumulate(t[:, ::-1], axis=1)[:, ::-1]
    return ReachCertificate(r.v_grid, r.eps_grid, t)
