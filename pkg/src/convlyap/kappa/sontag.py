"""Factorization ``beta(v, t) <= kappa1(kappa2(v) * exp(-t))``.

Exponential bounds factor exactly with power functions. Sampled bounds get
an upper factorization on their grid: ``kappa2`` is a power of the
``t = 0`` section and ``kappa1`` the running maximum of ``beta`` along the
combined argument ``w = kappa2(v) * exp(-t)``. The exponent is chosen to
minimize the worst ratio between the factorized value and ``beta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from .functions import Kappa, PiecewiseKappa, PowerKappa
from .kl import ExponentialKL, GridKL, KLFunction

_TINY = 1e-12


@dataclass(frozen=True)
class SontagPair:
    """``kappa1`` and ``kappa2`` plus the measured slack on the source grid.

    ``slack`` is ``max kappa1(kappa2(v) e^{-t}) / beta(v, t)`` over grid
    points with ``beta > 0``; it is exactly 1 for exponential input.
    """

    kappa1: Kappa
    kappa2: Kappa
    slack: float = 1.0
    bound: float = 10.0

    @property
    def within_bound(self) -> bool:
        return self.slack <= self.bound

    def __call__(self, v, t):
        w = np.asarray(self.kappa2(v), dtype=float) * np.exp(-np.asarray(t, dtype=float))
        return self.kappa1(w)


def _strictly_increasing(y: np.ndarray) -> np.ndarray:
    y = np.maximum.accumulate(y)
    scale = max(float(y[-1]), 1.0)
    return y + _TINY * scale * np.arange(y.size) / max(y.size - 1, 1)


def _factor_with_kappa2(values: np.ndarray, t: np.ndarray, k2_vals: np.ndarray, v: np.ndarray):
    kappa2 = PiecewiseKappa(v, k2_vals, (k2_vals[-1] - k2_vals[-2]) / (v[-1] - v[-2]))
    w = (k2_vals[:, None] * np.exp(-t)[None, :]).ravel()
    b = values.ravel()
    w_knots, inv = np.unique(w, return_inverse=True)
    top = np.zeros(w_knots.size)
    np.maximum.at(top, inv, b)
    top = _strictly_increasing(top)
    top[0] = 0.0  # w = 0 only occurs on the v = 0 row, where beta vanishes
    ext = (top[-1] - top[-2]) / (w_knots[-1] - w_knots[-2])
    kappa1 = PiecewiseKappa(w_knots, top, max(ext, _TINY))
    recon = np.asarray(kappa1(w), dtype=float)
    # guard against rounding in the interpolation at the knots
    short = recon < b
    if np.any(short):
        kappa1 = PiecewiseKappa(w_knots, top * (1 + 4 * np.finfo(float).eps), kappa1.extension_slope)
        recon = np.asarray(kappa1(w), dtype=float)
    pos = b > 0
    slack = float(np.max(recon[pos] / b[pos])) if np.any(pos) else 1.0
    return kappa1, kappa2, slack


def sontag_factorize(
    beta: KLFunction,
    slack_bound: float = 10.0,
    *,
    v_grid=None,
    t_grid=None,
    powers=None,
) -> SontagPair:
    """Factorize ``beta`` as ``kappa1(kappa2(v) * exp(-t))``.

    Exponential members factor exactly: ``kappa1(w) = w**lam`` and
    ``kappa2(v) = (C v)**(1/lam)``. Grids (or other bounds sampled on
    ``v_grid x t_grid``) get an upper factorization whose slack is reported
    and compared against ``slack_bound`` without raising.
    """
    if isinstance(beta, ExponentialKL):
        k1 = PowerKappa(1.0, beta.lam)
        k2 = PowerKappa(beta.C ** (1.0 / beta.lam), 1.0 / beta.lam)
        return SontagPair(k1, k2, 1.0, slack_bound)
    if not isinstance(beta, GridKL):
        if v_grid is None or t_grid is None:
            raise ContractError("a non-grid bound needs v_grid and t_grid for factorization")
        beta = beta.sample(v_grid, t_grid)
    ax = beta.axioms()
    if not (ax.zero_at_zero and ax.increasing_in_v and ax.decreasing_in_t):
        raise ContractError(f"input is not a KL grid: {ax}")

    v, t, values = beta.v_grid, beta.t_grid, beta.values
    if v[0] != 0.0:
        v = np.concatenate(([0.0], v))
        values = np.vstack([np.zeros((1, t.size)), values])
    sec = values[:, 0]
    norm = sec / sec[-1]
    if powers is None:
        powers = np.logspace(-2, 2, 41)

    best = None
    for p in powers:
        k2 = _strictly_increasing(norm**p)
        k2[0] = 0.0
        if not np.all(np.diff(k2) > 0):
            continue
        cand = _factor_with_kappa2(values, t, k2, v)
        if best is None or cand[2] < best[2]:
            best = cand
            best_p = p
    if best is None:
        raise ContractError("no admissible kappa2 found")
    # local refinement around the best exponent
    for p in best_p * np.logspace(-0.05, 0.05, 11):
        k2 = _strictly_increasing(norm**p)
        k2[0] = 0.0
        if np.all(np.diff(k2) > 0):
            cand = _factor_with_kappa2(values, t, k2, v)
            if cand[2] < best[2]:
                best = cand
    k1, k2, slack = best
    return SontagPair(k1, k2, slack, slack_bound)
