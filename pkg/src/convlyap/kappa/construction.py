"""KL bound from an overshoot certificate and a reach-time certificate.

Given ``delta`` (overshoot) and ``T(v, eps)`` (reach time) for a family of
trajectories ``Phi(s, tau)``, the construction produces ``beta`` with
``Phi(s, tau) <= beta(|s| + c0, tau)`` where ``c0 = delta^{-1}(0)``:

1. ``delta`` is replaced by its running maximum and then smoothed into a
   continuous function that is strictly increasing past its zero set.
2. For every integer radius ``i`` a broken line ``chain_i(tau)`` through
   ``(0, e_1), (1, e_1), (2, e_2), ...`` is built, where ``e_1`` is the
   overshoot level for radius ``i`` and ``e_j`` the accuracy guaranteed from
   time ``j - 1`` on. A term ``c1 * i * exp(-c2 * tau)`` makes it strictly
   decreasing.
3. ``beta_i(v, tau) = 2**i * max_{j<=i} min(chain_j(tau), xi(v))`` and ``beta``
   interpolates linearly in ``v`` between ``beta_{floor(v)+1}`` and
   ``beta_{floor(v)+2}``.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigurationError, DomainError
from .delta import (
    DeltaCertificate,
    ReachCertificate,
    monotone_envelope,
    polygonal_delta,
    reach_envelope,
    riemann_smooth,
)
from .functions import PiecewiseKappa
from .kl import GridKL, KLFunction

_LN2 = math.log(2.0)


def _regularize_delta(d: DeltaCertificate, smoothing: str) -> PiecewiseKappa:
    mono = monotone_envelope(d)
    if smoothing == "riemann":
        return riemann_smooth(mono)
    if smoothing == "polygonal":
        return polygonal_delta(mono)
    if smoothing == "none":
        return mono.as_kappa()
    raise ConfigurationError(f"unknown smoothing {smoothing!r}")


def _chain_levels(t_row: np.ndarray, eps_grid: np.ndarray, eps_x: float, n_steps: int) -> np.ndarray:
    """Levels ``e_1..e_J`` of the broken line for one radius.

    ``e_j`` for ``j >= 2`` is the smallest grid accuracy whose reach time is
    at most ``j - 1`` (the closure point of ``{eps : T(eps) in [j-1, j]}``),
    kept when that set is nonempty and replaced by ``e_{j-1}`` otherwise.
    Accuracies at or above ``eps_x`` have reach time zero, since the
    overshoot bound already holds for all times.
    """
    keep = eps_grid < eps_x
    eps = np.append(eps_grid[keep], eps_x)
    times = np.append(t_row[keep], 0.0)
    neg = -times  # nondecreasing
    levels = np.empty(n_steps)
    levels[0] = eps_x
    for j in range(2, n_steps + 1):
        first_le_j = int(np.searchsorted(neg, -float(j), side="left"))
        hit = first_le_j < eps.size and times[first_le_j] >= j - 1
        if hit:
            first_le = int(np.searchsorted(neg, -float(j - 1), side="left"))
            levels[j - 1] = min(levels[j - 2], eps[first_le])
        else:
            levels[j - 1] = levels[j - 2]
    return levels


class ConstructedKL(KLFunction):
    """The KL bound assembled from per-radius chains; exact at any ``(v, t)``.

    Parameters
    ----------
    levels : ndarray, shape (n_radii, J)
        ``levels[i-1, j-1] = e_j`` for radius ``i``.
    delta_hat : PiecewiseKappa
        Regularized overshoot function used by the clamp ``xi``.
    """

    def __init__(self, levels: np.ndarray, delta_hat: PiecewiseKappa, c1: float, c2: float):
        self.levels = np.asarray(levels, dtype=float)
        self.delta_hat = delta_hat
        self.c0 = float(delta_hat.inverse(0.0))
        self.c1 = float(c1)
        self.c2 = float(c2)
        n_steps = self.levels.shape[1]
        self._knots = np.arange(n_steps + 1, dtype=float)
        self._knot_vals = np.concatenate([self.levels[:, :1], self.levels], axis=1)

    @property
    def n_radii(self) -> int:
        return self.levels.shape[0]

    @property
    def v_max(self) -> float:
        """Largest argument for which both neighbouring radii exist."""
        return float(self.n_radii - 1) - 1e-12

    def xi(self, v):
        """Overshoot clamp: identity below ``c0``, ``delta^{-1}(v - c0)`` above."""
        v = np.asarray(v, dtype=float)
        below = v < self.c0
        shifted = np.where(below, 0.0, v - self.c0)
        return np.where(below, v, self.delta_hat.inverse(shifted))

    def chain(self, radius: int, tau):
        """Strictly decreasing broken line for the given integer radius."""
        tau = np.asarray(tau, dtype=float)
        base = np.interp(tau, self._knots, self._knot_vals[radius - 1])
        return base + self.c1 * radius * np.exp(-self.c2 * tau)

    def __call__(self, v, t):
        vv, tt = np.broadcast_arrays(np.asarray(v, dtype=float), np.asarray(t, dtype=float))
        if np.any(vv < 0) or np.any(tt < 0):
            raise DomainError("beta is defined for v >= 0, t >= 0")
        if np.any(np.floor(vv) + 2 > self.n_radii):
            raise DomainError(f"v beyond the constructed range (need v < {self.n_radii - 1})")
        flat_v, flat_t = vv.ravel(), tt.ravel()
        radii = np.arange(1, self.n_radii + 1)
        chains = np.stack([self.chain(i, flat_t) for i in radii])  # (n_radii, P)
        clamp = self.xi(flat_v)
        running = np.maximum.accumulate(np.minimum(chains, clamp[None, :]), axis=0)
        k = np.floor(flat_v).astype(int)
        cols = np.arange(flat_v.size)
        with np.errstate(divide="ignore"):
            log_lo = (k + 1) * _LN2 + np.log(running[k, cols])
            log_hi = (k + 2) * _LN2 + np.log(running[k + 1, cols])
            w_hi = flat_v - k
            w_lo = (k + 1) - flat_v
            log_beta = np.logaddexp(np.log(w_hi) + log_hi, np.log(w_lo) + log_lo)
        if np.any(log_beta > 690.0):
            raise ConfigurationError("beta exceeds 1e300; reduce the v range")
        out = np.exp(log_beta) + self.c1 * flat_v * np.exp(-self.c2 * flat_t)
        out = out.reshape(vv.shape)
        return float(out) if out.ndim == 0 else out


def build_kl_construction(
    reach: ReachCertificate,
    d: DeltaCertificate,
    c1: float = 1e-3,
    c2: float = 1.0,
    *,
    v_max: float,
    t_max: float,
    smoothing: str = "riemann",
) -> ConstructedKL:
    """Assemble the chains needed to evaluate ``beta`` on ``[0, v_max] x [0, t_max]``."""
    if c1 <= 0 or c2 <= 0:
        raise ConfigurationError("c1 and c2 must be positive")
    delta_hat = _regularize_delta(d, smoothing)
    reach = reach_envelope(reach)
    n_radii = int(math.floor(v_max)) + 2
    if reach.v_grid[-1] < n_radii:
        raise ConfigurationError(
            f"reach table covers radii up to {reach.v_grid[-1]!r}, "
            f"but v_max={v_max!r} needs radius {n_radii}"
        )
    n_steps = int(math.ceil(t_max)) + 1
    levels = np.empty((n_radii, n_steps))
    for i in range(1, n_radii + 1):
        row = int(np.searchsorted(reach.v_grid, i, side="left"))
        eps_x = float(delta_hat.inverse(float(i)))
        if not np.isfinite(eps_x):
            raise ConfigurationError(f"overshoot table too short to invert delta at radius {i}")
        levels[i - 1] = _chain_levels(reach.table[row], reach.eps_grid, eps_x, n_steps)
    return ConstructedKL(levels, delta_hat, c1, c2)


def construct_kl_from_certificate(
    reach: ReachCertificate,
    d: DeltaCertificate,
    c1: float = 1e-3,
    c2: float = 1.0,
    *,
    v_grid=None,
    t_grid=None,
    smoothing: str = "riemann",
) -> tuple[GridKL, float]:
    """Build ``beta`` and sample it on ``v_grid x t_grid``.

    Returns the sampled bound and the offset ``c0``. Defaults: ``v_grid`` spans
    the radii supported by the reach table with 50 points, ``t_grid`` is
    ``linspace(0, 20, 50)``.
    """
    if v_grid is None:
        top = math.floor(reach.v_grid[-1]) - 2
        if top <= 0:
            raise ConfigurationError("reach table must cover radius 3 or more for the default grid")
        v_grid = np.linspace(0.0, top, 50)
    if t_grid is None:
        t_grid = np.linspace(0.0, 20.0, 50)
    v_grid = np.asarray(v_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    kl = build_kl_construction(
        reach, d, c1, c2, v_max=float(v_grid[-1]), t_max=float(t_grid[-1]), smoothing=smoothing
    )
    return kl.sample(v_grid, t_grid), kl.c0
