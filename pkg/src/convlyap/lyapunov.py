"""Converse Lyapunov functions estimated by simulation.

Two constructions are provided:

* the probabilistic one sums ``rho'(dist'(x_t))`` along a trajectory with
  ``rho' = kappa1^{-1}`` and takes the largest sum over trajectories that
  stay under the certificate envelope;
* the mean one averages the same series over all trajectories, with
  ``rho'`` the concave inverse of a convex majorant of ``kappa1``.

Series are truncated at a horizon that makes the discarded tail smaller
than a tolerance.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .certify import hoeffding_radius
from .chain import ChainModel, GoalSet, Policy, derived_seed, one_step, simulate_batch
from .errors import ConfigurationError, CoverageError
from .kappa.functions import Kappa, PiecewiseKappa, concave_inverse, convex_majorant
from .kappa.kl import KLFunction
from .kappa.sontag import SontagPair

KAPPA_UP_FACTOR = math.e**2 / (math.e - 1.0)


def truncation_horizon(kappa2_sup: float, tol: float) -> int:
    """Smallest ``T >= 0`` with ``kappa2_sup * e**(1 - T) / (1 - 1/e) <= tol``."""
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    if kappa2_sup <= 0:
        return 0

    def tail(T):
        return kappa2_sup * math.exp(1.0 - T) / (1.0 - math.exp(-1.0))

    T = max(0, math.ceil(1.0 - math.log(tol * (1.0 - math.exp(-1.0)) / kappa2_sup)))
    # settle rounding at the boundary
    while T > 0 and tail(T - 1) <= tol:
        T -= 1
    while tail(T) > tol:
        T += 1
    return T


def series_terms(batch_dists: np.ndarray, rho_prime: Kappa) -> np.ndarray:
    """``rho'(dist'(x_t))`` for every trajectory and time."""
    d = np.asarray(batch_dists, dtype=float)
    return np.asarray(rho_prime(d), dtype=float)


# -- probabilistic LF ---------------------------------------------------------


def prob_lf(
    state,
    model: ChainModel,
    policy: Policy,
    goal: GoalSet,
    sontag: SontagPair,
    envelope: KLFunction,
    c0_prime: float,
    n_traj: int,
    seed: int,
    *,
    horizon: int | None = None,
    tol: float = 1e-6,
) -> tuple[float, int]:
    """Largest truncated series value over covered trajectories from ``state``.

    A trajectory is covered when ``dist'(x_t) <= envelope(dist'(x_0) + c0', t)``
    at every step up to the horizon. The horizon defaults to
    :func:`truncation_horizon` with ``kappa2`` evaluated at ``dist'(x_0) + c0'``.

    Raises
    ------
    CoverageError
        If no trajectory is covered.
    """
    s = np.atleast_1d(np.asarray(state, dtype=float))
    d0 = float(goal.dist_prime(s))
    if horizon is None:
        horizon = truncation_horizon(float(sontag.kappa2(d0 + c0_prime)), tol)
    horizon = max(int(horizon), 1)
    batch = simulate_batch(model, policy, goal, s, horizon, n_traj, seed)
    d = batch.goal_dists
    t = np.arange(horizon + 1, dtype=float)
    bound = np.asarray(envelope(np.full(t.shape, d0 + c0_prime), t), dtype=float)
    with np.errstate(invalid="ignore"):
        covered = np.all(d <= bound[None, :], axis=1) & ~batch.diverged
    n_cov = int(covered.sum())
    if n_cov == 0:
        raise CoverageError(
            f"no trajectory from {s.tolist()} stays under the envelope", 0.0
        )
    terms = series_terms(d[covered], sontag.kappa1.inverse)
    sums = np.array([math.fsum(row) for row in terms])
    return float(sums.max()), n_cov


@dataclass(frozen=True, eq=False)
class ProbabilisticLF:
    """``state -> L(state)`` via :func:`prob_lf` with a per-state derived seed."""

    model: ChainModel
    policy: Policy
    goal: GoalSet
    sontag: SontagPair
    envelope: KLFunction
    c0_prime: float
    n_traj: int
    seed: int
    tol: float = 1e-6
    horizon: int | None = None

    def evaluate(self, state) -> tuple[float, int]:
        s = np.atleast_1d(np.asarray(state, dtype=float))
        return prob_lf(
            s, self.model, self.policy, self.goal, self.sontag, self.envelope,
            self.c0_prime, self.n_traj, derived_seed(self.seed, s),
            horizon=self.horizon, tol=self.tol,
        )

    def __call__(self, state) -> float:
        return self.evaluate(state)[0]


# -- mean LF ----------------------------------------------------------------


def mean_lf(
    state,
    model: ChainModel,
    policy: Policy,
    goal: GoalSet,
    rho_prime: Kappa,
    n_traj: int,
    seed: int,
    *,
    horizon: int,
) -> tuple[float, float]:
    """Monte Carlo mean of the truncated series and its standard error."""
    s = np.atleast_1d(np.asarray(state, dtype=float))
    batch = simulate_batch(model, policy, goal, s, max(int(horizon), 1), n_traj, seed)
    sums = np.array([math.fsum(r) for r in series_terms(batch.goal_dists, rho_prime)])
    se = float(sums.std(ddof=1) / math.sqrt(n_traj)) if n_traj > 1 else 0.0
    return float(math.fsum(sums) / n_traj), se


@dataclass(frozen=True)
class MeanKappas:
    rho_prime: PiecewiseKappa
    kappa1_convex: PiecewiseKappa
    kappa_low: PiecewiseKappa
    kappa_up: Kappa
    nu: PiecewiseKappa


def mean_lf_kappas(sontag: SontagPair, vbar: float, w_grid) -> MeanKappas:
    """``rho'`` for the mean LF: invert a convex majorant of ``kappa1``.

    ``kappa1`` is sampled on ``w_grid`` (which must start at 0), majorized
    by a convex function on ``[vbar, inf)`` and inverted.
    """
    w = np.asarray(w_grid, dtype=float)
    if w[0] != 0.0:
        raise ConfigurationError("w_grid must start at 0")
    k1 = sontag.kappa1
    if not isinstance(k1, PiecewiseKappa):
        k1 = PiecewiseKappa.sample(k1, w)
    conv = convex_majorant(k1, vbar)
    rho = concave_inverse(conv)
    return MeanKappas(rho, conv, rho, sontag.kappa2.scaled(KAPPA_UP_FACTOR), rho)


# -- estimates --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LyapunovEstimate:
    """Sampled values of ``L`` with their sandwich and decay functions.

    ``values`` maps a state tuple to ``(L, aux)``; ``aux`` is the covered
    count for the probabilistic kind and the standard error for the mean kind.
    """

    kind: str
    sontag: SontagPair
    rho_prime: Kappa
    kappa_low: Kappa
    kappa_up: Kappa
    nu: Kappa
    horizon_T: int
    c0_prime: float
    goal: GoalSet
    values: dict = field(default_factory=dict)

    def sandwich(self, slack_sigmas: float = 3.0) -> dict:
        """Per-state ``(lower, L, upper, ok)``; the mean kind gets ``slack_sigmas`` standard errors."""
        out = {}
        for s, (L, aux) in self.values.items():
            d = float(self.goal.dist_prime(np.asarray(s)))
            lo = float(self.kappa_low(d))
            hi = float(self.kappa_up(d + self.c0_prime))
            slack = slack_sigmas * aux if self.kind == "mean" else 0.0
            out[s] = (lo, L, hi, lo - slack <= L <= hi + slack)
        return out

    def sandwich_ok(self, slack_sigmas: float = 3.0) -> bool:
        return all(r[3] for r in self.sandwich(slack_sigmas).values())


def estimate_prob_lf(lf: ProbabilisticLF, states: Sequence) -> LyapunovEstimate:
    """Evaluate a probabilistic LF at ``states`` and bundle its sandwich functions."""
    vals = {}
    horizons = []
    for s in states:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        vals[tuple(s.tolist())] = lf.evaluate(s)
        d0 = float(lf.goal.dist_prime(s))
        horizons.append(lf.horizon or truncation_horizon(float(lf.sontag.kappa2(d0 + lf.c0_prime)), lf.tol))
    rho_k = _InverseKappa(lf.sontag.kappa1)
    return LyapunovEstimate(
        "probabilistic", lf.sontag, rho_k, rho_k, lf.sontag.kappa2.scaled(KAPPA_UP_FACTOR), rho_k,
        max(horizons) if horizons else 0, lf.c0_prime, lf.goal, vals,
    )


def estimate_mean_lf(
    states: Sequence,
    model: ChainModel,
    policy: Policy,
    goal: GoalSet,
    sontag: SontagPair,
    kappas: MeanKappas,
    n_traj: int,
    seed: int,
    horizon: int,
) -> LyapunovEstimate:
    vals = {}
    for s in states:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        vals[tuple(s.tolist())] = mean_lf(
            s, model, policy, goal, kappas.rho_prime, n_traj, derived_seed(seed, s), horizon=horizon
        )
    return LyapunovEstimate(
        "mean", sontag, kappas.rho_prime, kappas.kappa_low, kappas.kappa_up, kappas.nu,
        int(horizon), 0.0, goal, vals,
    )


@dataclass(frozen=True)
class _InverseKappa:
    """``kappa^{-1}`` presented as a comparison function."""

    base: Kappa

    def __call__(self, v):
        return self.base.inverse(v)

    def inverse(self, y):
        return self.base(y)

    def scaled(self, factor: float):
        return _ScaledKappa(self, factor)


@dataclass(frozen=True)
class _ScaledKappa:
    base: Kappa
    factor: float

    def __call__(self, v):
        return self.factor * np.asarray(self.base(v), dtype=float)

    def inverse(self, y):
        return self.base.inverse(np.asarray(y, dtype=float) / self.factor)

    def scaled(self, factor: float):
        return _ScaledKappa(self.base, self.factor * factor)


# -- tabulated LF -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TabulatedLF:
    """``L`` tabulated on a rectilinear state grid, multilinear in between.

    Outside the grid the nearest boundary value is used.
    """

    axes: tuple
    table: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(np.asarray(a, dtype=float) for a in self.axes))
        object.__setattr__(self, "table", np.asarray(self.table, dtype=float))
        if not np.all(np.isfinite(self.table)):
            raise ConfigurationError("tabulated L must be finite everywhere")
        interp = RegularGridInterpolator(self.axes, self.table, bounds_error=False, fill_value=None)
        object.__setattr__(self, "_interp", interp)

    @classmethod
    def from_function(cls, fn: Callable, axes: Sequence) -> "TabulatedLF":
        axes = [np.asarray(a, dtype=float) for a in axes]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        flat = mesh.reshape(-1, len(axes))
        vals = np.array([fn(p) for p in flat]).reshape(mesh.shape[:-1])
        return cls(tuple(axes), vals)

    def __call__(self, states):
        s = np.asarray(states, dtype=float)
        pts = np.clip(s.reshape(-1, len(self.axes)), [a[0] for a in self.axes], [a[-1] for a in self.axes])
        out = self.scale * self._interp(pts)
        return float(out[0]) if s.ndim <= 1 else out.reshape(s.shape[:-1])

    def scaled(self, factor: float) -> "TabulatedLF":
        return TabulatedLF(self.axes, self.table, self.scale * factor)


# -- decay verification -----------------------------------------------------


@dataclass(frozen=True)
class DecayReport:
    """Per-state decay verdicts; ``skipped`` lists states inside ``G'``."""

    kind: str
    rows: tuple
    skipped: tuple = ()

    @property
    def verdict(self) -> str:
        return "PASS" if all(r["verdict"] == "PASS" for r in self.rows) else "FAIL"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "verdict": self.verdict,
            "rows": list(self.rows),
            "skipped": [{"state": s, "note": "inside G'"} for s in self.skipped],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        stat = "frequency" if self.kind == "probabilistic" else "residual"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "dist_prime", stat, "threshold", "verdict"])
        for r in self.rows:
            state = " ".join(repr(x) for x in r["state"])
            w.writerow([state, repr(r["dist_prime"]), repr(r[stat]), repr(r["threshold"]), r["verdict"]])
        return buf.getvalue()


def verify_decay_prob(
    model: ChainModel,
    policy: Policy,
    goal: GoalSet,
    L: Callable,
    nu: Kappa,
    eta: float,
    eta_prime: float,
    test_states: Sequence,
    n_mc: int,
    seed: int,
    *,
    slack: float = 1e-6,
    confidence: float = 0.05,
) -> DecayReport:
    """Frequency of ``L(X+) - L(s) <= -nu(dist'(s)) + slack`` over one-step successors.

    ``slack`` absorbs the series truncation error of ``L``; use the same
    tolerance that fixed its horizon. Successors where ``L`` cannot be
    evaluated (no covered trajectory) count as failures.
    """
    rows, skipped = [], []
    thr = 1.0 - eta - eta_prime - hoeffding_radius(n_mc, confidence)
    for k, s in enumerate(test_states):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        d = float(goal.dist_prime(s))
        if d == 0.0:
            skipped.append(s.tolist())
            continue
        L_s = float(L(s))
        target = -float(nu(d)) + slack
        succ = one_step(model, policy, np.repeat(s[None, :], n_mc, axis=0), derived_seed(seed, k))
        hits = 0
        for x in succ:
            try:
                hits += float(L(x)) - L_s <= target
            except CoverageError:
                pass
        freq = hits / n_mc
        rows.append({
            "state": s.tolist(), "dist_prime": d, "frequency": freq, "threshold": thr,
            "verdict": "PASS" if freq >= thr else "FAIL",
        })
    return DecayReport("probabilistic", tuple(rows), tuple(skipped))


def verify_decay_mean(
    model: ChainModel,
    policy: Policy,
    goal: GoalSet,
    rho_prime: Kappa,
    test_states: Sequence,
    n_mc: int,
    seed: int,
    *,
    horizon: int,
    sigmas: float = 3.0,
) -> DecayReport:
    """Check ``E[L(X_1)] - L(s) + rho'(dist'(s)) = 0`` by simulation.

    ``L(s)`` sums times ``0..T+1`` on one batch. ``L(X_1)`` is estimated from
    an independent batch started at ``s`` by summing times ``1..T+1``, which
    by the Markov property is the series from the successor truncated at the
    same absolute time. Summation is exact (``math.fsum``) so the residual is
    exactly zero when both batches coincide, as for noise-free chains.
    """
    rows, skipped = [], []
    T = int(horizon)
    for k, s in enumerate(test_states):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        d = float(goal.dist_prime(s))
        if d == 0.0:
            skipped.append(s.tolist())
            continue
        a = simulate_batch(model, policy, goal, s, T + 1, n_mc, derived_seed(seed, k, 0))
        b = simulate_batch(model, policy, goal, s, T + 1, n_mc, derived_seed(seed, k, 1))
        ta = series_terms(a.goal_dists, rho_prime)
        tb = series_terms(b.goal_dists[:, 1:], rho_prime)
        r0 = float(rho_prime(d))
        residual = math.fsum(np.concatenate([tb.ravel(), -ta.ravel(), np.full(n_mc, r0)])) / n_mc
        sa, sb = ta.sum(axis=1), tb.sum(axis=1)
        se = math.sqrt((sa.var(ddof=1) + sb.var(ddof=1)) / n_mc) if n_mc > 1 else 0.0
        thr = sigmas * se
        rows.append({
            "state": s.tolist(), "dist_prime": d, "residual": residual, "threshold": thr,
            "verdict": "PASS" if abs(residual) <= thr else "FAIL",
        })
    return DecayReport("mean", tuple(rows), tuple(skipped))
