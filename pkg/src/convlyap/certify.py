"""Empirical stabilization certificates from sampled trajectories.

Each trajectory gets its own tightest exponential bound. A single
envelope covering a prescribed fraction of them is then chosen from a
finite parameter lattice, and the outcome is quantified with Hoeffding's
inequality.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .chain import TrajectoryBatch
from .errors import ConfigurationError, ContractError
from .kappa.kl import ExponentialKL

# -- Hoeffding --------------------------------------------------------------


def hoeffding_n(eps: float, delta: float) -> int:
    """Trajectories needed so an empirical frequency is ``eps``-accurate w.p. ``1 - delta``."""
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ConfigurationError("eps and delta must lie in (0, 1)")
    return math.ceil(math.log(2.0 / delta) / (2.0 * eps * eps))


def hoeffding_radius(n: int, delta: float = 0.05) -> float:
    """Two-sided accuracy achieved by ``n`` samples at confidence ``1 - delta``."""
    if n < 1:
        raise ConfigurationError("n must be positive")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


# -- per-trajectory fits ----------------------------------------------------


@dataclass(frozen=True)
class FittedBound:
    """Exponential bound ``C * d0 * exp(-lam * t)`` fitted to one trajectory."""

    traj_id: int
    C: float
    lam: float
    valid: bool
    overshoot: bool = False

    @property
    def theta(self) -> tuple[float, float]:
        return (self.C, self.lam)


def dominates_exp(dists, d0: float, C: float, lam: float) -> bool:
    """Exact floating-point check of ``d_t <= C d0 exp(-lam t)`` for every ``t``."""
    d = np.asarray(dists, dtype=float)
    t = np.arange(d.size, dtype=float)
    return bool(np.all(d <= C * d0 * np.exp(-lam * t)))


def fit_exp_bound(
    dists,
    d0: float,
    traj_id: int = 0,
    lam_max: float = 50.0,
    lam_floor: float = 1e-3,
) -> FittedBound:
    """Tightest exponential bound for a distance sequence with ``dists[0] == d0``.

    Rates are restricted to ``[lam_floor, lam_max]``; within that range
    ``C`` is minimized first, then ``lam`` maximized. When the sequence stays
    below ``d0`` fast enough this gives ``C = 1`` and
    ``lam = min_t ln(d0/d_t)/t``. Otherwise the smallest ``C`` sits at
    ``lam_floor`` and the fit is flagged as an overshoot.
    """
    d = np.asarray(dists, dtype=float)
    if not np.all(np.isfinite(d)):
        return FittedBound(traj_id, math.inf, 0.0, False, True)
    if d0 < 0:
        raise ContractError("d0 must be nonnegative")
    if d0 == 0:
        # no multiplicative bound can cover a departure from distance zero
        zero = bool(np.all(d == 0))
        return FittedBound(traj_id, 1.0, lam_max, zero, not zero)
    t = np.arange(d.size, dtype=float)
    later, tl = d[1:], t[1:]
    lam = -math.inf
    if np.all(later < d0):
        pos = later > 0
        lam = float(np.min(np.log(d0 / later[pos]) / tl[pos])) if np.any(pos) else lam_max
        lam = min(lam, lam_max)
    if lam >= lam_floor:
        C, overshoot = 1.0, False
    else:
        lam = lam_floor
        C = max(1.0, float(np.max(d * np.exp(lam * t)) / d0))
        overshoot = True
    # rounding can leave an active constraint violated by an ulp
    for _ in range(64):
        if dominates_exp(d, d0, C, lam):
            break
        if overshoot:
            C = math.nextafter(C, math.inf)
        else:
            lam = math.nextafter(lam, 0.0)
    return FittedBound(traj_id, C, lam, dominates_exp(d, d0, C, lam), overshoot)


def fit_batch(batch: TrajectoryBatch, **kw) -> list[FittedBound]:
    """Fit every trajectory of a batch on its distances to ``G'``."""
    d0 = float(batch.goal_dists[0, 0])
    return [fit_exp_bound(batch.goal_dists[i], d0, traj_id=i, **kw) for i in range(batch.n_traj)]


def fit_batches(batches: Sequence[TrajectoryBatch], **kw) -> list[FittedBound]:
    """Fits pooled over batches from several initial states, numbered consecutively."""
    out, offset = [], 0
    for b in batches:
        for f in fit_batch(b, **kw):
            out.append(FittedBound(f.traj_id + offset, f.C, f.lam, f.valid, f.overshoot))
        offset += b.n_traj
    return out


# -- parametric families ----------------------------------------------------


@dataclass(frozen=True)
class ParametricFamily:
    """A finitely parametrized KL family with a domination predicate.

    ``dominates(theta_env, theta_fit)`` must be monotone: if an envelope
    covers a fit, any envelope that dominates it covers it too. ``lattice``
    lists candidate parameters in enumeration order (tightest first).
    """

    name: str
    lattice: Sequence[tuple]
    dominates: Callable[[tuple, tuple], bool]
    build: Callable[[tuple], object]
    xi_at_one: float = 1.0

    def candidates(self, fits: Sequence[FittedBound]) -> list[tuple]:
        return list(self.lattice)


@dataclass(frozen=True)
class ExponentialFamily(ParametricFamily):
    """``C v exp(-lam t)`` on a log-spaced box; domination is ``C' >= C, lam' <= lam``."""

    C_range: tuple = (1.0, 1e3)
    lam_range: tuple = (1e-3, 5.0)
    n_C: int = 16
    n_lam: int = 16

    @classmethod
    def default(cls, **kw) -> "ExponentialFamily":
        C_range = kw.get("C_range", (1.0, 1e3))
        lam_range = kw.get("lam_range", (1e-3, 5.0))
        n_C, n_lam = kw.get("n_C", 16), kw.get("n_lam", 16)
        Cs = np.logspace(math.log10(C_range[0]), math.log10(C_range[1]), n_C)
        lams = np.logspace(math.log10(lam_range[0]), math.log10(lam_range[1]), n_lam)
        lattice = [(float(c), float(lam)) for c in Cs for lam in lams]
        return cls(
            name="exponential",
            lattice=lattice,
            dominates=lambda env, fit: env[0] >= fit[0] and env[1] <= fit[1],
            build=lambda th: ExponentialKL(th[0], th[1]),
            xi_at_one=1.0,
            C_range=tuple(C_range),
            lam_range=tuple(lam_range),
            n_C=n_C,
            n_lam=n_lam,
        )

    def candidates(self, fits):
        """Lattice points plus in-box fit parameters, ``C`` ascending then ``lam`` descending."""
        pts = set(self.lattice)
        lo_C, hi_C = self.C_range
        lo_l, hi_l = self.lam_range
        for f in fits:
            if f.valid and lo_C <= f.C <= hi_C and lo_l <= f.lam <= hi_l:
                pts.add((f.C, f.lam))
        return sorted(pts, key=lambda p: (p[0], -p[1]))


# -- certificates -----------------------------------------------------------


_CERT_KEYS = (
    "eta",
    "eta_prime",
    "c0",
    "family",
    "theta",
    "covered_fraction",
    "n_traj",
    "confidence_radius",
    "verdict",
)


@dataclass(frozen=True)
class StabilizationCertificate:
    eta: float
    eta_prime: float
    c0: float
    family: str
    theta: tuple | None
    covered_fraction: float
    n_traj: int
    confidence_radius: float
    verdict: str
    enumeration_index: int = -1
    covered_ids: tuple = field(default=(), repr=False)

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    @property
    def envelope(self) -> ExponentialKL | None:
        if self.theta is None or self.family != "exponential":
            return None
        return ExponentialKL(*self.theta)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in _CERT_KEYS}
        d["theta"] = None if self.theta is None else list(self.theta)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "StabilizationCertificate":
        d = json.loads(text)
        missing = [k for k in _CERT_KEYS if k not in d]
        if missing:
            raise ConfigurationError(f"certificate misses fields {missing}")
        theta = None if d["theta"] is None else tuple(d["theta"])
        return cls(**{**{k: d[k] for k in _CERT_KEYS}, "theta": theta})


def lattice_offset(index: int, lambda_kappa: float, xi_at_one: float = 1.0) -> float:
    """Cumulative offset ``sum_{k=1}^{index+1} lambda_kappa**k * xi(1)``."""
    if not 0 < lambda_kappa < 1:
        raise ConfigurationError("lambda_kappa must lie in (0, 1)")
    lk = lambda_kappa
    return lk * (1.0 - lk ** (index + 1)) / (1.0 - lk) * xi_at_one


def _required(n: int, frac: float) -> int:
    # guard against (1 - 1/3) * 3 = 2.0000000000000004
    return max(0, math.ceil(frac * n - 1e-9))


def uniform_envelope(
    fits: Sequence[FittedBound],
    eta: float,
    eta_prime: float,
    family: ParametricFamily | None = None,
    lambda_kappa: float = 0.01,
    confidence: float = 0.05,
) -> StabilizationCertificate:
    """Pick the first lattice envelope that covers ``1 - eta - eta_prime`` of the fits.

    Candidates are scanned in domination order, tightest first. A candidate
    covers a fit when the family predicate says its parameters dominate the
    fit's. Invalid fits count toward ``n`` but are never covered. The offset
    ``c0`` follows a geometric schedule in the enumeration index, so it
    stays below ``lambda_kappa / (1 - lambda_kappa) * xi(1)``.
    """
    if not fits:
        raise ConfigurationError("uniform_envelope needs at least one fit")
    if not (0 <= eta < 1 and eta_prime > 0 and eta + eta_prime < 1):
        raise ConfigurationError("need 0 <= eta, eta_prime > 0 and eta + eta_prime < 1")
    family = family or ExponentialFamily.default()
    n = len(fits)
    need = _required(n, 1.0 - eta - eta_prime)
    valid = [f for f in fits if f.valid]
    radius = hoeffding_radius(n, confidence)

    cands = family.candidates(fits)
    best_frac, best_theta = 0.0, None
    # group by leading parameter; the last member of each group dominates the rest
    groups: dict = {}
    for idx, th in enumerate(cands):
        groups.setdefault(th[0], []).append((idx, th))
    for _, members in groups.items():
        loosest = members[-1][1]
        cover = sum(family.dominates(loosest, f.theta) for f in valid)
        if cover / n > best_frac:
            best_frac, best_theta = cover / n, loosest
        if cover < need:
            continue
        for idx, th in members:
            ids = tuple(f.traj_id for f in valid if family.dominates(th, f.theta))
            if len(ids) >= need:
                offset = lattice_offset(idx, lambda_kappa, family.xi_at_one)
                c0 = offset / th[0] if family.name == "exponential" else offset
                return StabilizationCertificate(
                    eta, eta_prime, c0, family.name, tuple(th), len(ids) / n, n, radius,
                    "PASS", idx, ids,
                )
    return StabilizationCertificate(
        eta, eta_prime, 0.0, family.name, best_theta, best_frac, n, radius, "FAIL"
    )


def coverage(batch: TrajectoryBatch, envelope, c0: float = 0.0) -> np.ndarray:
    """Mask of trajectories with ``dist'(x_t) <= envelope(dist'(x_0) + c0, t)`` for all ``t``."""
    d = batch.goal_dists
    t = np.arange(d.shape[1], dtype=float)
    bound = np.asarray(envelope(d[:, :1] + c0, t[None, :]), dtype=float)
    with np.errstate(invalid="ignore"):
        ok = np.all(d <= bound, axis=1)
    return ok & ~batch.diverged


# -- overshoot and mean-to-a.s. checks ----------------------------------------


@dataclass(frozen=True)
class OvershootRow:
    eps: float
    delta: float
    frequency: float
    threshold: float
    verdict: str


def check_overshoot(
    rows: Sequence[tuple[float, float, TrajectoryBatch]],
    eps0: float,
    eta: float,
    confidence: float = 0.05,
) -> list[OvershootRow]:
    """Frequency of ``{dist(X_t) <= eps for all t}`` per ``(eps, delta, batch)`` row.

    Each batch must start within ``delta`` of ``G``. Rows with ``eps < eps0``
    fall outside the condition and are reported as ``SKIP``.
    """
    out = []
    for eps, delta, batch in rows:
        d = batch.dists()
        if d[0, 0] > delta:
            raise ConfigurationError(
                f"batch starts at distance {d[0, 0]!r} > delta={delta!r} for eps={eps!r}"
            )
        if eps < eps0:
            out.append(OvershootRow(eps, delta, math.nan, math.nan, "SKIP"))
            continue
        with np.errstate(invalid="ignore"):
            hit = np.all(d <= eps, axis=1) & ~batch.diverged
        freq = float(np.mean(hit))
        thr = 1.0 - eta - hoeffding_radius(batch.n_traj, confidence)
        out.append(OvershootRow(eps, delta, freq, thr, "PASS" if freq >= thr else "FAIL"))
    return out


@dataclass(frozen=True)
class MeanToASReport:
    mean_curve: np.ndarray
    frequency: float
    radius: float
    tol: float
    mean_converged: bool
    implication_holds: bool


def mean_to_as_check(batch: TrajectoryBatch, tol: float = 1e-3, confidence: float = 0.05) -> MeanToASReport:
    """Compare mean-distance convergence with the fraction of converged trajectories.

    The implication "mean curve ends below ``tol`` => frequency at least
    ``1 - radius``" holds vacuously when the mean does not converge.
    """
    d = batch.dists()
    with np.errstate(invalid="ignore", over="ignore"):
        curve = np.where(np.isfinite(d), d, np.inf).mean(axis=0)
    freq = float(np.mean((d[:, -1] <= tol) & ~batch.diverged))
    r = hoeffding_radius(batch.n_traj, confidence)
    converged = bool(curve[-1] <= tol)
    return MeanToASReport(curve, freq, r, tol, converged, (not converged) or freq >= 1.0 - r)
