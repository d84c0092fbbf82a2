"""Policies from Lyapunov functions, and the bounds that come with them.

Given ``L`` and a decay function ``nu``, the steepest-descent policy picks,
at each state, the action that most often achieves
``L(X+) - L(s) <= -nu(dist'(s))`` in simulation. Sandwich functions then
bound the excursion size and the time needed to enter ``G'``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .certify import hoeffding_radius
from .chain import ChainModel, GoalSet, Policy, derived_seed, simulate_batch
from .errors import ConfigurationError, ContractError
from .kappa.functions import Kappa


@dataclass(frozen=True, eq=False)
class SynthesisConfig:
    """Finite action set and Monte Carlo budget for the steepest-descent search."""

    action_candidates: np.ndarray
    n_mc_per_action: int = 64
    eta: float = 0.05

    def __post_init__(self):
        acts = np.asarray(self.action_candidates, dtype=float)
        if acts.ndim == 1:
            acts = acts[:, None]
        if acts.size == 0:
            raise ConfigurationError("need at least one action candidate")
        if self.n_mc_per_action < 1:
            raise ConfigurationError("n_mc_per_action must be at least 1")
        if not 0 <= self.eta < 1:
            raise ConfigurationError("eta must lie in [0, 1)")
        acts.setflags(write=False)
        object.__setattr__(self, "action_candidates", acts)

    @classmethod
    def grid(cls, low, high, n: int, **kw) -> "SynthesisConfig":
        """Uniform grid with ``n`` points per axis over the box ``[low, high]``."""
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        axes = [np.linspace(lo, hi, n) for lo, hi in zip(low, high)]
        pts = np.array(list(itertools.product(*axes)))
        return cls(pts, **kw)


@dataclass(frozen=True)
class Decision:
    action: np.ndarray
    index: int
    probabilities: np.ndarray
    radius: float
    flagged: bool


@dataclass(frozen=True, eq=False)
class SteepestDescentPolicy(Policy):
    """Argmax over candidates of the estimated one-step decay probability.

    All candidates at a state share the same noise draws, seeded from the
    state itself, so the policy is a deterministic function of the state.
    Ties go to the smaller action norm and then to the lower index. When no
    candidate ever decays, the one with the lowest mean ``L(X+)`` is used and
    the decision is flagged.

    ``rtol`` relaxes the decay test by ``rtol * |L(s)|`` to absorb rounding
    and series truncation. Being relative, it keeps the decision unchanged
    when ``L`` and ``nu`` are scaled together.
    """

    model: ChainModel
    goal: GoalSet
    L: Callable
    nu: Kappa
    cfg: SynthesisConfig
    seed: int
    rtol: float = 1e-9

    def decide(self, state) -> Decision:
        s = np.atleast_1d(np.asarray(state, dtype=float))
        acts = self.cfg.action_candidates
        n_a, n_mc = acts.shape[0], self.cfg.n_mc_per_action
        rng = np.random.Generator(np.random.Philox(derived_seed(self.seed, s)))
        noise = self.model.draw_noise(rng, n_mc)
        S = np.broadcast_to(s, (n_a * n_mc, s.size))
        A = np.repeat(acts, n_mc, axis=0)
        W = np.tile(noise, (n_a, 1))
        nxt = self.model.step(S, A, W)
        L_next = np.asarray(self.L(nxt), dtype=float).reshape(n_a, n_mc)
        L_s = float(self.L(s))
        drop = -float(self.nu(float(self.goal.dist_prime(s))))
        counts = np.sum(L_next - L_s <= drop + self.rtol * abs(L_s), axis=1)
        norms = np.linalg.norm(acts, axis=1)
        flagged = not np.any(counts)
        if flagged:
            order = np.lexsort((np.arange(n_a), norms, L_next.mean(axis=1)))
        else:
            order = np.lexsort((np.arange(n_a), norms, -counts))
        k = int(order[0])
        return Decision(acts[k].copy(), k, counts / n_mc, hoeffding_radius(n_mc), flagged)

    def evaluate(self, state) -> tuple[np.ndarray, float]:
        """Per-candidate decay probabilities and their Hoeffding radius."""
        d = self.decide(state)
        return d.probabilities, d.radius

    def __call__(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return np.stack([self.decide(s).action for s in states])


def steepest_descent_policy(
    model: ChainModel,
    goal: GoalSet,
    L: Callable,
    nu: Kappa,
    cfg: SynthesisConfig,
    seed: int,
    rtol: float = 1e-9,
) -> SteepestDescentPolicy:
    return SteepestDescentPolicy(model, goal, L, nu, cfg, int(seed), float(rtol))


def stability_radius(kappa_low: Kappa, kappa_up: Kappa, s0_norm: float, goal_diam: float) -> float:
    """``kappa_low^{-1}(kappa_up(|s0|)) + diam(G)``: how far trajectories can stray."""
    if not getattr(kappa_low, "is_strict", True):
        raise ContractError("kappa_low must be strictly increasing")
    return float(kappa_low.inverse(float(kappa_up(s0_norm)))) + float(goal_diam)


def reaching_time_bound(
    kappa_up: Kappa, kappa_low: Kappa, nu: Kappa, dist_s0: float, inf_dist_outside: float
) -> float:
    """Steps after which ``G'`` has been entered: ``(kappa_up(d0) - kappa_low(m)) / nu(m)``.

    ``m`` is the smallest distance to ``G`` over states outside ``G'``.
    """
    if not inf_dist_outside > 0:
        raise ConfigurationError("inf_dist_outside must be positive")
    denom = float(nu(inf_dist_outside))
    if not denom > 0:
        raise ContractError("nu must be positive outside G'")
    num = float(kappa_up(dist_s0)) - float(kappa_low(inf_dist_outside))
    return max(0.0, num / denom)


@dataclass(frozen=True)
class ReachingReport:
    s0: list
    T_L: float
    steps: int
    frequency: float
    threshold: float
    verdict: str

    def to_dict(self) -> dict:
        return {
            "state": self.s0, "T_L": self.T_L, "steps": self.steps,
            "frequency": self.frequency, "threshold": self.threshold, "verdict": self.verdict,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def verify_reaching(
    model: ChainModel,
    policy: Policy,
    goal_prime: GoalSet,
    s0,
    T_L: float,
    eta: float,
    n_traj: int,
    seed: int,
    confidence: float = 0.05,
    max_steps: int = 1000,
) -> ReachingReport:
    """Fraction of trajectories entering ``goal_prime`` within ``ceil(T_L)`` steps.

    At most ``max_steps`` are simulated. Entering within fewer steps implies
    entering within ``ceil(T_L)``, so a PASS stays valid under the cap; a
    FAIL with ``steps < ceil(T_L)`` is inconclusive.
    """
    steps = max(1, min(math.ceil(T_L), int(max_steps)))
    batch = simulate_batch(model, policy, goal_prime, s0, steps, n_traj, seed)
    with np.errstate(invalid="ignore"):
        hit = np.any(goal_prime.dist(batch.states) == 0.0, axis=1)
    freq = float(np.mean(hit))
    thr = 1.0 - eta - hoeffding_radius(n_traj, confidence)
    return ReachingReport(
        np.atleast_1d(np.asarray(s0, dtype=float)).tolist(), float(T_L), steps, freq, thr,
        "PASS" if freq >= thr else "FAIL",
    )


def jensen_gap(rho: Callable, values: Sequence[float], weights: Sequence[float]) -> float:
    """``rho(E[X]) - E[rho(X)]`` for a discrete distribution; positive for strictly concave ``rho``."""
    x = np.asarray(values, dtype=float)
    p = np.asarray(weights, dtype=float)
    p = p / p.sum()
    return float(rho(float(p @ x))) - float(p @ np.asarray(rho(x), dtype=float))
