"""Controlled Markov chains, goal sets, policies and seeded trajectory batches.

Randomness enters only through noise draws. Each trajectory owns a Philox
stream keyed by ``(seed, trajectory index)``, so batches are reproducible
bit for bit and independent of how trajectories are scheduled.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError

Array = np.ndarray


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trajectory ``index`` of a batch seeded with ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def derived_seed(seed: int, *keys) -> int:
    """Deterministic 64-bit sub-seed from a base seed and integer or float keys."""
    words = []
    for k in keys:
        if isinstance(k, (float, np.floating)):
            words.extend(np.frombuffer(np.float64(k).tobytes(), dtype=np.uint32).tolist())
        elif isinstance(k, np.ndarray):
            arr = np.ascontiguousarray(k, dtype=np.float64)
            words.extend(np.frombuffer(arr.tobytes(), dtype=np.uint32).tolist())
        else:
            words.append(int(k) & 0xFFFFFFFF)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(words))
    return int(ss.generate_state(2, dtype=np.uint64)[0])


# -- models -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChainModel:
    """A controlled chain ``s+ = step(s, a, w)`` with uniform box noise.

    ``step`` is vectorized: it takes ``(N, n)`` states, ``(N, m)`` actions and
    ``(N, n)`` noise draws and returns ``(N, n)`` successors.
    """

    dim: int
    action_dim: int
    step: Callable[[Array, Array, Array], Array]
    wbar: float = 0.0

    def __post_init__(self):
        if self.dim < 1 or self.action_dim < 1:
            raise ConfigurationError("state and action dimensions must be positive")
        if not (self.wbar >= 0 and math.isfinite(self.wbar)):
            raise ConfigurationError("wbar must be a finite nonnegative number")

    def draw_noise(self, rng: np.random.Generator, count: int) -> Array:
        """``count`` draws uniform on ``[-wbar, wbar]^n`` (zeros when ``wbar = 0``)."""
        if self.wbar == 0.0:
            return np.zeros((count, self.dim))
        return rng.uniform(-self.wbar, self.wbar, size=(count, self.dim))


@dataclass(frozen=True, eq=False)
class LinearChain(ChainModel):
    """``s+ = F s + G a + w``."""

    F: Array = field(default=None)
    G: Array = field(default=None)

    def to_dict(self) -> dict:
        return {"F": self.F.tolist(), "G": self.G.tolist(), "wbar": self.wbar}


def linear_uniform_chain(F, G, wbar: float = 0.0) -> LinearChain:
    """Linear chain with noise uniform on ``[-wbar, wbar]^n``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    G = np.asarray(G, dtype=float)
    if G.ndim < 2:
        G = G.reshape(F.shape[0], -1)
    if F.shape[0] != F.shape[1]:
        raise ConfigurationError(f"F must be square, got shape {F.shape}")
    if G.shape[0] != F.shape[0]:
        raise ConfigurationError(f"G has {G.shape[0]} rows, F has {F.shape[0]}")
    F.setflags(write=False)
    G.setflags(write=False)

    def step(s, a, w):
        return s @ F.T + a @ G.T + w

    return LinearChain(F.shape[0], G.shape[1], step, float(wbar), F, G)


# -- goals ------------------------------------------------------------------


@dataclass(frozen=True)
class GoalSet:
    """Origin-centred ball of ``radius``; ``inflation`` widens it to ``G'``."""

    radius: float = 0.0
    inflation: float = 0.0

    def __post_init__(self):
        if self.radius < 0 or self.inflation < 0:
            raise ConfigurationError("goal radius and inflation must be nonnegative")

    def dist(self, states) -> Array:
        """Distance to ``G`` for states of shape ``(..., n)``."""
        norms = np.linalg.norm(np.asarray(states, dtype=float), axis=-1)
        return np.maximum(0.0, norms - self.radius)

    def dist_prime(self, states) -> Array:
        """Distance to ``G'``."""
        norms = np.linalg.norm(np.asarray(states, dtype=float), axis=-1)
        return np.maximum(0.0, norms - self.radius - self.inflation)

    def inflated(self, inflation: float) -> "GoalSet":
        return GoalSet(self.radius, inflation)

    @property
    def outer(self) -> "GoalSet":
        """``G'`` viewed as a goal in its own right."""
        return GoalSet(self.radius + self.inflation, 0.0)


# -- policies ---------------------------------------------------------------


class Policy:
    """Deterministic Markov policy mapping ``(N, n)`` states to ``(N, m)`` actions."""

    def __call__(self, states: Array) -> Array:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class LinearFeedback(Policy):
    """``a = K s``."""

    K: Array

    def __post_init__(self):
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))

    def __call__(self, states):
        return np.asarray(states, dtype=float) @ self.K.T


@dataclass(frozen=True, eq=False)
class Lookup(Policy):
    """Wraps a function of a single state ``(n,) -> (m,)``."""

    fn: Callable[[Array], Array]

    def __call__(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return np.stack([np.atleast_1d(np.asarray(self.fn(s), dtype=float)) for s in states])


# -- batches ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """``n_traj`` sampled trajectories of length ``horizon + 1`` from one initial state."""

    initial_state: Array
    horizon: int
    seed: int
    states: Array  # (n_traj, T+1, n)
    goal_dists: Array  # (n_traj, T+1), distances to G'
    diverged: Array  # (n_traj,) bool
    goal: GoalSet

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    def dists(self) -> Array:
        """Distances to ``G`` (not inflated)."""
        return self.goal.dist(self.states)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.states.shape[2]
        w.writerow(["traj_id", "t"] + [f"s{k}" for k in range(n)] + ["goal_dist"])
        for i in range(self.n_traj):
            for t in range(self.horizon + 1):
                row = [i, t] + [repr(float(x)) for x in self.states[i, t]]
                w.writerow(row + [repr(float(self.goal_dists[i, t]))])
        return buf.getvalue()

    @staticmethod
    def read_csv(text: str) -> tuple[Array, Array]:
        """Parse exported CSV back into ``(states, goal_dists)`` arrays."""
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        n = len(header) - 3
        ids = np.array([int(r[0]) for r in body])
        ts = np.array([int(r[1]) for r in body])
        vals = np.array([[float(x) for x in r[2:]] for r in body])
        n_traj, n_t = ids.max() + 1, ts.max() + 1
        states = np.empty((n_traj, n_t, n))
        dists = np.empty((n_traj, n_t))
        states[ids, ts] = vals[:, :n]
        dists[ids, ts] = vals[:, n]
        return states, dists


def simulate_batch(
    model: ChainModel,
    policy: Policy,
    goal: GoalSet,
    s0,
    horizon: int,
    n_traj: int,
    seed: int,
) -> TrajectoryBatch:
    """Simulate ``n_traj`` closed-loop trajectories from ``s0``.

    Trajectory ``i`` draws its noise from :func:`trajectory_rng` ``(seed, i)``,
    so the batch does not depend on evaluation order. Non-finite states mark
    the trajectory as diverged; the values are kept.
    """
    if horizon < 1 or n_traj < 1:
        raise ConfigurationError("horizon and n_traj must be at least 1")
    s0 = np.atleast_1d(np.asarray(s0, dtype=float))
    if s0.shape != (model.dim,):
        raise ConfigurationError(f"initial state has shape {s0.shape}, model dim is {model.dim}")
    noise = np.empty((n_traj, horizon, model.dim))
    for i in range(n_traj):
        noise[i] = model.draw_noise(trajectory_rng(seed, i), horizon)
    states = np.empty((n_traj, horizon + 1, model.dim))
    states[:, 0] = s0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(horizon):
            cur = states[:, t]
            states[:, t + 1] = model.step(cur, policy(cur), noise[:, t])
    diverged = ~np.all(np.isfinite(states), axis=(1, 2))
    with np.errstate(over="ignore", invalid="ignore"):
        gd = goal.dist_prime(states)
    return TrajectoryBatch(s0, int(horizon), int(seed), states, gd, diverged, goal)


def one_step(model: ChainModel, policy: Policy, states, seed: int) -> Array:
    """One noisy transition for each row of ``states`` (row ``i`` uses stream ``i``)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    noise = np.concatenate([model.draw_noise(trajectory_rng(seed, i), 1) for i in range(states.shape[0])])
    return model.step(states, policy(states), noise)
