"""Two-argument KL bounds: sampled grids and parametric members."""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..errors import ContractError, DomainError


class KLFunction(ABC):
    """A bound ``beta(v, t)``: class K in ``v``, decreasing to zero in ``t``."""

    @abstractmethod
    def __call__(self, v, t):
        """Evaluate with numpy broadcasting over ``v`` and ``t``."""

    def sample(self, v_grid, t_grid) -> "GridKL":
        v = np.asarray(v_grid, dtype=float)
        t = np.asarray(t_grid, dtype=float)
        return GridKL(v, t, np.asarray(self(v[:, None], t[None, :]), dtype=float))


@dataclass(frozen=True)
class ExponentialKL(KLFunction):
    """``C * v * exp(-lam * t)``."""

    C: float
    lam: float

    family = "exponential"

    def __post_init__(self):
        if not (self.C > 0 and self.lam > 0):
            raise ContractError("exponential bound needs C > 0 and lam > 0")

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.C, self.lam])

    def __call__(self, v, t):
        v = np.asarray(v, dtype=float)
        if np.any(v < 0):
            raise DomainError("v must be nonnegative")
        out = self.C * v * np.exp(-self.lam * np.asarray(t, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        return {"kind": "ExponentialKL", "family": self.family, "theta": [self.C, self.lam]}


@dataclass(frozen=True)
class KLAxiomReport:
    zero_at_zero: bool
    increasing_in_v: bool
    decreasing_in_t: bool
    tail_decay: bool

    @property
    def ok(self) -> bool:
        return self.zero_at_zero and self.increasing_in_v and self.decreasing_in_t and self.tail_decay


def check_kl_axioms(values, v_grid, t_grid, tail_ratio: float = 1e-3) -> KLAxiomReport:
    """Grid version of the KL axioms.

    Rows are ``v`` values, columns ``t`` values. Strictness is required for
    ``v > 0``; "tends to zero" is checked as ``last < first * tail_ratio``.
    """
    b = np.asarray(values, dtype=float)
    v = np.asarray(v_grid, dtype=float)
    pos = v > 0
    zero = bool(np.all(b[~pos] == 0.0)) if np.any(~pos) else True
    inc = bool(np.all(np.diff(b, axis=0) > 0)) if v.size > 1 else True
    bp = b[pos]
    dec = bool(np.all(np.diff(bp, axis=1) < 0)) if bp.size else True
    tail = bool(np.all(bp[:, -1] < bp[:, 0] * tail_ratio)) if bp.size else True
    return KLAxiomReport(zero, inc, dec, tail)


@dataclass(frozen=True, eq=False)
class GridKL(KLFunction):
    """``beta`` sampled on ``v_grid x t_grid``, bilinear in between."""

    v_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.v_grid, dtype=float)
        t = np.array(self.t_grid, dtype=float)
        b = np.array(self.values, dtype=float)
        for arr in (v, t, b):
            arr.setflags(write=False)
        object.__setattr__(self, "v_grid", v)
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "values", b)
        if b.shape != (v.size, t.size):
            raise ContractError(f"values shape {b.shape} != ({v.size}, {t.size})")
        if np.any(np.diff(v) <= 0) or np.any(np.diff(t) <= 0):
            raise ContractError("grids must be strictly increasing")
        if not np.all(np.isfinite(b)) or np.any(b < 0):
            raise ContractError("values must be finite and nonnegative")
        if v[0] == 0.0 and np.any(b[0] != 0.0):
            raise ContractError("a KL grid must vanish at v = 0")
        if np.any(np.diff(b, axis=0) < 0):
            raise ContractError("a KL grid must be nondecreasing in v")

    def axioms(self, tail_ratio: float = 1e-3) -> KLAxiomReport:
        return check_kl_axioms(self.values, self.v_grid, self.t_grid, tail_ratio)

    def __call__(self, v, t):
        vv, tt = np.broadcast_arrays(np.asarray(v, dtype=float), np.asarray(t, dtype=float))
        interp = RegularGridInterpolator((self.v_grid, self.t_grid), self.values)
        try:
            out = interp(np.stack([vv.ravel(), tt.ravel()], axis=-1)).reshape(vv.shape)
        except ValueError as exc:
            raise DomainError(f"point outside the KL grid: {exc}") from None
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {
            "kind": "GridKL",
            "flags": {"kl_axioms": self.axioms().ok},
            "grid": {"nv": int(self.v_grid.size), "nt": int(self.t_grid.size)},
            "v_grid": self.v_grid.tolist(),
            "t_grid": self.t_grid.tolist(),
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridKL":
        if data.get("kind") != "GridKL":
            raise ContractError(f"not a GridKL record: {data.get('kind')!r}")
        nv, nt = data["grid"]["nv"], data["grid"]["nt"]
        return cls(data["v_grid"], data["t_grid"], np.reshape(data["values"], (nv, nt)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "GridKL":
        return cls.from_dict(json.loads(text))
