"""Scalar comparison functions (class K / K-infinity) on explicit grids.

A :class:`PiecewiseKappa` is a nondecreasing, nonnegative function given by
knots ``(v_k, y_k)`` with ``v_0 = 0``, linear interpolation between knots and
a linear continuation of slope ``extension_slope`` past the last knot.
:class:`PowerKappa` covers the closed-form ``c * v**p`` members used by the
exact factorization of exponential bounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol, Union

import numpy as np

from ..errors import ContractError, DomainError

ArrayLike = Union[float, np.ndarray]


class Kappa(Protocol):
    """Anything usable as a comparison function: callable with a (generalized) inverse."""

    def __call__(self, v: ArrayLike) -> ArrayLike: ...

    def inverse(self, y: ArrayLike) -> ArrayLike: ...

    def scaled(self, factor: float) -> "Kappa": ...


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _scalar_or_array(x: np.ndarray, like) -> ArrayLike:
    return float(x) if np.ndim(like) == 0 else x


@dataclass(frozen=True, eq=False)
class PiecewiseKappa:
    """Piecewise-linear nondecreasing function on ``[0, inf)``.

    Parameters
    ----------
    v : array_like
        Knot abscissae, strictly increasing, ``v[0] == 0``.
    y : array_like
        Knot ordinates, nonnegative and nondecreasing.
    extension_slope : float
        Slope of the linear continuation beyond ``v[-1]``.
    """

    v: np.ndarray
    y: np.ndarray
    extension_slope: float = 0.0

    def __post_init__(self):
        v = _readonly(self.v)
        y = _readonly(self.y)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "extension_slope", float(self.extension_slope))
        if v.ndim != 1 or y.shape != v.shape or v.size < 1:
            raise ContractError("knots must be two 1-D arrays of equal, nonzero length")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(y))):
            raise ContractError("knots must be finite")
        if v[0] != 0.0:
            raise ContractError(f"first knot must sit at v=0, got {v[0]!r}")
        if np.any(np.diff(v) <= 0):
            raise ContractError("knot abscissae must be strictly increasing")
        if np.any(y < 0) or np.any(np.diff(y) < 0):
            raise ContractError("knot ordinates must be nonnegative and nondecreasing")
        if not np.isfinite(self.extension_slope) or self.extension_slope < 0:
            raise ContractError("extension_slope must be a finite nonnegative number")

    # -- flags -------------------------------------------------------------
    @property
    def slopes(self) -> np.ndarray:
        """Slopes of the interior segments (empty for a single knot)."""
        return np.diff(self.y) / np.diff(self.v)

    @property
    def is_strict(self) -> bool:
        """Class K: zero at zero and strictly increasing on the whole half-line.

        With a linear continuation this forces a positive extension slope, so
        every strict function here is also unbounded (K-infinity).
        """
        return bool(
            self.y[0] == 0.0 and np.all(np.diff(self.y) > 0) and self.extension_slope > 0
        )

    @property
    def is_kinf(self) -> bool:
        return self.is_strict

    def is_convex(self, rtol: float = 1e-12) -> bool:
        s = np.append(self.slopes, self.extension_slope)
        scale = max(1.0, float(np.max(np.abs(s))))
        return bool(np.all(np.diff(s) >= -rtol * scale))

    def is_concave(self, rtol: float = 1e-12) -> bool:
        s = np.append(self.slopes, self.extension_slope)
        scale = max(1.0, float(np.max(np.abs(s))))
        return bool(np.all(np.diff(s) <= rtol * scale))

    # -- evaluation --------------------------------------------------------
    def __call__(self, v: ArrayLike) -> ArrayLike:
        x = np.asarray(v, dtype=float)
        if np.any(x < 0) or np.any(np.isnan(x)):
            raise DomainError("comparison functions are defined on v >= 0 only")
        out = np.interp(x, self.v, self.y)
        beyond = x > self.v[-1]
        if np.any(beyond):
            out = np.where(beyond, self.y[-1] + self.extension_slope * (x - self.v[-1]), out)
        return _scalar_or_array(out, v)

    def right_slope(self, x: float) -> float:
        """Slope of the segment starting at or containing ``x``."""
        if x >= self.v[-1]:
            return self.extension_slope
        k = int(np.searchsorted(self.v, x, side="right")) - 1
        return float(self.slopes[k])

    def inverse(self, y: ArrayLike) -> ArrayLike:
        """Upper generalized inverse ``sup{v : f(v) <= y}``.

        Coincides with the ordinary inverse for strictly increasing functions.
        Flat stretches resolve to their right end, so for a function vanishing
        on ``[0, v0]`` the inverse of zero is ``v0``.
        """
        q = np.asarray(y, dtype=float)
        if np.any(q < self.y[0]) or np.any(np.isnan(q)):
            raise DomainError(f"inverse needs y >= f(0) = {self.y[0]!r}")
        n = self.v.size
        k = np.searchsorted(self.y, q, side="right") - 1
        inner = k < n - 1
        kk = np.minimum(k, n - 2) if n > 1 else np.zeros_like(k)
        out = np.empty_like(q)
        if n > 1:
            v0, v1 = self.v[kk], self.v[kk + 1]
            y0, y1 = self.y[kk], self.y[kk + 1]
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(inner, v0 + (q - y0) * (v1 - v0) / (y1 - y0), out)
        tail = ~inner
        if np.any(tail):
            excess = q - self.y[-1]
            if self.extension_slope > 0:
                tail_val = self.v[-1] + excess / self.extension_slope
            else:
                if np.any(tail & (excess > 0)):
                    raise DomainError("y exceeds the supremum of a bounded function")
                tail_val = np.full_like(q, np.inf)
            out = np.where(tail, tail_val, out)
        return _scalar_or_array(out, y)

    def scaled(self, factor: float) -> "PiecewiseKappa":
        if factor <= 0:
            raise ContractError("scale factor must be positive")
        return PiecewiseKappa(self.v, factor * self.y, factor * self.extension_slope)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "kind": "PiecewiseKappa",
            "flags": {"strict": self.is_strict, "kinf": self.is_kinf},
            "grid": {"n_knots": int(self.v.size), "extension_slope": self.extension_slope},
            "v": self.v.tolist(),
            "values": self.y.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PiecewiseKappa":
        if data.get("kind") != "PiecewiseKappa":
            raise ContractError(f"not a PiecewiseKappa record: {data.get('kind')!r}")
        return cls(data["v"], data["values"], data["grid"]["extension_slope"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseKappa":
        return cls.from_dict(json.loads(text))

    @classmethod
    def sample(cls, f, v_grid, extension_slope: float | None = None) -> "PiecewiseKappa":
        """Interpolate an arbitrary nondecreasing callable on ``v_grid``."""
        v = np.asarray(v_grid, dtype=float)
        y = np.asarray(f(v), dtype=float)
        if extension_slope is None:
            extension_slope = (y[-1] - y[-2]) / (v[-1] - v[-2]) if v.size > 1 else 1.0
        return cls(v, y, extension_slope)


@dataclass(frozen=True)
class PowerKappa:
    """``f(v) = scale * v**power`` with ``scale, power > 0``."""

    scale: float
    power: float

    def __post_init__(self):
        if not (self.scale > 0 and self.power > 0):
            raise ContractError("PowerKappa needs positive scale and power")

    is_strict = True
    is_kinf = True

    def __call__(self, v: ArrayLike) -> ArrayLike:
        x = np.asarray(v, dtype=float)
        if np.any(x < 0):
            raise DomainError("comparison functions are defined on v >= 0 only")
        return _scalar_or_array(self.scale * np.power(x, self.power), v)

    def inverse(self, y: ArrayLike) -> ArrayLike:
        q = np.asarray(y, dtype=float)
        if np.any(q < 0):
            raise DomainError("inverse needs y >= 0")
        return _scalar_or_array(np.power(q / self.scale, 1.0 / self.power), y)

    def scaled(self, factor: float) -> "PowerKappa":
        return PowerKappa(self.scale * factor, self.power)

    def to_dict(self) -> dict:
        return {"kind": "PowerKappa", "scale": self.scale, "power": self.power}


def evaluate(f: Kappa, v: ArrayLike) -> ArrayLike:
    """Evaluate ``f`` at ``v >= 0``."""
    return f(v)


def invert(f: Kappa, y: ArrayLike) -> ArrayLike:
    """Exact inverse of a strictly increasing comparison function."""
    if not getattr(f, "is_strict", False):
        raise ContractError("invert requires a strictly increasing, zero-at-zero function")
    return f.inverse(y)


def compose(f: PiecewiseKappa, g: PiecewiseKappa) -> PiecewiseKappa:
    """``f o g`` as a piecewise-linear function.

    The knot grid is ``g``'s knots refined by the preimages of ``f``'s knots,
    on which the composition is exactly piecewise linear.
    """
    targets = f.v[f.v >= g.y[0]]
    pre = np.asarray(g.inverse(targets), dtype=float)
    knots = np.union1d(g.v, pre[np.isfinite(pre)])
    values = np.asarray(f(g(knots)), dtype=float)
    values = np.maximum.accumulate(values)  # rounding guard; f o g is nondecreasing
    ext = f.right_slope(float(g(knots[-1]))) * g.extension_slope
    return PiecewiseKappa(knots, values, ext)


def chi(tau: ArrayLike) -> ArrayLike:
    """Unit ramp: 0 below 0, identity on [0, 1], 1 above 1."""
    t = np.asarray(tau, dtype=float)
    return _scalar_or_array(0.5 * (1.0 + np.abs(t) - np.abs(t - 1.0)), tau)


def convex_majorant(k: PiecewiseKappa, vbar: float) -> PiecewiseKappa:
    """Convex K-infinity function dominating ``k`` on ``[vbar, inf)``.

    Walks the knots of ``k`` from the origin, taking at each knot the larger of
    the previous slope and the secant needed to reach ``k`` there. Slopes never
    decrease, so the chain is convex; it touches ``k`` wherever ``k`` itself is
    locally convex.
    """
    if not k.is_kinf:
        raise ContractError("convex_majorant expects a K-infinity function")
    if vbar <= 0:
        raise DomainError("vbar must be positive")
    xs = np.concatenate(([vbar], k.v[k.v > vbar]))
    ys = np.asarray(k(xs), dtype=float)
    out_v, out_y = [0.0], [0.0]
    slope = 0.0
    for x, y in zip(xs, ys):
        dx = x - out_v[-1]
        slope = max(slope, (y - out_y[-1]) / dx)
        out_v.append(float(x))
        out_y.append(max(out_y[-1] + slope * dx, float(y)))
    ext = max(slope, k.extension_slope)
    return PiecewiseKappa(out_v, out_y, ext)


def concave_inverse(kconv: PiecewiseKappa) -> PiecewiseKappa:
    """Inverse of a convex K-infinity function, which is concave."""
    if not kconv.is_strict:
        raise ContractError("concave_inverse needs a strictly increasing, zero-at-zero input")
    if not kconv.is_convex():
        raise ContractError("concave_inverse needs a convex input")
    return PiecewiseKappa(kconv.y, kconv.v, 1.0 / kconv.extension_slope)
