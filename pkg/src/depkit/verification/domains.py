"""Boxes, linear constraints and interval bound propagation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from ..errors import DimensionMismatch, EmptyDomain, MalformedInput
from ..model import Affine, Network

# (layer index of the ReLU, neuron index) -> True for active, False for inactive
Splits = Mapping[tuple[int, int], bool]


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=np.float64)
        hi = np.array(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("box bounds must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise MalformedInput("box bounds must be finite")
        if np.any(lo > hi):
            raise MalformedInput("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(self.lower <= x) and np.all(x <= self.upper))

    def width(self) -> np.ndarray:
        return self.upper - self.lower


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    """``coeffs . v <= bound`` or ``coeffs . v >= bound``."""

    coeffs: np.ndarray
    bound: float
    relation: str = "<="

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim != 1 or not np.any(c != 0):
            raise MalformedInput("a linear constraint needs a nonzero coefficient vector")
        if not (np.all(np.isfinite(c)) and math.isfinite(self.bound)):
            raise MalformedInput("linear constraint entries must be finite")
        if self.relation not in ("<=", ">="):
            raise MalformedInput(f"unknown relation {self.relation!r}")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "bound", float(self.bound))

    def value(self, v) -> float:
        # fsum is correctly rounded, so the check does not depend on summation order
        return math.fsum(float(a) * float(b) for a, b in zip(self.coeffs, v))

    def satisfied(self, v) -> bool:
        s = self.value(v)
        return s <= self.bound if self.relation == "<=" else s >= self.bound

    def as_upper(self) -> tuple[np.ndarray, float]:
        """Equivalent ``a . v <= b`` form."""
        if self.relation == "<=":
            return self.coeffs, self.bound
        return -self.coeffs, -self.bound

    def to_dict(self) -> dict:
        return {"coeffs": self.coeffs.tolist(), "rel": self.relation, "bound": self.bound}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearConstraint":
        try:
            return cls(np.array(d["coeffs"], dtype=np.float64), float(d["bound"]), d.get("rel", "<="))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedInput(f"bad linear constraint {d!r}: {exc}") from None


def _round_up(q: Fraction) -> float:
    f = float(q)
    return f if Fraction(f) >= q else math.nextafter(f, math.inf)


def _round_down(q: Fraction) -> float:
    f = float(q)
    return f if Fraction(f) <= q else math.nextafter(f, -math.inf)


def tighten_box(
    box: Box, constraints: Sequence[LinearConstraint], max_rounds: int = 100
) -> Box | None:
    """Shrink ``box`` by interval constraint propagation; ``None`` when empty.

    Each new bound is computed in exact rational arithmetic and rounded
    outward, so no feasible point is ever removed.
    """
    for con in constraints:
        if con.coeffs.size != box.dim:
            raise DimensionMismatch(
                f"constraint has {con.coeffs.size} coefficients, box has {box.dim} dims"
            )
    lo = [Fraction(float(v)) for v in box.lower]
    hi = [Fraction(float(v)) for v in box.upper]
    rows = []
    for con in constraints:
        a, b = con.as_upper()
        rows.append(([Fraction(float(v)) for v in a], Fraction(b)))
    for _ in range(max_rounds):
        changed = False
        for a, b in rows:
            mins = [ai * lo[i] if ai > 0 else ai * hi[i] for i, ai in enumerate(a)]
            total_min = sum(mins)
            if total_min > b:
                return None
            for j, aj in enumerate(a):
                if aj == 0:
                    continue
                limit = (b - (total_min - mins[j])) / aj
                if aj > 0:
                    new = Fraction(_round_up(limit))
                    if new < hi[j]:
                        hi[j] = new
                        changed = True
                else:
                    new = Fraction(_round_down(limit))
                    if new > lo[j]:
                        lo[j] = new
                        changed = True
                if lo[j] > hi[j]:
                    return None
                mins = [ai * lo[i] if ai > 0 else ai * hi[i] for i, ai in enumerate(a)]
                total_min = sum(mins)
        if not changed:
            break
    return Box(np.array([float(v) for v in lo]), np.array([float(v) for v in hi]))


_EPS = np.finfo(np.float64).eps


def rounding_pad(w: np.ndarray, b: np.ndarray, mag: np.ndarray) -> np.ndarray:
    """Outward slack per output of ``w @ x + b`` for ``|x| <= mag``.

    A length-n float dot product errs by at most ``n u / (1 - n u)`` times the
    sum of absolute terms, whatever the summation order.  The slack covers
    that error twice (once for the bound, once for the concrete forward pass
    it must contain) with room for the closure's additions on top.
    """
    n = w.shape[1] + 1
    return 4.0 * (n + 4) * _EPS * (np.abs(w) @ mag + np.abs(b))


def affine_interval(w: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    wp = np.maximum(w, 0.0)
    wn = np.minimum(w, 0.0)
    pad = rounding_pad(w, b, np.maximum(np.abs(lo), np.abs(hi)))
    return wp @ lo + wn @ hi + b - pad, wp @ hi + wn @ lo + b + pad


def apply_splits(layer: int, lo: np.ndarray, hi: np.ndarray, splits: Splits | None):
    """Intersect pre-activation bounds with fixed ReLU phases."""
    if not splits:
        return lo, hi
    lo, hi = lo.copy(), hi.copy()
    for (li, ni), active in splits.items():
        if li != layer:
            continue
        if active:
            lo[ni] = max(lo[ni], 0.0)
        else:
            hi[ni] = min(hi[ni], 0.0)
    if np.any(lo > hi):
        raise EmptyDomain(f"phase split empties layer {layer}")
    return lo, hi


def propagate_interval(
    net: Network, box: Box, splits: Splits | None = None
) -> list[Box]:
    """Interval bounds for every layer's output.

    ``splits`` fixes ReLU phases: the pre-activation bound is intersected with
    ``[0, inf)`` (active) or ``(-inf, 0]`` (inactive) before the ReLU.
    """
    if box.dim != net.input_dim:
        raise DimensionMismatch(f"box has {box.dim} dims, network expects {net.input_dim}")
    lo, hi = box.lower, box.upper
    out = []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Affine):
            lo, hi = affine_interval(layer.weights, layer.bias, lo, hi)
        else:
            lo, hi = apply_splits(i, lo, hi, splits)
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        out.append(Box(lo, hi))
    return out


def pre_activation_bounds(net: Network, input_box: Box, layer_boxes: Sequence[Box], splits=None):
    """(layer, lower, upper) of the input to every ReLU layer, after splits."""
    result = []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Affine):
            continue
        prev = layer_boxes[i - 1] if i > 0 else input_box
        lo, hi = apply_splits(i, prev.lower, prev.upper, splits)
        result.append((i, lo, hi))
    return result
