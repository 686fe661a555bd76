"""Octagon abstract domain over a difference-bound matrix.

Variable ``x_i`` is represented by two signed variables ``v[2i] = +x_i`` and
``v[2i+1] = -x_i``; ``dbm[a, b]`` is an upper bound on ``v[a] - v[b]``.  So
``x_i <= u`` is stored as ``dbm[2i, 2i+1] = 2u`` and ``x_i - x_j <= c`` as
``dbm[2i, 2j] = dbm[2j+1, 2i+1] = c``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DimensionMismatch, EmptyDomain
from ..model import Affine, Network
from .domains import Box, LinearConstraint, Splits, rounding_pad

INF = np.inf


def bar(a: int) -> int:
    return a ^ 1


@dataclass(frozen=True, eq=False)
class Octagon:
    dbm: np.ndarray

    def __post_init__(self):
        m = np.array(self.dbm, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
            raise DimensionMismatch("octagon matrix must be square with even size")
        object.__setattr__(self, "dbm", m)

    @property
    def n(self) -> int:
        return self.dbm.shape[0] // 2

    @classmethod
    def top(cls, n: int) -> "Octagon":
        m = np.full((2 * n, 2 * n), INF)
        np.fill_diagonal(m, 0.0)
        return cls(m)

    @classmethod
    def from_box(cls, lower, upper) -> "Octagon":
        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        o = cls.top(lower.size)
        idx = np.arange(lower.size)
        o.dbm[2 * idx, 2 * idx + 1] = 2 * upper
        o.dbm[2 * idx + 1, 2 * idx] = -2 * lower
        return o

    def upper(self) -> np.ndarray:
        idx = np.arange(self.n)
        return self.dbm[2 * idx, 2 * idx + 1] / 2

    def lower(self) -> np.ndarray:
        idx = np.arange(self.n)
        return -self.dbm[2 * idx + 1, 2 * idx] / 2

    def to_box(self) -> Box:
        return Box(self.lower(), self.upper())

    def add(self, a: int, b: int, c: float) -> None:
        """Meet with ``v[a] - v[b] <= c`` (and its coherent twin)."""
        self.dbm[a, b] = min(self.dbm[a, b], c)
        self.dbm[bar(b), bar(a)] = min(self.dbm[bar(b), bar(a)], c)

    def add_unary(self, i: int, lower: float | None = None, upper: float | None = None) -> None:
        if upper is not None:
            self.add(2 * i, 2 * i + 1, 2 * upper)
        if lower is not None:
            self.add(2 * i + 1, 2 * i, -2 * lower)

    def forget(self, i: int) -> None:
        rows = [2 * i, 2 * i + 1]
        self.dbm[rows, :] = INF
        self.dbm[:, rows] = INF
        self.dbm[2 * i, 2 * i] = 0.0
        self.dbm[2 * i + 1, 2 * i + 1] = 0.0

    def copy(self) -> "Octagon":
        return Octagon(self.dbm.copy())

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        v = np.empty(2 * x.size)
        v[0::2] = x
        v[1::2] = -x
        diff = v[:, None] - v[None, :]
        return bool(np.all(diff <= self.dbm))

    def is_coherent(self) -> bool:
        idx = np.arange(2 * self.n) ^ 1
        return bool(np.array_equal(self.dbm, self.dbm[np.ix_(idx, idx)].T))


# Negative cycles shorter than this (relative to the largest finite bound) are
# treated as rounding noise from degenerate, zero-width octagons.
EMPTY_TOL = 1e-12


def strong_closure(oct: Octagon) -> Octagon | None:
    """Tightest coherent matrix implied by ``oct``; ``None`` if empty.

    Floyd-Warshall shortest paths followed by one strengthening pass
    ``m[a, b] <= (m[a, bar a] + m[bar b, b]) / 2``.  In exact arithmetic one
    round suffices; in floating point a second round can still shave an ulp,
    so rounds repeat until nothing changes, which makes the result a fixpoint.
    """
    m = oct.dbm.copy()
    size = m.shape[0]
    swap = np.arange(size) ^ 1
    finite = np.abs(m[np.isfinite(m)])
    tol = EMPTY_TOL * max(1.0, float(finite.max()) if finite.size else 1.0)
    for _ in range(8):
        prev = m.copy()
        for k in range(size):
            m = np.minimum(m, m[:, k : k + 1] + m[k : k + 1, :])
        if np.any(np.diag(m) < -tol):
            return None
        half = np.diag(m[:, swap]) / 2  # m[a, bar a] / 2
        m = np.minimum(m, half[:, None] + half[None, :][:, swap])
        if np.any(np.diag(m) < -tol):
            return None
        if np.any(np.diag(m) < 0):
            # rounding noise: widen every 2-cycle back to non-negative
            m = np.maximum(m, -m.T)
        np.fill_diagonal(m, 0.0)
        if np.array_equal(m, prev):
            break
    return Octagon(m)


def _unary_hi(m: np.ndarray, a: int) -> float:
    """Upper bound on ``v[a]``."""
    return m[a, bar(a)] / 2


def _linear_hi(coeffs: np.ndarray, m: np.ndarray) -> float:
    # signed variable carrying each nonzero coefficient, weighted by |c|
    heap = []
    for i, c in enumerate(coeffs):
        if c != 0:
            heap.append((-abs(c), i, 2 * i if c > 0 else 2 * i + 1))
    heapq.heapify(heap)
    total = 0.0
    while len(heap) >= 2:
        ca, i, a = heapq.heappop(heap)
        cb, j, b = heapq.heappop(heap)
        ca, cb = -ca, -cb
        # v[a] + v[b] = v[a] - v[bar b]
        pair = min(m[a, bar(b)], _unary_hi(m, a) + _unary_hi(m, b))
        total += cb * pair
        rest = ca - cb
        if rest > 0:
            heapq.heappush(heap, (-rest, i, a))
    if heap:
        c, _, a = heap[0]
        total += -c * _unary_hi(m, a)
    return float(total)


def bound_linear_form(coeffs, oct: Octagon) -> tuple[float, float]:
    """Sound ``(lo, hi)`` of ``coeffs . x`` over a closed octagon.

    Variables are paired greedily by largest remaining ``|c|`` and charged
    against the binary bound of the matching ``+-x_i +-x_j``; a leftover
    variable uses its unary bound.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    if c.size != oct.n:
        raise DimensionMismatch(f"{c.size} coefficients for an octagon over {oct.n} variables")
    if np.any(np.diag(oct.dbm) < 0):
        raise EmptyDomain("octagon is empty")
    if not np.any(c):
        return 0.0, 0.0
    return -_linear_hi(-c, oct.dbm), _linear_hi(c, oct.dbm)


def octagon_from_constraints(box: Box, constraints: Sequence[LinearConstraint]) -> Octagon | None:
    """Closed octagon for ``box`` plus every constraint of octagonal shape.

    Constraints over two variables with equal-magnitude coefficients become
    binary octagon bounds; single-variable ones become unary bounds.  Other
    constraints are ignored (sound: the result only over-approximates).
    """
    o = Octagon.from_box(box.lower, box.upper)
    for con in constraints:
        a, b = con.as_upper()
        nz = np.flatnonzero(a)
        if nz.size == 1:
            i = nz[0]
            if a[i] > 0:
                o.add_unary(i, upper=b / a[i])
            else:
                o.add_unary(i, lower=b / a[i])
        elif nz.size == 2 and abs(a[nz[0]]) == abs(a[nz[1]]):
            i, j = nz
            s = abs(a[i])
            va = 2 * i if a[i] > 0 else 2 * i + 1
            vb = 2 * j if a[j] > 0 else 2 * j + 1
            o.add(va, bar(vb), b / s)
    return strong_closure(o)


def _affine_octagon(layer: Affine, oct: Octagon) -> Octagon:
    w, bias = layer.weights, layer.bias
    n_out = w.shape[0]
    pad = rounding_pad(w, bias, np.maximum(np.abs(oct.lower()), np.abs(oct.upper())))
    out = Octagon.top(n_out)
    m = out.dbm
    for i in range(n_out):
        lo, hi = bound_linear_form(w[i], oct)
        m[2 * i, 2 * i + 1] = 2 * (hi + bias[i] + pad[i])
        m[2 * i + 1, 2 * i] = -2 * (lo + bias[i] - pad[i])
        for j in range(i + 1, n_out):
            p = pad[i] + pad[j]
            lo_s, hi_s = bound_linear_form(w[i] + w[j], oct)
            s = bias[i] + bias[j]
            out.add(2 * i, 2 * j + 1, hi_s + s + p)  # y_i + y_j
            out.add(2 * i + 1, 2 * j, -(lo_s + s) + p)  # -y_i - y_j
            lo_d, hi_d = bound_linear_form(w[i] - w[j], oct)
            d = bias[i] - bias[j]
            out.add(2 * i, 2 * j, hi_d + d + p)  # y_i - y_j
            out.add(2 * j, 2 * i, -(lo_d + d) + p)  # y_j - y_i
    closed = strong_closure(out)
    if closed is None:
        # The image of a nonempty octagon is nonempty; this only happens when
        # rounding makes near-degenerate binary bounds cross (e.g. a layer with
        # constant output).  Keep the unary bounds, which are still sound.
        idx = np.arange(n_out)
        lo = -m[2 * idx + 1, 2 * idx] / 2
        hi = m[2 * idx, 2 * idx + 1] / 2
        closed = strong_closure(Octagon.from_box(np.minimum(lo, hi), np.maximum(lo, hi)))
    return closed


def _relu_octagon(layer_index: int, oct: Octagon, splits: Splits | None) -> Octagon:
    o = oct.copy()
    if splits:
        for (li, ni), active in splits.items():
            if li != layer_index:
                continue
            if active:
                o.add_unary(ni, lower=0.0)
            else:
                o.add_unary(ni, upper=0.0)
        closed = strong_closure(o)
        if closed is None:
            raise EmptyDomain(f"phase split empties layer {layer_index}")
        o = closed
    lo, hi = o.lower(), o.upper()
    for i in range(o.n):
        if lo[i] >= 0:
            continue
        o.forget(i)
        o.add_unary(i, lower=0.0, upper=max(hi[i], 0.0))
    closed = strong_closure(o)
    if closed is None:
        raise EmptyDomain(f"relu layer {layer_index} came out empty")
    return closed


def propagate_octagon(
    net: Network, input_oct: Octagon, splits: Splits | None = None
) -> list[Octagon]:
    """Closed octagon over every layer's output."""
    if input_oct.n != net.input_dim:
        raise DimensionMismatch(
            f"octagon over {input_oct.n} variables, network expects {net.input_dim}"
        )
    cur = strong_closure(input_oct)
    if cur is None:
        raise EmptyDomain("input octagon is empty")
    out = []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Affine):
            cur = _affine_octagon(layer, cur)
        else:
            cur = _relu_octagon(i, cur, splits)
        out.append(cur)
    return out


def pre_activation_octagons(net: Network, input_oct: Octagon, layer_octs, splits=None):
    """(layer, lower, upper) of every ReLU input, after splits."""
    result = []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Affine):
            continue
        prev = layer_octs[i - 1] if i > 0 else input_oct
        lo, hi = prev.lower().copy(), prev.upper().copy()
        if splits:
            for (li, ni), active in splits.items():
                if li == i:
                    if active:
                        lo[ni] = max(lo[ni], 0.0)
                    else:
                        hi[ni] = min(hi[ni], 0.0)
        result.append((i, lo, hi))
    return result
