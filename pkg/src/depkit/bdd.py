"""A small reduced ordered BDD package.

Nodes live in a shared unique table owned by a :class:`BddManager`; a BDD is
referred to by the integer id of its root.  Ids 0 and 1 are the terminals.
Variable ``i`` is tested before variable ``i + 1`` on every path, and no
complement edges are used, so equal functions always share one id.
"""

from __future__ import annotations

from typing import Iterable, Sequence

FALSE = 0
TRUE = 1


class BddManager:
    def __init__(self, num_vars: int):
        if num_vars < 0:
            raise ValueError("num_vars must be nonnegative")
        self.num_vars = num_vars
        # node id -> (var, low, high); terminals use var = num_vars
        self._nodes: list[tuple[int, int, int]] = [(num_vars, 0, 0), (num_vars, 1, 1)]
        self._unique: dict[tuple[int, int, int], int] = {}
        self._or_cache: dict[tuple[int, int], int] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def var(self, u: int) -> int:
        return self._nodes[u][0]

    def low(self, u: int) -> int:
        return self._nodes[u][1]

    def high(self, u: int) -> int:
        return self._nodes[u][2]

    def mk(self, var: int, low: int, high: int) -> int:
        if low == high:
            return low
        key = (var, low, high)
        u = self._unique.get(key)
        if u is None:
            u = len(self._nodes)
            self._nodes.append(key)
            self._unique[key] = u
        return u

    def cube(self, bits: Sequence[int]) -> int:
        """The single-minterm function for a full assignment."""
        if len(bits) != self.num_vars:
            raise ValueError(f"pattern width {len(bits)} != {self.num_vars}")
        u = TRUE
        for i in range(self.num_vars - 1, -1, -1):
            u = self.mk(i, FALSE, u) if bits[i] else self.mk(i, u, FALSE)
        return u

    def or_(self, u: int, v: int) -> int:
        if u == TRUE or v == TRUE:
            return TRUE
        if u == FALSE or u == v:
            return v
        if v == FALSE:
            return u
        if u > v:
            u, v = v, u
        key = (u, v)
        r = self._or_cache.get(key)
        if r is not None:
            return r
        vu, vv = self.var(u), self.var(v)
        top = min(vu, vv)
        u0, u1 = (self.low(u), self.high(u)) if vu == top else (u, u)
        v0, v1 = (self.low(v), self.high(v)) if vv == top else (v, v)
        r = self.mk(top, self.or_(u0, v0), self.or_(u1, v1))
        self._or_cache[key] = r
        return r

    def insert(self, u: int, bits: Sequence[int]) -> int:
        """``u`` or the minterm ``bits``."""
        return self.or_(u, self.cube(bits))

    def contains(self, u: int, bits: Sequence[int]) -> bool:
        if len(bits) != self.num_vars:
            raise ValueError(f"pattern width {len(bits)} != {self.num_vars}")
        while u > TRUE:
            var, low, high = self._nodes[u]
            u = high if bits[var] else low
        return u == TRUE

    def flip(self, u: int, i: int, _memo: dict | None = None) -> int:
        """The function with variable ``i`` negated."""
        memo = {} if _memo is None else _memo
        if u <= TRUE or self.var(u) > i:
            return u
        if u in memo:
            return memo[u]
        var, low, high = self._nodes[u]
        if var == i:
            r = self.mk(i, high, low)
        else:
            r = self.mk(var, self.flip(low, i, memo), self.flip(high, i, memo))
        memo[u] = r
        return r

    def expand_one(self, u: int) -> int:
        """Accept everything at Hamming distance <= 1 from an accepted assignment."""
        r = u
        for i in range(self.num_vars):
            r = self.or_(r, self.flip(u, i))
        return r

    def hamming_relax(self, u: int, gamma: int) -> int:
        if not 0 <= gamma <= self.num_vars:
            raise ValueError(f"gamma must lie in 0..{self.num_vars}")
        for _ in range(gamma):
            nxt = self.expand_one(u)
            if nxt == u:
                break
            u = nxt
        return u

    def satcount(self, u: int, width: int | None = None) -> int:
        """Satisfying assignments over ``width`` variables (default: all)."""
        width = self.num_vars if width is None else width
        if width < self.num_vars and u > TRUE and self._max_var(u) >= width:
            raise ValueError("width smaller than the support of the function")
        memo: dict[int, int] = {}

        def count(v: int) -> int:
            # assignments of variables var(v)..num_vars-1
            if v <= TRUE:
                return v
            if v in memo:
                return memo[v]
            var, low, high = self._nodes[v]
            c = count(low) * 2 ** (self._level(low) - var - 1) + count(high) * 2 ** (
                self._level(high) - var - 1
            )
            memo[v] = c
            return c

        total = count(u) * 2 ** self._level(u)
        return total * 2 ** (width - self.num_vars) if width >= self.num_vars else total >> (
            self.num_vars - width
        )

    def _level(self, u: int) -> int:
        return self.num_vars if u <= TRUE else self.var(u)

    def _max_var(self, u: int) -> int:
        return max((self.var(v) for v in self.reachable(u) if v > TRUE), default=-1)

    def reachable(self, u: int) -> list[int]:
        """Node ids reachable from ``u`` in depth-first (low before high) preorder."""
        seen, order, stack = set(), [], [u]
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            order.append(v)
            if v > TRUE:
                stack.append(self.high(v))
                stack.append(self.low(v))
        return order

    def node_count(self, u: int) -> int:
        """Internal nodes reachable from ``u``."""
        return sum(1 for v in self.reachable(u) if v > TRUE)

    def iter_models(self, u: int) -> Iterable[tuple[int, ...]]:
        """Enumerate satisfying full assignments (for small widths)."""

        def rec(v: int, depth: int, prefix: tuple[int, ...]):
            if depth == self.num_vars:
                if v == TRUE:
                    yield prefix
                return
            if v == FALSE:
                return
            if v > TRUE and self.var(v) == depth:
                yield from rec(self.low(v), depth + 1, prefix + (0,))
                yield from rec(self.high(v), depth + 1, prefix + (1,))
            else:
                yield from rec(v, depth + 1, prefix + (0,))
                yield from rec(v, depth + 1, prefix + (1,))

        yield from rec(u, 0, ())

    # --- serialization ---------------------------------------------------------

    def export(self, roots: Sequence[int]) -> tuple[list[list[int]], list[int]]:
        """Compact node list ``[var, low, high]`` with ids renumbered canonically.

        Exported ids: 0 and 1 are terminals, internal nodes follow in post-order
        of a traversal of ``roots`` in the given order.
        """
        remap = {FALSE: 0, TRUE: 1}
        nodes: list[list[int]] = []

        def visit(v: int) -> int:
            if v in remap:
                return remap[v]
            var, low, high = self._nodes[v]
            lo, hi = visit(low), visit(high)
            remap[v] = len(nodes) + 2
            nodes.append([var, lo, hi])
            return remap[v]

        new_roots = [visit(r) for r in roots]
        return nodes, new_roots

    def load(self, nodes: Sequence[Sequence[int]], roots: Sequence[int]) -> list[int]:
        """Rebuild exported nodes inside this manager; returns the mapped roots."""
        ids = [FALSE, TRUE]
        for var, low, high in nodes:
            if not (0 <= var < self.num_vars) or not (0 <= low < len(ids) and 0 <= high < len(ids)):
                raise ValueError(f"bad node [{var}, {low}, {high}]")
            for child in (low, high):
                if ids[child] > TRUE and self.var(ids[child]) <= var:
                    raise ValueError("node list violates the variable order")
            ids.append(self.mk(var, ids[low], ids[high]))
        return [ids[r] for r in roots]
