"""Scenario k-projection coverage over discrete categories.

A data item assigns one value to every category.  For a fixed ``k`` an item
covers, for every k-subset of categories, the tuple of values it takes on that
subset.  Coverage is the number of distinct covered tuples divided by the
number of all possible tuples.  ``propose_next`` searches for the full
assignment that covers the most still-uncovered tuples while satisfying
integer linear constraints over value indicators.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import coo_matrix

from .errors import InvalidItem, KOutOfRange, MalformedInput, NoFeasibleAssignment
from .model import FORMAT

ScenarioItem = tuple[int, ...]


@dataclass(frozen=True)
class CategorySpace:
    categories: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        cats = tuple((name, tuple(values)) for name, values in self.categories)
        object.__setattr__(self, "categories", cats)
        if not cats:
            raise MalformedInput("a category space needs at least one category")
        names = [n for n, _ in cats]
        if len(set(names)) != len(names):
            raise MalformedInput("category names must be unique")
        for name, values in cats:
            if len(values) < 2:
                raise MalformedInput(f"category {name!r} needs at least two values")
            if len(set(values)) != len(values):
                raise MalformedInput(f"category {name!r} has duplicate values")

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "CategorySpace":
        return cls(
            tuple((f"C{i + 1}", tuple(f"v{j}" for j in range(s))) for i, s in enumerate(sizes))
        )

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(v) for _, v in self.categories)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.categories)

    def __len__(self) -> int:
        return len(self.categories)

    def index_of(self, category: str, value: str) -> tuple[int, int]:
        for ci, (name, values) in enumerate(self.categories):
            if name == category:
                if value not in values:
                    raise InvalidItem(f"{value!r} is not a value of {category!r}")
                return ci, values.index(value)
        raise InvalidItem(f"unknown category {category!r}")

    def encode(self, values: Sequence[str]) -> ScenarioItem:
        if len(values) != len(self):
            raise InvalidItem(f"item has {len(values)} values, space has {len(self)} categories")
        return tuple(self.index_of(name, v)[1] for name, v in zip(self.names, values))

    def decode(self, item: ScenarioItem) -> list[str]:
        return [self.categories[i][1][v] for i, v in enumerate(item)]

    def validate(self, item) -> ScenarioItem:
        item = tuple(item)
        if len(item) != len(self) or any(
            isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < s
            for v, s in zip(item, self.sizes)
        ):
            raise InvalidItem(f"item {item} is not valid for sizes {self.sizes}")
        return item


@dataclass(frozen=True)
class IndicatorConstraint:
    """``lower <= sum(coef * [category == value]) <= upper``."""

    terms: tuple[tuple[str, str, int], ...]
    lower: int
    upper: int

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(tuple(t) for t in self.terms))
        if self.lower > self.upper:
            raise MalformedInput(f"constraint lower {self.lower} exceeds upper {self.upper}")


class _CompiledConstraints:
    """Per-category contribution tables for fast partial-assignment checks."""

    def __init__(self, space: CategorySpace, constraints: Sequence[IndicatorConstraint]):
        self.bounds = []
        self.tables = []
        for con in constraints:
            table = [[0] * s for s in space.sizes]
            for cat, val, coef in con.terms:
                ci, vi = space.index_of(cat, val)
                table[ci][vi] += int(coef)
            self.tables.append(table)
            self.bounds.append((con.lower, con.upper))
        m = len(space)
        # suffix sums of min/max contributions of categories p..m-1
        self.suffix_min = []
        self.suffix_max = []
        for table in self.tables:
            lo = [0] * (m + 1)
            hi = [0] * (m + 1)
            for ci in range(m - 1, -1, -1):
                lo[ci] = lo[ci + 1] + min(table[ci])
                hi[ci] = hi[ci + 1] + max(table[ci])
            self.suffix_min.append(lo)
            self.suffix_max.append(hi)

    def feasible(self, item: ScenarioItem) -> bool:
        for table, (lo, hi) in zip(self.tables, self.bounds):
            s = sum(table[ci][v] for ci, v in enumerate(item))
            if not lo <= s <= hi:
                return False
        return True

    def prefix_possible(self, partial_sums: Sequence[int], depth: int) -> bool:
        """Can a prefix with these running sums still be completed feasibly?"""
        for k, (lo, hi) in enumerate(self.bounds):
            s = partial_sums[k]
            if s + self.suffix_max[k][depth] < lo or s + self.suffix_min[k][depth] > hi:
                return False
        return True


def is_feasible(space: CategorySpace, item, constraints: Sequence[IndicatorConstraint]) -> bool:
    return _CompiledConstraints(space, constraints).feasible(space.validate(item))


def projection_denominator(space: CategorySpace, k: int) -> int:
    """Sum over all k-subsets of categories of the product of their sizes."""
    m = len(space)
    if not 1 <= k <= m:
        raise KOutOfRange(f"k={k} outside 1..{m}")
    # elementary symmetric polynomial of the sizes
    e = [1] + [0] * k
    for s in space.sizes:
        for j in range(k, 0, -1):
            e[j] += e[j - 1] * s
    return e[k]


@dataclass
class CoverageLedger:
    k: int
    covered: set = field(default_factory=set)
    denominator: int = 1

    @property
    def ratio(self) -> Fraction:
        return Fraction(len(self.covered), self.denominator)


def item_tuples(item: ScenarioItem, k: int):
    for subset in combinations(range(len(item)), k):
        yield subset, tuple(item[c] for c in subset)


def add_item(ledger: CoverageLedger, item: ScenarioItem) -> int:
    """Add an item's tuples to the ledger; returns how many were new."""
    before = len(ledger.covered)
    ledger.covered.update(item_tuples(item, ledger.k))
    return len(ledger.covered) - before


def projection_coverage(
    space: CategorySpace,
    items: Sequence,
    k: int = 2,
    constraints: Sequence[IndicatorConstraint] = (),
    feasible_denominator: bool = False,
) -> CoverageLedger:
    """Ledger of covered k-tuples; ``ledger.ratio`` is the coverage.

    With ``feasible_denominator`` the denominator only counts tuples that
    occur in at least one constraint-satisfying full assignment.
    """
    denom = projection_denominator(space, k)
    if feasible_denominator and constraints:
        denom = len(feasible_tuples(space, k, constraints))
    ledger = CoverageLedger(k=k, covered=set(), denominator=denom)
    for item in items:
        add_item(ledger, space.validate(item))
    return ledger


def feasible_tuples(
    space: CategorySpace, k: int, constraints: Sequence[IndicatorConstraint]
) -> set:
    """All k-tuples contained in some feasible full assignment."""
    projection_denominator(space, k)
    cc = _CompiledConstraints(space, constraints)
    out = set()
    for subset in combinations(range(len(space)), k):
        for values in _product(space.sizes[c] for c in subset):
            if _completion_exists(space, cc, dict(zip(subset, values))):
                out.add((subset, values))
    return out


def _product(sizes):
    result = [()]
    for s in sizes:
        result = [t + (v,) for t in result for v in range(s)]
    return result


def _completion_exists(space, cc, fixed: dict) -> bool:
    sizes = space.sizes
    m = len(sizes)
    ncon = len(cc.tables)

    def rec(depth, sums):
        if not cc.prefix_possible(sums, depth):
            return False
        if depth == m:
            return True
        choices = [fixed[depth]] if depth in fixed else range(sizes[depth])
        for v in choices:
            nxt = [sums[j] + cc.tables[j][depth][v] for j in range(ncon)]
            if rec(depth + 1, nxt):
                return True
        return False

    return rec(0, [0] * ncon)


class _GainModel:
    """Uncovered-tuple bookkeeping used by the branch-and-bound search."""

    def __init__(self, space: CategorySpace, ledger: CoverageLedger):
        self.sizes = space.sizes
        self.k = ledger.k
        self.subsets = list(combinations(range(len(space)), self.k))
        # by_last[c]: subsets whose largest category index is c
        self.by_last = [[] for _ in self.sizes]
        for s in self.subsets:
            self.by_last[s[-1]].append(s)
        self.covered = {s: set() for s in self.subsets}
        for subset, values in ledger.covered:
            if subset in self.covered:
                self.covered[subset].add(values)
        # prefix_counts[s][j]: covered tuples of s grouped by their first j values
        self.prefix_counts = {}
        for s in self.subsets:
            counts = []
            for j in range(self.k):
                counts.append(Counter(t[:j] for t in self.covered[s]))
            self.prefix_counts[s] = counts
        # completions[s][j]: number of value tuples of s sharing a fixed j-prefix
        self.completions = {
            s: [math.prod(self.sizes[c] for c in s[j:]) for j in range(self.k)]
            for s in self.subsets
        }

    def closed_gain(self, assignment: Sequence[int], last: int) -> int:
        """New tuples of subsets that end exactly at category ``last``."""
        gain = 0
        for s in self.by_last[last]:
            if tuple(assignment[c] for c in s) not in self.covered[s]:
                gain += 1
        return gain

    def optimistic(self, assignment: Sequence[int], depth: int) -> int:
        """Upper bound on new tuples from subsets still open at ``depth``.

        Subsets with a single free category are scored exactly per value of
        that category and the best value is taken per category; subsets with
        several free categories count 1 if any completion is uncovered.
        """
        total = 0
        for last in range(depth, len(self.sizes)):
            per_value = [0] * self.sizes[last]
            for s in self.by_last[last]:
                j = 0
                while j < self.k and s[j] < depth:
                    j += 1
                prefix = tuple(assignment[c] for c in s[:j])
                if j == self.k - 1:
                    cov = self.covered[s]
                    for v in range(self.sizes[last]):
                        if prefix + (v,) not in cov:
                            per_value[v] += 1
                elif self.prefix_counts[s][j][prefix] < self.completions[s][j]:
                    total += 1
            total += max(per_value)
        return total

    def gain(self, item: ScenarioItem) -> int:
        return sum(
            1 for s in self.subsets if tuple(item[c] for c in s) not in self.covered[s]
        )


# Node budget for the combinatorial search before handing over to the MILP.
NODE_LIMIT = 5_000


class _NodeLimit(Exception):
    pass


def _best_item(
    space, model: _GainModel, cc: _CompiledConstraints, node_limit: int | None = None
) -> tuple[ScenarioItem, int] | None:
    """Exact maximum-gain feasible assignment; ties go to the lexicographically smallest.

    Depth-first over categories in order.  Children are visited by
    decreasing bound; a subtree is skipped when its bound is below the
    incumbent, or equal to it while its prefix is already lexicographically
    larger than the incumbent's.  Large spaces where the bound is too weak
    to finish within ``node_limit`` nodes are solved as a 0-1 program.
    """
    limit = NODE_LIMIT if node_limit is None else node_limit
    sizes = space.sizes
    m = len(sizes)
    ncon = len(cc.tables)
    seed = _greedy_item(space, model, cc)
    if seed is None:
        return None
    item, gain = _improve(space, model, cc, seed)
    best: list = [item, gain]
    assignment = [0] * m
    nodes = [0]

    def rec(depth, closed, sums):
        nodes[0] += 1
        if nodes[0] > limit:
            raise _NodeLimit
        if depth == m:
            cand = tuple(assignment)
            if closed > best[1] or (closed == best[1] and cand < best[0]):
                best[0], best[1] = cand, closed
            return
        children = []
        for v in range(sizes[depth]):
            nxt = [sums[j] + cc.tables[j][depth][v] for j in range(ncon)]
            if not cc.prefix_possible(nxt, depth + 1):
                continue
            assignment[depth] = v
            c = closed + model.closed_gain(assignment, depth)
            bound = c + model.optimistic(assignment, depth + 1)
            children.append((-bound, v, c, nxt))
        children.sort()
        for neg_bound, v, c, nxt in children:
            bound = -neg_bound
            if bound < best[1]:
                break
            assignment[depth] = v
            if bound == best[1] and tuple(assignment[: depth + 1]) > best[0][: depth + 1]:
                continue
            rec(depth + 1, c, nxt)
        assignment[depth] = 0

    try:
        rec(0, 0, [0] * ncon)
    except _NodeLimit:
        return _milp_best(space, model, cc)
    return best[0], best[1]


def _milp_best(space, model: _GainModel, cc: _CompiledConstraints):
    """Same contract as ``_best_item``, solved with HiGHS.

    One binary per (category, value) and, for every category subset, one
    continuous weight per value tuple whose marginals equal the value
    binaries.  Only uncovered tuples score.  After the optimum gain is known
    the categories are fixed in order, each to its smallest value that still
    admits that gain.
    """
    sizes = space.sizes
    m = len(sizes)
    offset = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    nx = int(offset[-1])
    rows, cols, vals, lo, hi = [], [], [], [], []
    score = []
    r = 0
    col = nx
    for s in model.subsets:
        cov = model.covered[s]
        tuples = _product(sizes[c] for c in s)
        score += [0.0 if t in cov else 1.0 for t in tuples]
        for j, c in enumerate(s):
            for v in range(sizes[c]):
                for ti, t in enumerate(tuples):
                    if t[j] == v:
                        rows.append(r)
                        cols.append(col + ti)
                        vals.append(1.0)
                rows.append(r)
                cols.append(offset[c] + v)
                vals.append(-1.0)
                lo.append(0.0)
                hi.append(0.0)
                r += 1
        col += len(tuples)
    n = col
    nz = n - nx
    for c in range(m):
        for v in range(sizes[c]):
            rows.append(r)
            cols.append(offset[c] + v)
            vals.append(1.0)
        lo.append(1.0)
        hi.append(1.0)
        r += 1
    for table, (clo, chi) in zip(cc.tables, cc.bounds):
        for c in range(m):
            for v in range(sizes[c]):
                if table[c][v]:
                    rows.append(r)
                    cols.append(offset[c] + v)
                    vals.append(float(table[c][v]))
        lo.append(float(clo))
        hi.append(float(chi))
        r += 1
    A = coo_matrix((vals, (rows, cols)), shape=(r, n)).tocsr()
    base = [LinearConstraint(A, lo, hi)]
    integrality = np.concatenate([np.ones(nx), np.zeros(nz)])
    xl, xu = np.zeros(n), np.ones(n)

    def solve(objective, extra=()):
        res = milp(objective, constraints=base + list(extra), integrality=integrality,
                   bounds=Bounds(xl, xu))
        if res.x is None:
            return None
        x = res.x[:nx]
        return tuple(int(np.argmax(x[offset[c]:offset[c + 1]])) for c in range(m))

    gain_obj = np.concatenate([np.zeros(nx), -np.asarray(score)])
    item = solve(gain_obj)
    if item is None:
        return None
    target = model.gain(item)
    at_least = LinearConstraint(np.concatenate([np.zeros(nx), score])[None, :],
                                target - 0.5, np.inf)
    for c in range(m):
        if item[c] > 0:
            obj = np.zeros(n)
            obj[offset[c]:offset[c + 1]] = np.arange(sizes[c])
            cand = solve(obj, [at_least])
            if cand is not None and cand[:c] == item[:c] and cand[c] < item[c] \
                    and cc.feasible(cand) and model.gain(cand) >= target:
                item = cand
        # pin category c for the rest of the descent
        xl[offset[c]:offset[c + 1]] = 0.0
        xu[offset[c]:offset[c + 1]] = 0.0
        xl[offset[c] + item[c]] = xu[offset[c] + item[c]] = 1.0
    return item, target


def _improve(space, model: _GainModel, cc: _CompiledConstraints, start):
    """First-improvement single-category moves from a feasible starting item."""
    item, gain = list(start[0]), start[1]
    improved = True
    while improved:
        improved = False
        for c, size in enumerate(space.sizes):
            keep = item[c]
            for v in range(size):
                if v == keep:
                    continue
                item[c] = v
                t = tuple(item)
                if cc.feasible(t):
                    g = model.gain(t)
                    if g > gain:
                        gain, keep, improved = g, v, True
            item[c] = keep
    return tuple(item), gain


def _greedy_item(space, model: _GainModel, cc: _CompiledConstraints) -> tuple[ScenarioItem, int] | None:
    """Best-scoring value per category in order, backtracking only on dead ends.

    The running-sum check is necessary but not sufficient for feasibility
    (a category may skip over the needed total), hence the backtracking.
    """
    sizes = space.sizes
    m = len(sizes)
    ncon = len(cc.tables)
    assignment = [0] * m

    def rec(depth, closed, sums):
        if depth == m:
            return tuple(assignment), closed
        choices = []
        for v in range(sizes[depth]):
            nxt = [sums[j] + cc.tables[j][depth][v] for j in range(ncon)]
            if not cc.prefix_possible(nxt, depth + 1):
                continue
            assignment[depth] = v
            c = closed + model.closed_gain(assignment, depth)
            choices.append((-(c + model.optimistic(assignment, depth + 1)), v, c, nxt))
        for _, v, c, nxt in sorted(choices):
            assignment[depth] = v
            found = rec(depth + 1, c, nxt)
            if found is not None:
                return found
        return None

    return rec(0, 0, [0] * ncon)


def propose_next(
    space: CategorySpace,
    ledger: CoverageLedger,
    constraints: Sequence[IndicatorConstraint] = (),
    count: int = 1,
    greedy: bool = False,
) -> list[tuple[ScenarioItem, int]]:
    """Propose up to ``count`` items to collect next.

    Proposals are sequential: each one is scored against the ledger extended
    by the earlier proposals, so gains are non-increasing.  The first gain is
    the exact optimum unless ``greedy`` is set.  Search stops early once no
    feasible item adds a new tuple.
    """
    if count < 1:
        raise MalformedInput("count must be positive")
    cc = _CompiledConstraints(space, constraints)
    work = CoverageLedger(ledger.k, set(ledger.covered), ledger.denominator)
    search = _greedy_item if greedy else _best_item
    out = []
    for _ in range(count):
        model = _GainModel(space, work)
        found = search(space, model, cc)
        if found is None:
            if not out:
                raise NoFeasibleAssignment("constraints exclude every full assignment")
            break
        item, gain = found
        if gain == 0 and out:
            break
        out.append((item, gain))
        add_item(work, item)
    return out


# --- catalog files -------------------------------------------------------------


@dataclass
class Catalog:
    space: CategorySpace
    constraints: list[IndicatorConstraint]
    items: list[ScenarioItem]


def catalog_from_dict(data: dict) -> Catalog:
    if not isinstance(data, dict) or data.get("format", FORMAT) != FORMAT:
        raise MalformedInput("catalog must be a depkit/1 JSON object")
    try:
        space = CategorySpace(
            tuple((c["name"], tuple(c["values"])) for c in data["categories"])
        )
        constraints = [
            IndicatorConstraint(
                tuple((t[0], t[1], int(t[2])) for t in c["terms"]), int(c["lower"]), int(c["upper"])
            )
            for c in data.get("constraints", [])
        ]
    except (KeyError, TypeError, IndexError) as exc:
        raise MalformedInput(f"bad catalog: {exc}") from None
    for con in constraints:
        for cat, val, _ in con.terms:
            space.index_of(cat, val)
    items = [space.encode(values) for values in data.get("items", [])]
    return Catalog(space, constraints, items)


def load_catalog(path: str | Path) -> Catalog:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedInput(f"cannot read catalog {path}: {exc}") from None
    return catalog_from_dict(data)
