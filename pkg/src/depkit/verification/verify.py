"""Existential reachability of a risk property, decided by branch-and-bound.

``verify`` asks whether some input in a box, satisfying the input
constraints, drives the network output into a conjunction of linear risk
constraints.  Abstract propagation (interval or octagon) refutes the risk on
whole regions; unstable ReLUs are split by phase until every region is either
refuted or fully phase-fixed, where the remaining question is a single linear
feasibility problem.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from ..errors import DimensionMismatch, EmptyDomain, MalformedInput
from ..model import FORMAT, Affine, Network, forward, forward_batch, jacobian, load_network
from .domains import (
    Box,
    LinearConstraint,
    affine_interval,
    pre_activation_bounds,
    propagate_interval,
    tighten_box,
)
from .octagon import (
    bound_linear_form,
    octagon_from_constraints,
    pre_activation_octagons,
    propagate_octagon,
)

log = logging.getLogger(__name__)

PROVED = "proved"
COUNTEREXAMPLE = "counterexample"
UNKNOWN = "unknown"


@dataclass(eq=False)
class VerificationProblem:
    net: Network
    input_box: Box
    input_constraints: list[LinearConstraint] = field(default_factory=list)
    risk: list[LinearConstraint] = field(default_factory=list)

    def __post_init__(self):
        if self.input_box.dim != self.net.input_dim:
            raise DimensionMismatch(
                f"input box has {self.input_box.dim} dims, network expects {self.net.input_dim}"
            )
        for c in self.input_constraints:
            if c.coeffs.size != self.net.input_dim:
                raise DimensionMismatch("input constraint width differs from input_dim")
        if not self.risk:
            raise MalformedInput("risk property needs at least one constraint")
        for c in self.risk:
            if c.coeffs.size != self.net.output_dim:
                raise DimensionMismatch("risk constraint width differs from output width")

    def input_ok(self, x) -> bool:
        return self.input_box.contains(x) and all(c.satisfied(x) for c in self.input_constraints)

    def risk_ok(self, y) -> bool:
        return all(c.satisfied(y) for c in self.risk)

    def is_witness(self, x) -> bool:
        if not self.input_ok(x):
            return False
        y, _ = forward(self.net, x)
        return self.risk_ok(y)


@dataclass
class Verdict:
    status: str
    witness_input: np.ndarray | None = None
    witness_output: np.ndarray | None = None
    note: str | None = None
    nodes: int = 0
    splits: int = 0
    budget_left: int = 0

    def to_dict(self) -> dict:
        out = {"verdict": self.status}
        if self.witness_input is not None:
            out["witness"] = {
                "input": self.witness_input.tolist(),
                "output": self.witness_output.tolist(),
            }
        if self.note:
            out["note"] = self.note
        out["search"] = {"nodes": self.nodes, "splits": self.splits, "budget_left": self.budget_left}
        return out


def argmax_risk(n_outputs: int, cls: int) -> list[LinearConstraint]:
    """Risk "network outputs class ``cls``": ``y_cls - y_j >= 0`` for all j (ties count)."""
    out = []
    for j in range(n_outputs):
        if j == cls:
            continue
        c = np.zeros(n_outputs)
        c[cls], c[j] = 1.0, -1.0
        out.append(LinearConstraint(c, 0.0, ">="))
    return out


# --- falsification ----------------------------------------------------------


def _hinge(problem: VerificationProblem, x: np.ndarray, y: np.ndarray, margin: float):
    """Total violation of input and risk constraints, and its gradient."""
    J = jacobian(problem.net, x)
    total = 0.0
    grad = np.zeros_like(x)
    for con in problem.risk:
        a, b = con.as_upper()
        v = float(a @ y) - b + margin
        if v > 0:
            total += v
            grad += a @ J
    for con in problem.input_constraints:
        a, b = con.as_upper()
        v = float(a @ x) - b + margin
        if v > 0:
            total += v
            grad += a
    return total, grad


def _scan(problem: VerificationProblem, xs: np.ndarray):
    """First witness among rows of ``xs`` plus the per-row risk slack."""
    ys = forward_batch(problem.net, xs)
    slack = np.zeros(len(xs))
    for con in problem.risk:
        a, b = con.as_upper()
        slack += np.maximum(ys @ a - b, 0.0)
    for con in problem.input_constraints:
        a, b = con.as_upper()
        slack += np.maximum(xs @ a - b, 0.0)
    for idx in np.argsort(slack, kind="stable"):
        if slack[idx] > 0:
            break
        if problem.is_witness(xs[idx]):
            return xs[idx], slack
    return None, slack


def find_counterexample(
    problem: VerificationProblem,
    attempts: int = 256,
    seed: int = 0,
    box: Box | None = None,
    pgd_starts: int = 4,
    pgd_steps: int = 40,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Search for a concrete witness by sampling and projected gradient descent.

    Returned witnesses are re-checked exactly against the box, the input
    constraints and the risk constraints.
    """
    if box is None:
        box = tighten_box(problem.input_box, problem.input_constraints)
        if box is None:
            return None
    rng = np.random.default_rng(seed)
    lo, hi = box.lower, box.upper
    d = box.dim
    pts = [(lo + hi) / 2]
    if d <= 8:
        corners = ((np.arange(2**d)[:, None] >> np.arange(d)) & 1).astype(bool)
    else:
        corners = rng.random((min(attempts, 256), d)) < 0.5
    pts.extend(np.where(corners, hi, lo))
    pts.extend(lo + rng.random((attempts, d)) * (hi - lo))
    xs = np.array(pts)
    found, slack = _scan(problem, xs)
    if found is not None:
        return _pack(problem, found)
    if pgd_steps <= 0 or pgd_starts <= 0:
        return None
    width = np.maximum(hi - lo, 1e-12)
    scale = max(1.0, float(np.max(np.abs(forward_batch(problem.net, xs[:1])))))
    margin = 1e-9 * scale
    for start in np.argsort(slack, kind="stable")[:pgd_starts]:
        x = xs[start].copy()
        step = 0.1 * width
        for _ in range(pgd_steps):
            y, _ = forward(problem.net, x)
            total, grad = _hinge(problem, x, y, margin)
            if total <= margin * (len(problem.risk) + len(problem.input_constraints)):
                if problem.is_witness(x):
                    return _pack(problem, x)
            if not np.any(grad):
                break
            x = np.clip(x - step * np.sign(grad), lo, hi)
            step *= 0.9
        if problem.is_witness(x):
            return _pack(problem, x)
    return None


def _pack(problem: VerificationProblem, x: np.ndarray):
    x = np.array(x, dtype=np.float64)
    y, _ = forward(problem.net, x)
    return x, y


# --- exact leaf check ---------------------------------------------------------


def _phase_affine(net: Network, pattern: dict[tuple[int, int], bool]):
    """Affine maps (A, c) of every layer output under a fixed ReLU phase pattern,
    together with the phase constraints as rows ``G x <= h``."""
    n = net.input_dim
    A, c = np.eye(n), np.zeros(n)
    maps = []
    G, h = [], []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Affine):
            A, c = layer.weights @ A, layer.weights @ c + layer.bias
        else:
            mask = np.zeros(A.shape[0], dtype=bool)
            for ni in range(A.shape[0]):
                active = pattern[(i, ni)]
                mask[ni] = active
                if active:  # pre >= 0  ->  -A x <= c
                    G.append(-A[ni])
                    h.append(c[ni])
                else:  # pre <= 0
                    G.append(A[ni])
                    h.append(-c[ni])
            A = np.where(mask[:, None], A, 0.0)
            c = np.where(mask, c, 0.0)
        maps.append((A, c))
    return maps, G, h


def _leaf_lp(problem: VerificationProblem, box: Box, pattern):
    """Decide a fully phase-fixed region by an LP maximizing the common slack.

    Returns ("refuted" | "witness" | "degenerate", x or None).
    """
    maps, G, h = _phase_affine(problem.net, pattern)
    A_out, c_out = maps[-1]
    rows, rhs = list(G), list(h)
    for con in problem.input_constraints:
        a, b = con.as_upper()
        rows.append(a)
        rhs.append(b)
    for con in problem.risk:
        a, b = con.as_upper()
        rows.append(a @ A_out)
        rhs.append(b - a @ c_out)
    R = np.array(rows, dtype=np.float64).reshape(-1, box.dim)
    r = np.array(rhs, dtype=np.float64)
    norms = np.linalg.norm(R, axis=1)
    live = norms > 0
    if np.any(~live & (r < 0)):
        return "refuted", None
    R, r, norms = R[live], r[live], norms[live]
    d = box.dim
    # variables: x (d), t; maximize t s.t. R x + |R| t <= r, t <= 1
    A_ub = np.hstack([R, norms[:, None]])
    cost = np.zeros(d + 1)
    cost[-1] = -1.0
    bounds = [(float(l), float(u)) for l, u in zip(box.lower, box.upper)] + [(None, 1.0)]
    res = linprog(cost, A_ub=A_ub, b_ub=r, bounds=bounds, method="highs")
    if res.status == 2:
        return "refuted", None
    if res.status != 0:
        return "degenerate", None
    x = np.clip(res.x[:d], box.lower, box.upper)
    t = res.x[-1]
    if problem.is_witness(x):
        return "witness", x
    if t < -1e-9:
        return "refuted", None
    return "degenerate", x


# --- branch and bound -----------------------------------------------------------


class _Search:
    def __init__(self, problem, box, domain, budget, seed, attempts, input_oct):
        self.problem = problem
        self.box = box
        self.domain = domain
        self.budget = budget
        self.seed = seed
        self.attempts = attempts
        self.input_oct = input_oct
        self.nodes = 0
        self.splits = 0
        self.exhausted = False
        self.degenerate = False

    def bounds(self, splits):
        """Output (lo, hi) bound function and unstable ReLU list, or None if empty."""
        net = self.problem.net
        try:
            if self.domain == "octagon":
                octs = propagate_octagon(net, self.input_oct, splits)
                pre = pre_activation_octagons(net, self.input_oct, octs, splits)
                final = octs[-1]
                out_bound = lambda g: bound_linear_form(g, final)  # noqa: E731
            else:
                boxes = propagate_interval(net, self.box, splits)
                pre = pre_activation_bounds(net, self.box, boxes, splits)
                final = boxes[-1]

                def out_bound(g):
                    lo, hi = affine_interval(g[None, :], np.zeros(1), final.lower, final.upper)
                    return float(lo[0]), float(hi[0])

        except EmptyDomain:
            return None
        unstable = []
        for layer, lo, hi in pre:
            for ni in range(lo.size):
                if (layer, ni) in splits:
                    continue
                if lo[ni] < 0 < hi[ni]:
                    unstable.append((hi[ni] - lo[ni], layer, ni))
        return out_bound, pre, unstable

    def refuted(self, out_bound) -> bool:
        for con in self.problem.risk:
            lo, hi = out_bound(con.coeffs)
            if con.relation == ">=" and hi < con.bound:
                return True
            if con.relation == "<=" and lo > con.bound:
                return True
        return False

    def run(self, splits: dict):
        """Witness found in this subtree, or None (refuted or undecided)."""
        self.nodes += 1
        res = self.bounds(splits)
        if res is None:
            return None
        out_bound, pre, unstable = res
        if self.refuted(out_bound):
            return None
        is_root = not splits
        found = find_counterexample(
            self.problem,
            attempts=self.attempts if is_root else 8,
            seed=self.seed + self.nodes,
            box=self.box,
            pgd_starts=4 if is_root else 0,
        )
        if found is not None:
            return found
        if not unstable:
            pattern = {}
            for layer, lo, hi in pre:
                for ni in range(lo.size):
                    pattern[(layer, ni)] = splits.get((layer, ni), bool(lo[ni] >= 0))
            kind, x = _leaf_lp(self.problem, self.box, pattern)
            if kind == "witness":
                return _pack(self.problem, x)
            if kind == "degenerate":
                self.degenerate = True
            return None
        if self.budget <= 0:
            self.exhausted = True
            return None
        self.budget -= 1
        self.splits += 1
        # widest pre-activation interval first; ties by (layer, neuron) index
        _, layer, ni = min(unstable, key=lambda t: (-t[0], t[1], t[2]))
        for active in (True, False):
            child = dict(splits)
            child[(layer, ni)] = active
            found = self.run(child)
            if found is not None:
                return found
        return None


def verify(
    problem: VerificationProblem,
    budget: int = 256,
    domain: str = "interval",
    seed: int = 0,
    attempts: int = 256,
) -> Verdict:
    """Decide whether the risk is reachable.

    ``budget`` caps the total number of ReLU phase splits.  ``Proved`` means
    every leaf of the split tree was refuted; ``Counterexample`` carries an
    input that was re-validated by a concrete forward pass.
    """
    if domain not in ("interval", "octagon"):
        raise MalformedInput(f"unknown domain {domain!r}")
    box = tighten_box(problem.input_box, problem.input_constraints)
    if box is None:
        return Verdict(PROVED, note="input region is empty: box and input constraints are infeasible",
                       budget_left=budget)
    input_oct = None
    if domain == "octagon":
        input_oct = octagon_from_constraints(box, problem.input_constraints)
        if input_oct is None:
            return Verdict(PROVED, note="input region is empty: box and input constraints are infeasible",
                           budget_left=budget)
    search = _Search(problem, box, domain, budget, seed, attempts, input_oct)
    found = search.run({})
    stats = dict(nodes=search.nodes, splits=search.splits, budget_left=search.budget)
    if found is not None:
        x, y = found
        assert problem.is_witness(x)
        return Verdict(COUNTEREXAMPLE, x, y, **stats)
    if search.exhausted:
        return Verdict(UNKNOWN, note="split budget exhausted", **stats)
    if search.degenerate:
        return Verdict(UNKNOWN, note="a phase-fixed region could be neither refuted nor witnessed", **stats)
    return Verdict(PROVED, **stats)


def verify_any(
    problem: VerificationProblem,
    risks: Sequence[Sequence[LinearConstraint]],
    **kwargs,
) -> tuple[Verdict, list[Verdict]]:
    """Disjunction of conjunctive risks, one ``verify`` call per disjunct."""
    verdicts = []
    for risk in risks:
        sub = VerificationProblem(problem.net, problem.input_box, problem.input_constraints, list(risk))
        verdicts.append(verify(sub, **kwargs))
    for v in verdicts:
        if v.status == COUNTEREXAMPLE:
            return v, verdicts
    for v in verdicts:
        if v.status == UNKNOWN:
            return v, verdicts
    return Verdict(PROVED, nodes=sum(v.nodes for v in verdicts),
                   splits=sum(v.splits for v in verdicts)), verdicts


# --- problem files --------------------------------------------------------------


def load_problem(path: str | Path) -> tuple[VerificationProblem, list[list[LinearConstraint]]]:
    """Read a problem file; returns the problem and its list of risk disjuncts.

    ``risk`` is one conjunction; ``risk_any`` a list of conjunctions;
    ``risk_argmax`` a list of class indices, each expanded via ``argmax_risk``.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedInput(f"cannot read problem {path}: {exc}") from None
    if not isinstance(data, dict) or data.get("format", FORMAT) != FORMAT:
        raise MalformedInput("problem must be a depkit/1 JSON object")
    if "model" not in data or "input_box" not in data:
        raise MalformedInput("problem needs 'model' and 'input_box'")
    model_path = Path(data["model"])
    if not model_path.is_absolute():
        model_path = path.parent / model_path
    net = load_network(model_path)
    ib = data["input_box"]
    if isinstance(ib, dict):
        box = Box(ib["lower"], ib["upper"])
    else:
        box = Box(ib[0], ib[1])
    inputs = [LinearConstraint.from_dict(c) for c in data.get("input_constraints", [])]
    disjuncts: list[list[LinearConstraint]] = []
    if data.get("risk"):
        disjuncts.append([LinearConstraint.from_dict(c) for c in data["risk"]])
    for conj in data.get("risk_any", []):
        disjuncts.append([LinearConstraint.from_dict(c) for c in conj])
    for cls in data.get("risk_argmax", []):
        disjuncts.append(argmax_risk(net.output_dim, int(cls)))
    if not disjuncts:
        raise MalformedInput("problem defines no risk property")
    problem = VerificationProblem(net, box, inputs, disjuncts[0])
    return problem, disjuncts
