"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import itertools
import json
import math
import time

import numpy as np
import pytest

from fixtures import ROAD_CATALOG, target_vehicle_problem, write_all
from oracles import (
    brute_best_gain,
    brute_covered,
    brute_denominator,
    concrete_layers,
    hamming,
    hamming_ball,
    risk_reachable,
)
from problems import boundary_problem

from depkit.bdd import FALSE, BddManager
from depkit.cli import run
from depkit.coverage import (
    CategorySpace,
    catalog_from_dict,
    projection_coverage,
    projection_denominator,
    propose_next,
)
from depkit.metrics import Perturbation, perturbation_loss
from depkit.model import Affine, Example, Network, cross_entropy, input_gradient, layer_outputs_batch, random_network
from depkit.monitoring import build_monitor
from depkit.verification import COUNTEREXAMPLE, PROVED, Box, verify, verify_any
from depkit.verification.domains import propagate_interval
from depkit.verification.octagon import Octagon, propagate_octagon

pytestmark = pytest.mark.acceptance


@pytest.fixture
def outcome(capsys):
    """Print one result line per criterion, bypassing output capture."""

    def record(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip())
        assert ok, f"criterion {number} failed: {detail}"

    return record


def test_criterion_01_coverage_arithmetic(outcome):
    t0 = time.perf_counter()
    space = CategorySpace.from_sizes([3, 2, 2, 3, 2])
    d2 = projection_denominator(space, 2)
    d5 = projection_denominator(space, 5)
    elapsed = time.perf_counter() - t0
    outcome(1, "coverage denominators", d2 == 57 and d5 == 72 and elapsed < 1.0,
            f"k=2 -> {d2}, k=5 -> {d5}, {elapsed * 1e3:.2f} ms")


def test_criterion_02_coverage_oracle_equivalence(outcome):
    rng = np.random.default_rng(2)
    mismatches = 0
    for _ in range(200):
        sizes = [int(s) for s in rng.integers(2, 4, size=int(rng.integers(1, 5)))]
        k = int(rng.integers(1, min(2, len(sizes)) + 1))
        items = [tuple(int(rng.integers(s)) for s in sizes) for _ in range(int(rng.integers(0, 7)))]
        space = CategorySpace.from_sizes(sizes)
        ledger = projection_coverage(space, items, k)
        covered = {(tuple(c), tuple(v)) for c, v in ledger.covered}
        ok = covered == brute_covered(items, k)
        ok &= ledger.denominator == brute_denominator(sizes, k)
        [(_, gain)] = propose_next(space, ledger)
        ok &= gain == brute_best_gain(sizes, items, k)
        mismatches += not ok
    outcome(2, "coverage and top gain vs brute force", mismatches == 0, f"{mismatches}/200 mismatches")


def test_criterion_03_constraint_filtering(outcome):
    catalog = catalog_from_dict(ROAD_CATALOG)
    space = catalog.space
    rng = np.random.default_rng(3)
    bad = proposals = 0
    for _ in range(1000):
        items = [tuple(int(rng.integers(s)) for s in space.sizes) for _ in range(int(rng.integers(0, 9)))]
        ledger = projection_coverage(space, items, int(rng.integers(1, 4)))
        for item, _ in propose_next(space, ledger, catalog.constraints, count=3):
            names = space.decode(item)
            bad += names[0] == "sunny" and names[1] == "night"
            proposals += 1
    outcome(3, "no sunny+night proposal", bad == 0 and proposals > 0,
            f"{bad} violations in {proposals} proposals")


def _random_net_and_box(rng):
    depth = int(rng.integers(1, 4))
    sizes = [int(rng.integers(1, 5))] + [int(rng.integers(1, 7)) for _ in range(depth)] + [int(rng.integers(1, 5))]
    net = random_network(rng, sizes)
    lo = rng.uniform(-1, 0.5, sizes[0])
    return net, Box(lo, lo + rng.uniform(0.01, 1.5, sizes[0]))


def _octagon_violations(o: Octagon, h: np.ndarray) -> int:
    v = np.empty((h.shape[0], 2 * h.shape[1]))
    v[:, 0::2] = h
    v[:, 1::2] = -h
    diff = v[:, :, None] - v[:, None, :]
    return int(np.sum(np.any(diff > o.dbm, axis=(1, 2))))


def test_criterion_04_verification_soundness(outcome):
    rng = np.random.default_rng(4)
    violations = 0
    for _ in range(50):
        net, box = _random_net_and_box(rng)
        boxes = propagate_interval(net, box)
        octs = propagate_octagon(net, Octagon.from_box(box.lower, box.upper))
        xs = rng.uniform(box.lower, box.upper, (10_000, net.input_dim))
        for h, b, o in zip(layer_outputs_batch(net, xs), boxes, octs):
            violations += int(np.sum(np.any((h < b.lower) | (h > b.upper), axis=1)))
            violations += _octagon_violations(o, h)
    outcome(4, "concrete activations inside interval and octagon bounds", violations == 0,
            f"{violations} violations over 50 nets x 10^4 samples")


def test_criterion_05_octagon_dominance(outcome):
    rng = np.random.default_rng(4)  # the same nets as criterion 4
    worst = 0.0
    for _ in range(50):
        net, box = _random_net_and_box(rng)
        ib = propagate_interval(net, box)[-1]
        ob = propagate_octagon(net, Octagon.from_box(box.lower, box.upper))[-1]
        iw = ib.upper - ib.lower
        ow = ob.upper() - ob.lower()
        tighter = (ob.upper() <= ib.upper + 1e-12 * np.maximum(1, np.abs(ib.upper))) & (
            ob.lower() >= ib.lower - 1e-12 * np.maximum(1, np.abs(ib.lower)))
        ratio = np.where(iw > 0, ow / np.where(iw > 0, iw, 1), np.where(ow > 0, np.inf, 1.0))
        worst = max(worst, float(ratio.max()), 0.0 if tighter.all() else np.inf)
        rng.uniform(box.lower, box.upper, (10_000, net.input_dim))  # keep the stream aligned
    outcome(5, "octagon output bounds no wider than interval", worst <= 1.0 + 1e-12,
            f"worst width ratio {worst:.15f}")


def test_criterion_06_completeness_at_desk_scale(outcome):
    rng = np.random.default_rng(6)
    elapsed = 0.0
    mismatches = bad_witness = 0
    counts = {PROVED: 0, COUNTEREXAMPLE: 0}
    for i in range(100):
        sizes = [[2, 4, 4, 2], [3, 8, 2], [2, 3, 3, 2, 2]][i % 3]
        p, _ = boundary_problem(rng, sizes)
        expected = risk_reachable(p.net, p.input_box.lower, p.input_box.upper, [], p.risk)
        t0 = time.perf_counter()
        v = verify(p, budget=2**8, domain="interval" if i % 2 else "octagon")
        elapsed += time.perf_counter() - t0
        mismatches += v.status != (COUNTEREXAMPLE if expected else PROVED)
        if v.status == COUNTEREXAMPLE:
            bad_witness += not p.is_witness(v.witness_input)
        counts[v.status] = counts.get(v.status, 0) + 1
    ok = mismatches == 0 and bad_witness == 0 and elapsed < 60
    outcome(6, "verify matches phase enumeration", ok,
            f"{mismatches} mismatches, {bad_witness} bad witnesses, verdicts {counts}, verify time {elapsed:.1f} s")


def test_criterion_07_target_vehicle_property(outcome):
    results = []
    for leak in (0.0, 1.5):
        p, disjuncts = target_vehicle_problem(leak)
        reachable = any(
            risk_reachable(p.net, p.input_box.lower, p.input_box.upper, p.input_constraints, d)
            for d in disjuncts
        )
        for domain in ("interval", "octagon"):
            overall, _ = verify_any(p, disjuncts, budget=2**8, domain=domain)
            ok = overall.status == (COUNTEREXAMPLE if reachable else PROVED)
            if overall.status == COUNTEREXAMPLE:
                ok &= p.input_ok(overall.witness_input)
                ok &= int(np.argmax(overall.witness_output)) in (8, 9)
            results.append((leak, domain, overall.status, ok))
    expected_shape = [r[2] for r in results] == [PROVED, PROVED, COUNTEREXAMPLE, COUNTEREXAMPLE]
    ok = all(r[3] for r in results) and expected_shape
    outcome(7, "slots 9-10 empty never selects box 9 or 10", ok,
            "; ".join(f"leak={l} {d}: {s}" for l, d, s, _ in results))


def test_criterion_08_bdd_correctness(outcome):
    rng = np.random.default_rng(8)
    failures = 0
    for t in range(200):
        w = int(rng.integers(1, 13))
        n = int(rng.integers(0, min(2**w, 40) + 1))
        pats = {tuple(int(b) for b in rng.integers(0, 2, w)) for _ in range(n)}
        order = sorted(pats)
        mgr = BddManager(w)
        u = FALSE
        for p in order:
            u = mgr.insert(u, p)
        ok = all(mgr.contains(u, bits) == (bits in pats) for bits in itertools.product((0, 1), repeat=w))
        ok &= mgr.satcount(u) == len(pats)
        gamma = int(rng.integers(0, min(2, w) + 1))
        r = mgr.hamming_relax(u, gamma)
        ok &= set(mgr.iter_models(r)) == hamming_ball(pats, w, gamma)
        perm = [order[i] for i in rng.permutation(len(order))]
        v = FALSE
        for p in perm:
            v = mgr.insert(v, p)
        ok &= v == u
        failures += not ok
    outcome(8, "BDD membership, counting, relaxation, canonicity", failures == 0, f"{failures}/200 failing sets")


def test_criterion_09_monitor_semantics(outcome):
    rng = np.random.default_rng(9)
    unsupported_train = bad_warnings = warnings = 0
    for _ in range(20):
        net = random_network(rng, [2, 8, 6, 3])
        centers = rng.normal(0, 2, (3, 2))
        data = [Example(centers[c] + rng.normal(0, 0.5, 2), c) for c in range(3) for _ in range(15)]
        mon0 = build_monitor(net, data, gamma=0)
        for ex in data:
            v = mon0.check(net, ex.x)
            unsupported_train += v.predicted == ex.label and not v.supported
        recorded = [set() for _ in range(3)]
        for ex in data:
            recorded[ex.label].add(tuple(int(h > 0) for h in concrete_layers(net, ex.x)[-2]))
        for gamma in (0, 1, 2):
            mon = build_monitor(net, data, gamma=gamma)
            for x in rng.normal(0, 4, (50, 2)):
                v = mon.check(net, x)
                if not v.supported:
                    warnings += 1
                    bad_warnings += any(hamming(v.pattern, p) <= gamma for p in recorded[v.predicted])
    ok = unsupported_train == 0 and bad_warnings == 0 and warnings > 0
    outcome(9, "monitor supports training data, warnings are far", ok,
            f"{unsupported_train} unsupported training inputs, {bad_warnings}/{warnings} warnings within gamma")


def test_criterion_10_perturbation_loss_arithmetic(outcome):
    target = math.log(0.166 / 0.834)
    net = Network(1, (Affine([[-(50.0 - target)], [0.0]], [50.0, 0.0]),))
    report = perturbation_loss(net, [(np.zeros((1, 1, 1)), 0)], [Perturbation("haze", {"alpha": 1.0})])
    kind = report.kinds[0]
    p_orig = kind.raw_drops[0] + 0.166
    ok = abs(kind.losses[0] - 0.834) <= 1e-12 and abs(p_orig - 1.0) <= 1e-12
    outcome(10, "P_orig 1.0, P_pert 0.166 gives loss 0.834", ok, f"loss {kind.losses[0]:.15f}")


def _away_from_kinks(net, x, margin=1e-3):
    h = x
    for layer in net.layers:
        if isinstance(layer, Affine):
            h = layer.weights @ h + layer.bias
        else:
            if np.any(np.abs(h) < margin):
                return False
            h = np.maximum(h, 0)
    return True


def test_criterion_11_gradient_check(outcome):
    rng = np.random.default_rng(11)
    worst = 0.0
    pairs = 0
    step = 1e-4
    while pairs < 100:
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(1, 6))] + [int(rng.integers(2, 7)) for _ in range(depth)] + [int(rng.integers(2, 5))]
        net = random_network(rng, sizes)
        x = rng.normal(size=sizes[0])
        if not _away_from_kinks(net, x):
            continue
        label = int(rng.integers(sizes[-1]))
        fd = np.array([
            (cross_entropy(net, x + step * e, label) - cross_entropy(net, x - step * e, label)) / (2 * step)
            for e in np.eye(x.size)
        ])
        g = input_gradient(net, x, label)
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-6)))
        pairs += 1
    outcome(11, "input gradient vs central differences", worst <= 1e-4, f"worst relative error {worst:.2e}")


def _cli(capsys, argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_criterion_12_cli_reproducibility(outcome, capsys, tmp_path):
    files = write_all(tmp_path)
    runs = [
        ["coverage", "propose", "--catalog", files["catalog"], "--count", 3],
        ["verify", "--problem", files["tv_buggy_problem"], "--domain", "octagon", "--seed", 1],
        ["perturb", "--model", files["model"], "--data", files["data"], "--seed", 4],
        ["occlusion", "--model", files["model"], "--input", files["image"]],
    ]
    same = True
    for argv in runs:
        _, a, _ = _cli(capsys, argv)
        _, b, _ = _cli(capsys, argv)
        pa, pb = json.loads(a)["payload"], json.loads(b)["payload"]
        same &= json.dumps(pa, sort_keys=True).encode() == json.dumps(pb, sort_keys=True).encode()
    expected = {
        "coverage ok": (["coverage", "compute", "--catalog", files["catalog"]], 0),
        "coverage gate": (["coverage", "compute", "--catalog", files["catalog"], "--min-coverage", 0.9], 1),
        "verify proved": (["verify", "--problem", files["tv_ok_problem"]], 0),
        "verify counterexample": (["verify", "--problem", files["tv_buggy_problem"]], 1),
        "usage error": (["verify"], 2),
        "missing input": (["verify", "--problem", tmp_path / "missing.json"], 2),
    }
    codes = {name: _cli(capsys, argv)[0] for name, (argv, _) in expected.items()}
    exits_ok = all(codes[n] == want for n, (_, want) in expected.items())
    outcome(12, "CLI payloads reproducible, exit codes follow the gate contract", same and exits_ok,
            f"identical payloads: {same}; exit codes {codes}")
