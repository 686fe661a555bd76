"""``depkit`` command line.

Exit codes: 0 success, 1 a finding a CI gate should fail on (counterexample,
monitor warning, coverage below ``--min-coverage``), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import coverage as cov
from . import metrics
from .errors import DepkitError, MalformedInput
from .model import FORMAT, load_dataset, load_network
from .monitoring import Monitor, build_monitor
from .report import make_report, write_atomic
from .verification import COUNTEREXAMPLE, UNKNOWN, load_problem, verify_any
from .verification.domains import propagate_interval, tighten_box

log = logging.getLogger("depkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out", help="write the report here (default: stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="data-parallel width where supported")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="depkit", description="Dependability analyses for feedforward networks")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    coverage = sub.add_parser("coverage", help="scenario k-projection coverage")
    csub = coverage.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name in ("compute", "propose"):
        p = csub.add_parser(name, parents=[common])
        p.add_argument("--catalog", required=True)
        p.add_argument("--k", type=int, default=2)
        p.add_argument("--min-coverage", type=float)
        p.add_argument("--feasible-denominator", action="store_true",
                       help="only count tuples that some feasible assignment contains")
        if name == "propose":
            p.add_argument("--count", type=int, default=1)
            p.add_argument("--greedy", action="store_true",
                           help="fast heuristic search without optimality guarantee")

    p = sub.add_parser("verify", parents=[common], help="reachability of a risk property")
    p.add_argument("--problem", required=True)
    p.add_argument("--domain", choices=["interval", "octagon"], default="interval")
    p.add_argument("--budget", type=int, default=256)

    monitor = sub.add_parser("monitor", help="activation-pattern runtime monitor")
    msub = monitor.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = msub.add_parser("build", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layer", type=int, default=-1,
                   help="ReLU layer to monitor; negative values count ReLU layers from the end")
    p.add_argument("--gamma", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--report", help="write the report here; --out receives the monitor file")
    p = msub.add_parser("check", parents=[common])
    p.add_argument("--monitor", required=True)
    p.add_argument("--model", help="defaults to the model path recorded in the monitor")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--input")
    group.add_argument("--data")

    p = sub.add_parser("perturb", parents=[common], help="perturbation loss metric")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--kinds", default="gaussian,haze,fog,snow,saltpepper,blur,fgsm")
    p.add_argument("--shape", help="image shape h,w,c when the dataset does not carry one")

    p = sub.add_parser("occlusion", parents=[common], help="occlusion sensitivity heatmap")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--label", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--patch-value", type=float, default=0.5)
    p.add_argument("--pgm", help="also write the heatmap as a grayscale PGM image")
    return parser


def _read_json(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedInput(f"cannot read {path}: {exc}") from None
    if not isinstance(data, dict) or data.get("format", FORMAT) != FORMAT:
        raise MalformedInput(f"{path} must be a depkit/1 JSON object")
    return data


def _fraction(fr) -> dict:
    return {"numerator": fr.numerator, "denominator": fr.denominator, "decimal": float(fr)}


def cmd_coverage(args):
    catalog = cov.load_catalog(args.catalog)
    space = catalog.space
    ledger = cov.projection_coverage(
        space, catalog.items, args.k, catalog.constraints, args.feasible_denominator
    )
    payload = {
        "k": args.k,
        "categories": [{"name": n, "values": list(v)} for n, v in space.categories],
        "items": len(catalog.items),
        "covered": len(ledger.covered),
        "denominator": ledger.denominator,
        "ratio": _fraction(ledger.ratio),
    }
    exit_code = 0
    if args.action == "propose":
        proposals = cov.propose_next(space, ledger, catalog.constraints, args.count, args.greedy)
        payload["proposals"] = [
            {
                "item": space.decode(item),
                "gain": gain,
                "gain_ratio": _fraction(cov.Fraction(gain, ledger.denominator)),
            }
            for item, gain in proposals
        ]
        payload["search"] = "greedy" if args.greedy else "exact"
    if args.min_coverage is not None:
        payload["min_coverage"] = args.min_coverage
        payload["gate_passed"] = float(ledger.ratio) >= args.min_coverage
        if not payload["gate_passed"]:
            exit_code = 1
    echo = {"k": args.k, "feasible_denominator": args.feasible_denominator,
            "min_coverage": args.min_coverage}
    if args.action == "propose":
        echo.update(count=args.count, greedy=args.greedy)
    return f"coverage {args.action}", echo, {"catalog": args.catalog}, payload, exit_code


def cmd_verify(args):
    problem, disjuncts = load_problem(args.problem)
    overall, verdicts = verify_any(
        problem, disjuncts, budget=args.budget, domain=args.domain, seed=args.seed
    )
    box = tighten_box(problem.input_box, problem.input_constraints)
    layers = []
    if box is not None:
        for i, b in enumerate(propagate_interval(problem.net, box)):
            layers.append({"layer": i, "lower": b.lower.tolist(), "upper": b.upper.tolist()})
    payload = {
        **overall.to_dict(),
        "domain": args.domain,
        "disjuncts": [v.to_dict() for v in verdicts],
        "interval_bounds": layers,
    }
    code = {COUNTEREXAMPLE: 1, UNKNOWN: 1}.get(overall.status, 0)
    echo = {"domain": args.domain, "budget": args.budget, "seed": args.seed}
    return "verify", echo, {"problem": args.problem}, payload, code


def cmd_monitor(args):
    if args.action == "build":
        net = load_network(args.model)
        data = load_dataset(args.data)
        mon = build_monitor(net, data, args.layer, args.gamma, args.threshold)
        doc = mon.to_dict()
        doc["model_path"] = str(Path(args.model).resolve())
        if args.out:
            write_atomic(args.out, json.dumps(doc))
        payload = mon.stats()
        echo = {"layer": args.layer, "gamma": args.gamma, "threshold": args.threshold}
        return "monitor build", echo, {"model": args.model, "data": args.data}, payload, 0
    doc = _read_json(args.monitor)
    mon = Monitor.from_dict(doc)
    model_path = args.model or doc.get("model_path")
    if model_path is None:
        raise MalformedInput("monitor does not record its model; pass --model")
    net = load_network(model_path)
    if mon.model_digest and mon.model_digest != net.digest():
        raise MalformedInput("model does not match the monitor's recorded model hash")
    if args.input:
        xs = [np.array(_read_json(args.input)["x"], dtype=np.float64)]
        inputs = {"monitor": args.monitor, "input": args.input}
    else:
        xs = [ex.x for ex in load_dataset(args.data)]
        inputs = {"monitor": args.monitor, "data": args.data}
    results = [mon.check(net, x).to_dict() for x in xs]
    warnings = sum(r["verdict"] == "warning" for r in results)
    payload = {"checked": len(results), "warnings": warnings, "results": results}
    return "monitor check", {}, inputs, payload, 1 if warnings else 0


def _image_dataset(examples, shape_arg):
    shape = tuple(int(s) for s in shape_arg.split(",")) if shape_arg else None
    return [(metrics.as_image(ex.x, ex.shape or shape), ex.label) for ex in examples]


def cmd_perturb(args):
    net = load_network(args.model)
    data = _image_dataset(load_dataset(args.data), args.shape)
    kinds = metrics.parse_kinds(args.kinds)
    if args.jobs > 1:
        with ThreadPoolExecutor(args.jobs) as pool:
            parts = list(pool.map(
                lambda k: metrics.perturbation_loss(net, data, [k], args.seed), kinds))
        report = metrics.PerturbationReport([p.kinds[0] for p in parts])
    else:
        report = metrics.perturbation_loss(net, data, kinds, args.seed)
    payload = report.to_dict()
    payload["examples"] = len(data)
    echo = {"kinds": args.kinds, "seed": args.seed}
    return "perturb", echo, {"model": args.model, "data": args.data}, payload, 0


def cmd_occlusion(args):
    net = load_network(args.model)
    doc = _read_json(args.input)
    img = metrics.as_image(doc["x"], doc.get("shape"))
    label = args.label if args.label is not None else doc.get("label")
    if label is None:
        raise MalformedInput("occlusion needs a label (--label or 'label' in the input file)")
    heat, max_drop = metrics.occlusion_sensitivity(
        net, img, int(label), args.patch, args.stride, args.patch_value
    )
    if args.pgm:
        write_atomic(args.pgm, metrics.heatmap_pgm(heat))
    payload = {"label": int(label), "heatmap": heat.tolist(), "max_drop": max_drop}
    echo = {"patch": args.patch, "stride": args.stride, "patch_value": args.patch_value}
    return "occlusion", echo, {"model": args.model, "input": args.input}, payload, 0


COMMANDS = {
    "coverage": cmd_coverage,
    "verify": cmd_verify,
    "monitor": cmd_monitor,
    "perturb": cmd_perturb,
    "occlusion": cmd_occlusion,
}


def _fail(kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return 2


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc))
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2))
    try:
        sub, echo, inputs, payload, code = COMMANDS[args.command](args)
        report = make_report(sub, echo, inputs, payload)
        text = json.dumps(report, indent=1, sort_keys=True) + "\n"
        dest = args.report if sub == "monitor build" else args.out
        if dest:
            write_atomic(dest, text)
        else:
            sys.stdout.write(text)
    except DepkitError as exc:
        return _fail(exc.code, str(exc))
    except (OSError, KeyError, ValueError) as exc:
        return _fail("input", f"{type(exc).__name__}: {exc}")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
