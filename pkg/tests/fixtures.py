"""Synthetic fixtures shared by the CLI and acceptance tests."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from depkit.model import (
    Affine,
    Example,
    Network,
    ReLU,
    predict,
    random_network,
    save_dataset,
    save_network,
)
from depkit.verification import Box, LinearConstraint, VerificationProblem, argmax_risk

ROAD_CATALOG = {
    "format": "depkit/1",
    "categories": [
        {"name": "weather", "values": ["cloudy", "rainy", "sunny"]},
        {"name": "day", "values": ["day", "night"]},
        {"name": "lane", "values": ["inner", "outer"]},
        {"name": "curvature", "values": ["straight", "left_bending", "right_bending"]},
        {"name": "surface", "values": ["dry", "wet"]},
    ],
    "constraints": [{"terms": [["weather", "sunny", 1], ["day", "night", 1]], "lower": 0, "upper": 1}],
    "items": [
        ["sunny", "day", "inner", "straight", "dry"],
        ["rainy", "night", "outer", "left_bending", "wet"],
    ],
}

# --- target-vehicle fixture ---------------------------------------------------
#
# Inputs: ten slot occupancy values (slot j holds a vehicle with score x_j in
# [0, 1]) followed by a lane offset in [-1, 1].  Outputs: one logit per slot
# plus a final "no target vehicle" logit.  Slots 0-6 are pinned to a fixed
# scene so the exhaustive oracle stays small; slots 7-9 and the lane are free.
# The input constraints say slots 8 and 9 are empty.

SLOTS = 10
SCENE = [0.0, 0.2, 0.0, 0.0, 0.1, 0.0, 0.0]
EMPTY_SLOTS = (8, 9)


def target_vehicle_net(leak: float) -> Network:
    """``leak`` couples the lane offset into the slot-9 logit; 0 is well-behaved."""
    n_in = SLOTS + 1
    w1 = np.zeros((6, n_in))
    w1[0, 7] = 1.0  # h0 = relu(x7)
    w1[1, 8] = 1.0  # h1 = relu(x8)
    w1[2, 9] = 1.0  # h2 = relu(x9)
    w1[3, 10] = 1.0  # h3 = relu(lane)
    w1[4, 10] = -1.0  # h4 = relu(-lane)
    w1[5, :7] = 1.0  # h5 = relu(sum of pinned slots)
    b1 = np.array([0.0, 0.0, 0.0, -0.2, -0.2, -0.1])
    w2 = np.zeros((SLOTS + 1, 6))
    b2 = np.full(SLOTS + 1, -1.0)
    w2[:7, 5] = 0.3
    w2[7, 0], b2[7] = 2.0, -0.5
    w2[8, 1], w2[8, 4], b2[8] = 2.0, 0.4, -0.5
    w2[9, 2], w2[9, 3], b2[9] = 2.0, 0.2 + leak, -0.5
    b2[10] = 0.5
    labels = tuple(f"box{j + 1}" for j in range(SLOTS)) + ("none",)
    return Network(n_in, (Affine(w1, b1), ReLU(), Affine(w2, b2)), labels)


def target_vehicle_box() -> Box:
    lo = np.array(SCENE + [0.0, 0.0, 0.0, -1.0])
    hi = np.array(SCENE + [1.0, 1.0, 1.0, 1.0])
    return Box(lo, hi)


def target_vehicle_constraints() -> list[LinearConstraint]:
    out = []
    for j in EMPTY_SLOTS:
        c = np.zeros(SLOTS + 1)
        c[j] = 1.0
        out.append(LinearConstraint(c, 0.0, "<="))
    return out


def target_vehicle_problem(leak: float):
    net = target_vehicle_net(leak)
    disjuncts = [argmax_risk(net.output_dim, j) for j in EMPTY_SLOTS]
    problem = VerificationProblem(net, target_vehicle_box(), target_vehicle_constraints(), disjuncts[0])
    return problem, disjuncts


# --- small image classifier --------------------------------------------------


def blob_classifier(seed: int = 0):
    """A 4x4 grayscale, 3-class random net and a labeled dataset for it."""
    rng = np.random.default_rng(seed)
    net = random_network(rng, [16, 8, 3])
    data = []
    for i in range(9):
        x = rng.random(16)
        label = predict(net, x)
        if i % 3 == 0:
            label = (label + 1) % 3  # a few mislabeled examples
        data.append(Example(x, label, None, (4, 4, 1)))
    return net, data


def write_all(root: Path) -> dict:
    """Write every fixture file under ``root``; returns their paths by name."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["catalog"] = root / "catalog.json"
    paths["catalog"].write_text(json.dumps(ROAD_CATALOG, indent=1))
    for name, leak in (("tv_ok", 0.0), ("tv_buggy", 1.5)):
        save_network(target_vehicle_net(leak), root / f"{name}.json")
        problem = {
            "format": "depkit/1",
            "model": f"{name}.json",
            "input_box": {"lower": target_vehicle_box().lower.tolist(),
                          "upper": target_vehicle_box().upper.tolist()},
            "input_constraints": [c.to_dict() for c in target_vehicle_constraints()],
            "risk_argmax": list(EMPTY_SLOTS),
        }
        paths[f"{name}_problem"] = root / f"{name}_problem.json"
        paths[f"{name}_problem"].write_text(json.dumps(problem, indent=1))
    net, data = blob_classifier()
    paths["model"] = root / "classifier.json"
    save_network(net, paths["model"])
    paths["data"] = root / "images.jsonl"
    save_dataset(data, paths["data"])
    paths["image"] = root / "image.json"
    paths["image"].write_text(json.dumps({"format": "depkit/1", "x": data[0].x.tolist(),
                                          "shape": [4, 4, 1], "label": data[0].label}))
    return paths
