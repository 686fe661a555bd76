"""Runtime monitor over binarized neuron activation patterns.

At build time every training input is run through the network, the monitored
ReLU layer is binarized (bit set iff activation > threshold) and the pattern
is added to the BDD of the input's labeled class.  Each class BDD is then
enlarged to all patterns within Hamming distance ``gamma``.  At run time a
decision is *supported* iff the pattern of the input is accepted by the BDD
of the predicted class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .bdd import FALSE, BddManager
from .errors import LabelOutOfRange, LayerNotMonitorable, MalformedInput
from .model import FORMAT, ActivationTrace, Example, Network, ReLU, forward


def resolve_layer(net: Network, layer: int | None) -> int:
    """Index into ``net.layers`` of a monitorable (ReLU) layer.

    ``None`` means the last ReLU layer; negative values count backwards
    through the ReLU layers only (``-1`` is the last ReLU layer).
    """
    relus = net.relu_layers()
    if layer is None:
        layer = -1
    if layer < 0:
        if -layer > len(relus):
            raise LayerNotMonitorable(f"network has only {len(relus)} ReLU layers")
        return relus[layer]
    if layer >= len(net.layers):
        raise LayerNotMonitorable(f"layer {layer} does not exist")
    if not isinstance(net.layers[layer], ReLU):
        raise LayerNotMonitorable(f"layer {layer} is not a ReLU output")
    return layer


def binarize(trace: ActivationTrace, layer: int, threshold: float = 0.0) -> tuple[int, ...]:
    if not -len(trace) <= layer < len(trace):
        raise LayerNotMonitorable(f"layer {layer} does not exist")
    if trace.kinds[layer] != "relu":
        raise LayerNotMonitorable(f"layer {layer} is not a ReLU output")
    return tuple(int(v > threshold) for v in trace.per_layer[layer])


@dataclass(frozen=True)
class MonitorVerdict:
    supported: bool
    predicted: int
    pattern: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "verdict": "supported" if self.supported else "warning",
            "predicted_class": self.predicted,
            "pattern": "".join(map(str, self.pattern)),
        }


class Monitor:
    """Per-class activation-pattern BDDs for one network layer."""

    def __init__(
        self,
        manager: BddManager,
        layer: int,
        roots: list[int],
        gamma: int,
        pattern_counts: list[int],
        model_digest: str | None = None,
        threshold: float = 0.0,
    ):
        self.manager = manager
        self.layer = layer
        self.roots = roots
        self.gamma = gamma
        self.pattern_counts = pattern_counts
        self.model_digest = model_digest
        self.threshold = threshold

    @property
    def width(self) -> int:
        return self.manager.num_vars

    def check(self, net: Network, x) -> MonitorVerdict:
        logits, trace = forward(net, x)
        predicted = int(np.argmax(logits))
        pattern = binarize(trace, self.layer, self.threshold)
        supported = self.manager.contains(self.roots[predicted], pattern)
        return MonitorVerdict(supported, predicted, pattern)

    def stats(self) -> dict:
        return {
            "layer": self.layer,
            "width": self.width,
            "gamma": self.gamma,
            "classes": [
                {
                    "class": c,
                    "patterns_recorded": self.pattern_counts[c],
                    "patterns_accepted": self.manager.satcount(root),
                    "bdd_nodes": self.manager.node_count(root),
                }
                for c, root in enumerate(self.roots)
            ],
        }

    def to_dict(self) -> dict:
        nodes, roots = self.manager.export(self.roots)
        return {
            "format": FORMAT,
            "model_sha256": self.model_digest,
            "layer": self.layer,
            "width": self.width,
            "gamma": self.gamma,
            "threshold": self.threshold,
            "pattern_counts": list(self.pattern_counts),
            "nodes": nodes,
            "roots": roots,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Monitor":
        if not isinstance(data, dict) or data.get("format") != FORMAT:
            raise MalformedInput("monitor file must be a depkit/1 object")
        try:
            manager = BddManager(int(data["width"]))
            roots = manager.load(data["nodes"], data["roots"])
            return cls(
                manager,
                int(data["layer"]),
                roots,
                int(data["gamma"]),
                list(data["pattern_counts"]),
                data.get("model_sha256"),
                float(data.get("threshold", 0.0)),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise MalformedInput(f"bad monitor file: {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "Monitor":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise MalformedInput(f"cannot read monitor {path}: {exc}") from None
        return cls.from_dict(data)


def build_monitor(
    net: Network,
    dataset: Sequence[Example] | Sequence[tuple],
    layer: int | None = None,
    gamma: int = 0,
    threshold: float = 0.0,
) -> Monitor:
    """Record the binarized patterns of ``dataset`` per labeled class."""
    layer = resolve_layer(net, layer)
    width = net.widths[layer]
    if not 0 <= gamma <= width:
        raise MalformedInput(f"gamma must lie in 0..{width}")
    manager = BddManager(width)
    n_classes = net.output_dim
    roots = [FALSE] * n_classes
    seen: list[set] = [set() for _ in range(n_classes)]
    for ex in dataset:
        x, label = (ex.x, ex.label) if isinstance(ex, Example) else ex
        if not 0 <= label < n_classes:
            raise LabelOutOfRange(f"label {label} outside 0..{n_classes - 1}")
        _, trace = forward(net, x)
        pattern = binarize(trace, layer, threshold)
        seen[label].add(pattern)
        roots[label] = manager.insert(roots[label], pattern)
    roots = [manager.hamming_relax(r, gamma) for r in roots]
    return Monitor(manager, layer, roots, gamma, [len(s) for s in seen], net.digest(), threshold)


def check(monitor: Monitor, net: Network, x) -> MonitorVerdict:
    return monitor.check(net, x)
