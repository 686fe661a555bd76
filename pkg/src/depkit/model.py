"""Feedforward ReLU networks: loading, evaluation and input gradients.

Networks are stored as raw-logit models (no trailing softmax) in a small JSON
format::

    {"format": "depkit/1", "input_dim": 2, "class_labels": ["a", "b"],
     "layers": [{"kind": "affine", "weights": [[...], ...], "bias": [...]},
                {"kind": "relu"}, ...]}

Weight rows correspond to output neurons.  All arithmetic is float64.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    LabelOutOfRange,
    MalformedInput,
    MalformedModel,
    NonFiniteWeight,
)

FORMAT = "depkit/1"


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Affine:
    weights: np.ndarray
    bias: np.ndarray
    kind: str = field(default="affine", init=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "bias", _frozen(self.bias))
        if self.weights.ndim != 2:
            raise MalformedModel("affine weights must be a matrix")
        if self.bias.shape != (self.weights.shape[0],):
            raise DimensionMismatch(
                f"bias length {self.bias.shape} does not match {self.weights.shape[0]} outputs"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NonFiniteWeight("affine layer contains a non-finite entry")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class ReLU:
    kind: str = field(default="relu", init=False)


Layer = Affine | ReLU


@dataclass(frozen=True)
class ActivationTrace:
    """Post-activation output of every layer, in layer order."""

    per_layer: tuple[np.ndarray, ...]
    kinds: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.per_layer)


@dataclass(frozen=True, eq=False)
class Network:
    input_dim: int
    layers: tuple[Layer, ...]
    class_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.class_labels is not None:
            object.__setattr__(self, "class_labels", tuple(self.class_labels))
        if not isinstance(self.input_dim, int) or self.input_dim < 1:
            raise MalformedModel("input_dim must be a positive integer")
        if not self.layers:
            raise MalformedModel("network needs at least one layer")
        width = self.input_dim
        widths = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Affine):
                if layer.in_dim != width:
                    raise DimensionMismatch(
                        f"layer {i} expects {layer.in_dim} inputs, previous width is {width}"
                    )
                width = layer.out_dim
            elif not isinstance(layer, ReLU):
                raise MalformedModel(f"unsupported layer {layer!r}")
            widths.append(width)
        object.__setattr__(self, "_widths", tuple(widths))
        if self.class_labels is not None and len(self.class_labels) != width:
            raise DimensionMismatch(
                f"{len(self.class_labels)} class labels for {width} outputs"
            )

    @property
    def widths(self) -> tuple[int, ...]:
        """Output width of every layer."""
        return self._widths

    @property
    def output_dim(self) -> int:
        return self._widths[-1]

    def relu_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, ReLU)]

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            if isinstance(layer, Affine):
                layers.append(
                    {
                        "kind": "affine",
                        "weights": layer.weights.tolist(),
                        "bias": layer.bias.tolist(),
                    }
                )
            else:
                layers.append({"kind": "relu"})
        out = {"format": FORMAT, "input_dim": self.input_dim}
        if self.class_labels is not None:
            out["class_labels"] = list(self.class_labels)
        out["layers"] = layers
        return out

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def network_from_dict(data: dict) -> Network:
    if not isinstance(data, dict):
        raise MalformedModel("model must be a JSON object")
    fmt = data.get("format", FORMAT)
    if fmt != FORMAT:
        raise MalformedModel(f"unsupported format {fmt!r}")
    unknown = set(data) - {"format", "input_dim", "class_labels", "layers"}
    if unknown:
        raise MalformedModel(f"unknown model fields {sorted(unknown)}")
    try:
        input_dim = data["input_dim"]
        raw_layers = data["layers"]
    except KeyError as exc:
        raise MalformedModel(f"missing field {exc}") from None
    if isinstance(input_dim, bool) or not isinstance(input_dim, int):
        raise MalformedModel("input_dim must be an integer")
    if not isinstance(raw_layers, list):
        raise MalformedModel("layers must be a list")
    layers: list[Layer] = []
    for i, raw in enumerate(raw_layers):
        if not isinstance(raw, dict) or "kind" not in raw:
            raise MalformedModel(f"layer {i} has no kind")
        kind = raw["kind"]
        if kind == "relu":
            if set(raw) != {"kind"}:
                raise MalformedModel(f"relu layer {i} carries parameters")
            layers.append(ReLU())
        elif kind == "affine":
            w, b = raw.get("weights"), raw.get("bias")
            if not isinstance(w, list) or not w or not all(isinstance(r, list) for r in w):
                raise MalformedModel(f"layer {i}: weights must be a nonempty list of rows")
            if len({len(r) for r in w}) != 1 or len(w[0]) == 0:
                raise MalformedModel(f"layer {i}: weight matrix is not rectangular")
            if not isinstance(b, list):
                raise MalformedModel(f"layer {i}: bias must be a list")
            try:
                layers.append(Affine(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)))
            except (TypeError, ValueError) as exc:
                raise MalformedModel(f"layer {i}: {exc}") from None
        else:
            raise MalformedModel(f"layer {i}: unsupported kind {kind!r}")
    labels = data.get("class_labels")
    if labels is not None and (
        not isinstance(labels, list) or not all(isinstance(s, str) for s in labels)
    ):
        raise MalformedModel("class_labels must be a list of strings")
    return Network(input_dim, tuple(layers), labels)


def load_network(path: str | Path) -> Network:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedModel(f"cannot read model {path}: {exc}") from None
    try:
        # Python's float parser and repr round-trip float64 exactly.
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise MalformedModel(f"model is not valid JSON: {exc}") from None
    return network_from_dict(data)


def _reject_constant(name):
    raise NonFiniteWeight(f"non-finite literal {name} in model file")


def save_network(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(net.to_dict(), indent=1))


def _as_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise DimensionMismatch(f"input shape {x.shape}, network expects ({net.input_dim},)")
    return x


def forward(net: Network, x) -> tuple[np.ndarray, ActivationTrace]:
    """Evaluate the network, returning logits and the per-layer trace."""
    h = _as_input(net, x)
    outs = []
    for layer in net.layers:
        if isinstance(layer, Affine):
            h = layer.weights @ h + layer.bias
        else:
            h = np.maximum(h, 0.0)
        outs.append(h)
    trace = ActivationTrace(tuple(outs), tuple(layer.kind for layer in net.layers))
    return h, trace


def forward_batch(net: Network, xs) -> np.ndarray:
    """Logits for a batch of inputs (rows)."""
    h = np.asarray(xs, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != net.input_dim:
        raise DimensionMismatch(f"batch shape {h.shape}, network expects (*, {net.input_dim})")
    for layer in net.layers:
        if isinstance(layer, Affine):
            h = h @ layer.weights.T + layer.bias
        else:
            h = np.maximum(h, 0.0)
    return h


def layer_outputs_batch(net: Network, xs) -> list[np.ndarray]:
    h = np.asarray(xs, dtype=np.float64)
    outs = []
    for layer in net.layers:
        if isinstance(layer, Affine):
            h = h @ layer.weights.T + layer.bias
        else:
            h = np.maximum(h, 0.0)
        outs.append(h)
    return outs


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise DimensionMismatch("softmax expects a nonempty vector")
    e = np.exp(z - z.max())
    return e / e.sum()


def predict(net: Network, x) -> int:
    """Argmax class; ties go to the lowest index."""
    logits, _ = forward(net, x)
    return int(np.argmax(logits))


def cross_entropy(net: Network, x, label: int) -> float:
    logits, _ = forward(net, x)
    _check_label(net, label)
    z = logits - logits.max()
    return float(math.log(np.exp(z).sum()) - z[label])


def _check_label(net: Network, label: int) -> None:
    if not 0 <= label < net.output_dim:
        raise LabelOutOfRange(f"label {label} outside 0..{net.output_dim - 1}")


def input_gradient(net: Network, x, label: int) -> np.ndarray:
    """Gradient of ``-log softmax(f(x))[label]`` with respect to ``x``.

    The ReLU derivative at exactly zero is taken to be 0.
    """
    x = _as_input(net, x)
    _check_label(net, label)
    logits, trace = forward(net, x)
    g = softmax(logits)
    g[label] -= 1.0
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if isinstance(layer, Affine):
            g = layer.weights.T @ g
        else:
            pre = trace.per_layer[i - 1] if i > 0 else x
            g = np.where(pre > 0, g, 0.0)
    return g


def jacobian(net: Network, x) -> np.ndarray:
    """d logits / d x at ``x`` (ReLU derivative 0 at 0)."""
    x = _as_input(net, x)
    _, trace = forward(net, x)
    J = np.eye(net.input_dim)
    prev = x
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Affine):
            J = layer.weights @ J
        else:
            J = np.where((prev > 0)[:, None], J, 0.0)
        prev = trace.per_layer[i]
    return J


# --- datasets ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Example:
    x: np.ndarray
    label: int
    tags: dict | None = None
    shape: tuple[int, ...] | None = None


def load_dataset(path: str | Path) -> list[Example]:
    """Read a JSON-lines dataset.

    Each line is ``{"x": [...], "label": int, "tags": {...}?, "shape": [h, w, c]?}``;
    a line holding only ``{"format": "depkit/1"}`` is treated as a header.
    """
    examples = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise MalformedInput(f"cannot read dataset {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"{path}:{lineno}: {exc}") from None
        if not isinstance(rec, dict):
            raise MalformedInput(f"{path}:{lineno}: expected an object")
        if rec.get("format", FORMAT) != FORMAT:
            raise MalformedInput(f"{path}:{lineno}: unsupported format {rec['format']!r}")
        if set(rec) == {"format"}:
            continue
        try:
            x = np.array(rec["x"], dtype=np.float64)
            label = rec["label"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedInput(f"{path}:{lineno}: bad record ({exc})") from None
        if isinstance(label, bool) or not isinstance(label, int):
            raise MalformedInput(f"{path}:{lineno}: label must be an integer")
        shape = tuple(rec["shape"]) if rec.get("shape") is not None else None
        examples.append(Example(x, label, rec.get("tags"), shape))
    return examples


def save_dataset(examples: Iterable[Example], path: str | Path) -> None:
    lines = [json.dumps({"format": FORMAT})]
    for ex in examples:
        rec = {"x": np.asarray(ex.x).tolist(), "label": int(ex.label)}
        if ex.tags is not None:
            rec["tags"] = ex.tags
        if ex.shape is not None:
            rec["shape"] = list(ex.shape)
        lines.append(json.dumps(rec))
    Path(path).write_text("\n".join(lines) + "\n")


def random_network(
    rng: np.random.Generator, sizes: Sequence[int], scale: float = 1.0
) -> Network:
    """ReLU MLP with Gaussian weights; ``sizes`` lists every layer width incl. input."""
    layers: list[Layer] = []
    for i in range(len(sizes) - 1):
        w = rng.normal(0.0, scale / math.sqrt(sizes[i]), size=(sizes[i + 1], sizes[i]))
        b = rng.normal(0.0, 0.5 * scale, size=sizes[i + 1])
        layers.append(Affine(w, b))
        if i < len(sizes) - 2:
            layers.append(ReLU())
    return Network(int(sizes[0]), tuple(layers))
