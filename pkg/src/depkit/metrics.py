"""Robustness metrics: perturbation loss and occlusion sensitivity.

Images are float arrays of shape ``(height, width, channels)`` with values in
``[0, 1]``; networks consume them flattened in C order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import BadParameters, EmptyDataset, LabelOutOfRange
from .model import Network, forward, input_gradient, softmax


@dataclass(frozen=True)
class Perturbation:
    """A named perturbation with its parameters.

    Kinds and parameters: ``gaussian(sigma)``, ``haze(alpha)``,
    ``fog(alpha, blur_radius)``, ``snow(density, brightness)``,
    ``saltpepper(density)``, ``blur(radius)``, ``fgsm(epsilon)``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DEFAULTS:
            raise BadParameters(f"unknown perturbation {self.kind!r}")
        merged = dict(DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise BadParameters(f"{self.kind} takes no parameters {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        _validate(self.kind, merged)

    @property
    def name(self) -> str:
        return self.kind

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


DEFAULTS = {
    "gaussian": {"sigma": 0.1},
    "haze": {"alpha": 0.3},
    "fog": {"alpha": 0.5, "blur_radius": 2},
    "snow": {"density": 0.05, "brightness": 1.0},
    "saltpepper": {"density": 0.05},
    "blur": {"radius": 2},
    "fgsm": {"epsilon": 8 / 255},
}


def _validate(kind: str, p: dict) -> None:
    def unit(name):
        if not 0.0 <= p[name] <= 1.0:
            raise BadParameters(f"{kind}.{name} must lie in [0, 1]")

    def radius(name):
        r = p[name]
        if isinstance(r, bool) or int(r) != r or r < 1:
            raise BadParameters(f"{kind}.{name} must be an integer >= 1")

    if kind == "gaussian" and not p["sigma"] > 0:
        raise BadParameters("gaussian.sigma must be positive")
    if kind in ("haze", "fog"):
        unit("alpha")
    if kind == "fog":
        radius("blur_radius")
    if kind == "snow":
        unit("density")
        unit("brightness")
    if kind == "saltpepper":
        unit("density")
    if kind == "blur":
        radius("radius")
    if kind == "fgsm" and not p["epsilon"] > 0:
        raise BadParameters("fgsm.epsilon must be positive")


def parse_kinds(spec: str) -> list[Perturbation]:
    """``"gaussian,haze:alpha=0.5,fgsm"`` -> perturbations."""
    out = []
    for part in filter(None, (s.strip() for s in spec.split(","))):
        kind, _, rest = part.partition(":")
        params = {}
        for kv in filter(None, rest.split(";")):
            k, _, v = kv.partition("=")
            try:
                params[k] = float(v)
            except ValueError:
                raise BadParameters(f"bad parameter {kv!r}") from None
        out.append(Perturbation(kind, params))
    return out


def as_image(x, shape=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if shape is None:
        return x.reshape(1, -1, 1) if x.ndim == 1 else x
    shape = tuple(int(s) for s in shape)
    if len(shape) == 2:
        shape = shape + (1,)
    if len(shape) != 3 or int(np.prod(shape)) != x.size:
        raise BadParameters(f"shape {shape} does not match {x.size} values")
    return x.reshape(shape)


def box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    """Normalized box filter of side ``2 * radius - 1`` with clamp-to-edge borders."""
    size = 2 * int(radius) - 1
    if size == 1:
        return img.copy()
    return uniform_filter(img, size=(size, size, 1), mode="nearest")


def _pixel_choice(rng: np.random.Generator, img: np.ndarray, density: float) -> np.ndarray:
    h, w = img.shape[:2]
    n = int(round(density * h * w))
    return rng.choice(h * w, size=n, replace=False)


def perturb(img: np.ndarray, kind: Perturbation, seed: int = 0) -> np.ndarray:
    """Apply a non-gradient perturbation; the result is clamped to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise BadParameters("images must have shape (height, width, channels)")
    p = kind.params
    rng = np.random.default_rng(seed)
    k = kind.kind
    if k == "gaussian":
        out = img + rng.normal(0.0, p["sigma"], size=img.shape)
    elif k == "haze":
        out = (1.0 - p["alpha"]) * img + p["alpha"]
    elif k == "fog":
        out = box_blur((1.0 - p["alpha"]) * img + p["alpha"], int(p["blur_radius"]))
    elif k == "snow":
        out = img.copy()
        idx = _pixel_choice(rng, img, p["density"])
        flat = out.reshape(-1, img.shape[2])
        flat[idx] = p["brightness"]
    elif k == "saltpepper":
        out = img.copy()
        idx = _pixel_choice(rng, img, p["density"])
        flat = out.reshape(-1, img.shape[2])
        half = len(idx) // 2
        flat[idx[:half]] = 0.0
        flat[idx[half:]] = 1.0
    elif k == "blur":
        out = box_blur(img, int(p["radius"]))
    elif k == "fgsm":
        raise BadParameters("fgsm needs a network and label; use fgsm()")
    else:  # pragma: no cover - guarded by Perturbation
        raise BadParameters(k)
    return np.clip(out, 0.0, 1.0)


def fgsm(net: Network, img: np.ndarray, label: int, epsilon: float) -> np.ndarray:
    """One signed-gradient step of size ``epsilon`` on the cross-entropy loss."""
    if not epsilon > 0:
        raise BadParameters("epsilon must be positive")
    img = np.asarray(img, dtype=np.float64)
    g = input_gradient(net, img.ravel(), label)
    return np.clip(img + epsilon * np.sign(g).reshape(img.shape), 0.0, 1.0)


def label_probability(net: Network, img: np.ndarray, label: int) -> float:
    logits, _ = forward(net, np.asarray(img).ravel())
    if not 0 <= label < logits.size:
        raise LabelOutOfRange(f"label {label} outside 0..{logits.size - 1}")
    return float(softmax(logits)[label])


def probability_drop(p_orig: float, p_pert: float) -> float:
    """Clamped performance drop ``max(0, p_orig - p_pert)``."""
    return max(0.0, p_orig - p_pert)


@dataclass
class KindReport:
    perturbation: Perturbation
    losses: list[float]
    raw_drops: list[float]

    @property
    def average_loss(self) -> float:
        return float(sum(self.losses) / len(self.losses))

    @property
    def max_loss(self) -> float:
        return float(max(self.losses))

    def to_dict(self) -> dict:
        return {
            **self.perturbation.to_dict(),
            "average_loss": self.average_loss,
            "max_loss": self.max_loss,
            "per_example": [
                {"loss": l, "raw_drop": r} for l, r in zip(self.losses, self.raw_drops)
            ],
        }


@dataclass
class PerturbationReport:
    kinds: list[KindReport]

    def quantity(self, name: str) -> dict[str, float]:
        """``AVERAGE_LOSS`` or ``MAX_LOSS`` per perturbation kind."""
        if name == "AVERAGE_LOSS":
            return {k.perturbation.kind: k.average_loss for k in self.kinds}
        if name == "MAX_LOSS":
            return {k.perturbation.kind: k.max_loss for k in self.kinds}
        raise BadParameters(f"unknown quantity {name!r}")

    def to_dict(self) -> dict:
        return {"kinds": [k.to_dict() for k in self.kinds]}


def perturbation_loss(
    net: Network,
    dataset: Sequence[tuple[np.ndarray, int]],
    kinds: Sequence[Perturbation],
    seed: int = 0,
) -> PerturbationReport:
    """Drop of the true-label softmax probability under each perturbation.

    Example ``i`` uses seed ``seed ^ i``, so results do not depend on
    evaluation order.
    """
    if not dataset:
        raise EmptyDataset("perturbation loss needs at least one example")
    base = [label_probability(net, img, label) for img, label in dataset]
    reports = []
    for kind in kinds:
        losses, raw = [], []
        for i, ((img, label), p0) in enumerate(zip(dataset, base)):
            if kind.kind == "fgsm":
                pert = fgsm(net, img, label, kind.params["epsilon"])
            else:
                pert = perturb(img, kind, seed ^ i)
            p1 = label_probability(net, pert, label)
            raw.append(p0 - p1)
            losses.append(probability_drop(p0, p1))
        reports.append(KindReport(kind, losses, raw))
    return PerturbationReport(reports)


def occlusion_sensitivity(
    net: Network,
    img: np.ndarray,
    label: int,
    patch_size: int | None = None,
    stride: int | None = None,
    patch_value: float = 0.5,
) -> tuple[np.ndarray, float]:
    """Heatmap of label-probability drops when a square patch is grayed out."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise BadParameters("images must have shape (height, width, channels)")
    h, w = img.shape[:2]
    if patch_size is None:
        patch_size = max(1, min(h, w) // 4)
    if stride is None:
        stride = max(1, patch_size // 2)
    if not 1 <= patch_size <= min(h, w):
        raise BadParameters(f"patch size {patch_size} does not fit a {h}x{w} image")
    if stride < 1:
        raise BadParameters("stride must be at least 1")
    p0 = label_probability(net, img, label)
    rows = (h - patch_size) // stride + 1
    cols = (w - patch_size) // stride + 1
    heat = np.zeros((rows, cols))
    for r in range(rows):
        for c in range(cols):
            occ = img.copy()
            y, x = r * stride, c * stride
            occ[y : y + patch_size, x : x + patch_size, :] = patch_value
            heat[r, c] = p0 - label_probability(net, occ, label)
    return heat, float(heat.max())


def heatmap_pgm(heat: np.ndarray) -> bytes:
    """Binary 8-bit PGM of a heatmap, scaled to its own min/max."""
    lo, hi = float(heat.min()), float(heat.max())
    scaled = np.zeros_like(heat) if hi == lo else (heat - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    header = f"P5\n{heat.shape[1]} {heat.shape[0]}\n255\n".encode()
    return header + pixels.tobytes()
