"""Built-environment change from segmentation masks, plus the noise harness."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, UsageError
from .networks import Dataset, NetworkModel, evaluate, forward_segment

NOISE_KINDS = ("gaussian", "salt-pepper", "blocky")
# published clean-test losses, echoed by the CLI for comparison
REFERENCE_CLEAN_LOSS = {"classifier": 0.05, "parser": 0.21}


class SegmentationMask:
    """Binary built (1) / non-built (0) labelling of an image, stored (H, W)."""

    def __init__(self, labels):
        labels = np.asarray(labels)
        if labels.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got shape {labels.shape}")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise UsageError("mask values must be 0 or 1")
        self.labels = labels.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, SegmentationMask) and np.array_equal(self.labels, other.labels)

    def __repr__(self) -> str:
        return f"SegmentationMask({self.height}x{self.width}, built={int(self.labels.sum())})"


def _labels(mask) -> np.ndarray:
    return mask.labels if isinstance(mask, SegmentationMask) else SegmentationMask(mask).labels


def built_fraction(mask) -> float:
    lab = _labels(mask)
    if lab.size == 0:
        raise UsageError("mask has zero area")
    return int(np.count_nonzero(lab)) / lab.size


def change_rate(pre, post, relative: bool = True) -> float:
    """Relative loss of built area, (pre - post) / pre.

    1.0 is total destruction; a negative value means the built area grew and
    is returned as is. ``relative=False`` gives the plain difference pre - post.
    """
    a, b = _labels(pre), _labels(post)
    if a.shape != b.shape:
        raise UsageError(f"mask sizes differ: {a.shape} vs {b.shape}")
    fa, fb = built_fraction(a), built_fraction(b)
    if not relative:
        return fa - fb
    if fa == 0:
        raise UsageError("pre-disaster mask has no built area; change rate is undefined")
    return (fa - fb) / fa


def pixel_accuracy(pred, truth) -> float:
    p, t = _labels(pred), _labels(truth)
    if p.shape != t.shape:
        raise UsageError("mask sizes differ")
    return float((p == t).mean())


def iou(pred, truth) -> float:
    """Intersection over union of the built class; 1.0 when both masks are empty."""
    p, t = _labels(pred).astype(bool), _labels(truth).astype(bool)
    if p.shape != t.shape:
        raise UsageError("mask sizes differ")
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


@dataclass
class DamageReport:
    pre_fraction: float
    post_fraction: float
    change_rate: float
    severity: str = "unassigned"
    econ_loss_bn: float | None = None
    econ_ci_95: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["econ_ci_95"] is not None:
            d["econ_ci_95"] = list(d["econ_ci_95"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DamageReport":
        ci = d.get("econ_ci_95")
        return cls(d["pre_fraction"], d["post_fraction"], d["change_rate"], d.get("severity", "unassigned"),
                   d.get("econ_loss_bn"), tuple(ci) if ci is not None else None)


def report_from_masks(pre, post, deaths_k: float | None = None, cluster=None, regression=None,
                      econ_loss_bn: float | None = None) -> DamageReport:
    """Change rate from two masks, with optional economic estimate and severity.

    The economic loss comes from inverting ``regression`` at the observed change
    rate (or from ``econ_loss_bn`` when known). Severity needs a cluster model
    and an economic figure.
    """
    from .severity import assign_severity, predict_economic_loss

    rate = change_rate(pre, post)
    report = DamageReport(built_fraction(pre), built_fraction(post), rate)
    deaths_k = 0.0 if deaths_k is None else float(deaths_k)
    if regression is not None and econ_loss_bn is None:
        econ, ci = predict_economic_loss(rate, deaths_k, regression)
        report.econ_loss_bn, report.econ_ci_95 = econ, ci
    elif econ_loss_bn is not None:
        report.econ_loss_bn = float(econ_loss_bn)
    if cluster is not None and report.econ_loss_bn is not None:
        report.severity = assign_severity((max(report.econ_loss_bn, 0.0), deaths_k * 1000.0), cluster)
    return report


def quantify(parser: NetworkModel, pre_image, post_image, deaths_k: float | None = None,
             cluster=None, regression=None) -> DamageReport:
    """Segment both images with ``parser`` and report the change in built area."""
    pre_arr = np.asarray(getattr(pre_image, "data", pre_image))
    post_arr = np.asarray(getattr(post_image, "data", post_image))
    if pre_arr.shape != post_arr.shape:
        raise UsageError(f"image sizes differ: {pre_arr.shape} vs {post_arr.shape}")
    pre_mask = forward_segment(parser, pre_arr)
    post_mask = forward_segment(parser, post_arr)
    return report_from_masks(pre_mask, post_mask, deaths_k, cluster, regression)


# ---------------------------------------------------------------------------
# noise


@dataclass
class NoiseSpec:
    kind: str = "gaussian"
    level: float = 0.0
    seed: int = 42
    block: int = 8

    def validate(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not 0.0 <= self.level <= 1.0:
            raise ConfigError(f"noise level must lie in [0, 1], got {self.level}")


def inject_noise(image: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Corrupt images with values in [0, 1] (any leading shape, channels before H, W).

    gaussian: additive N(0, level) noise; salt-pepper: each pixel (all channels)
    replaced by 0 or 1 with probability ``level``; blocky: blend towards the
    mean of each ``block`` x ``block`` tile, like heavy lossy compression.
    Output is clipped to [0, 1].
    """
    spec.validate()
    image = np.asarray(image)
    if spec.level == 0:
        return image.copy()
    rng = np.random.default_rng(spec.seed)
    x = image.astype(np.float64)
    if spec.kind == "gaussian":
        out = x + rng.normal(0.0, spec.level, size=x.shape)
    elif spec.kind == "salt-pepper":
        pix_shape = x.shape[:-3] + (1,) + x.shape[-2:] if x.ndim >= 3 else x.shape
        hit = rng.random(pix_shape) < spec.level
        salt = rng.random(pix_shape) < 0.5
        out = np.where(hit, np.where(salt, 1.0, 0.0), x)
    else:
        h, w = x.shape[-2:]
        b = spec.block
        hp, wp = -(-h // b) * b, -(-w // b) * b
        pad = [(0, 0)] * (x.ndim - 2) + [(0, hp - h), (0, wp - w)]
        xp = np.pad(x, pad, mode="edge")
        tiles = xp.reshape(xp.shape[:-2] + (hp // b, b, wp // b, b))
        means = tiles.mean(axis=(-3, -1), keepdims=True)
        blocky = np.broadcast_to(means, tiles.shape).reshape(xp.shape)[..., :h, :w]
        out = (1 - spec.level) * x + spec.level * blocky
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


@dataclass
class CurvePoint:
    level: float
    accuracy: float
    loss: float


def robustness_curve(model: NetworkModel, data: Dataset, levels: Sequence[float],
                     kind: str = "gaussian", seed: int = 42) -> list[CurvePoint]:
    """Evaluate ``model`` on noise-corrupted copies of ``data`` at each level.

    The level-0 entry is exactly ``evaluate(model, data)``.
    """
    levels = [float(v) for v in levels]
    if not levels:
        raise UsageError("levels must not be empty")
    if levels[0] != 0.0 or any(b < a for a, b in zip(levels, levels[1:])):
        raise UsageError("levels must be sorted ascending and start at 0")
    points = []
    for level in levels:
        noisy = data if level == 0 else Dataset(inject_noise(data.images, NoiseSpec(kind, level, seed)), data.targets)
        acc, loss = evaluate(model, noisy)
        points.append(CurvePoint(level, acc, loss))
    return points


def accuracy_drop(curve: list[CurvePoint], level: float) -> float:
    clean = curve[0].accuracy
    for p in curve:
        if np.isclose(p.level, level):
            return clean - p.accuracy
    raise UsageError(f"level {level} not in curve")
