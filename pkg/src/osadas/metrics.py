"""Heatmap quality metrics: deletion, insertion, minimal size and overall."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .backend import Backend
from .errors import CapabilityError, ConfigError, DegenerateFeatureError
from .subspace import normalize

SCHEMA_VERSION = "1.0"
BASELINES = ("zero", "blur")


@dataclass(frozen=True)
class MetricConfig:
    steps: int = 32
    tolerance: float = 1e-2
    tolerance_norm: str = "max"
    deletion_baseline: str = "zero"
    insertion_baseline: str = "zero"
    blur_sigma: float = 10.0
    contour_levels: int | None = None
    minimal_size_method: str = "plain"

    def __post_init__(self):
        if self.steps < 2:
            raise ConfigError("steps must be >= 2")
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be > 0")
        if self.tolerance_norm not in ("max", "l1"):
            raise ConfigError("tolerance_norm must be 'max' or 'l1'")
        for b in (self.deletion_baseline, self.insertion_baseline):
            if b not in BASELINES:
                raise ConfigError(f"baseline must be one of {BASELINES}")
        if self.contour_levels is not None and self.contour_levels < 1:
            raise ConfigError("contour_levels must be >= 1")
        if self.minimal_size_method not in ("plain", "contour"):
            raise ConfigError("minimal_size_method must be 'plain' or 'contour'")

    @property
    def levels(self) -> int:
        return self.contour_levels or self.steps


@dataclass
class Curve:
    fractions: np.ndarray
    values: np.ndarray
    auc: float

    def to_dict(self) -> dict:
        return {"auc": self.auc, "fractions": self.fractions.tolist(), "values": self.values.tolist()}


@dataclass
class MetricReport:
    deletion: float
    insertion: float
    minimal_size: float
    minimal_size_plain: float | None = None
    minimal_size_contour: float | None = None
    minimal_size_method: str = "plain"
    target_class: int | None = None
    curves: dict = field(default_factory=dict)

    @property
    def overall(self) -> float:
        return overall(self.insertion, self.deletion, self.minimal_size)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "deletion": self.deletion,
            "insertion": self.insertion,
            "minimal_size": self.minimal_size,
            "minimal_size_plain": self.minimal_size_plain,
            "minimal_size_contour": self.minimal_size_contour,
            "minimal_size_method": self.minimal_size_method,
            "overall": self.overall,
            "target_class": self.target_class,
            "curves": {k: v.to_dict() for k, v in self.curves.items()},
        }


def auc(fractions, values) -> float:
    x = np.asarray(fractions, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape or x.size < 2:
        raise ValueError("malformed curve: need matching 1-d fractions and values")
    if np.any(np.diff(x) <= 0):
        raise ValueError("malformed curve: fractions must be strictly increasing")
    if not (np.isclose(x[0], 0.0) and np.isclose(x[-1], 1.0)):
        raise ValueError("malformed curve: fractions must span [0, 1]")
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def overall(insertion: float, deletion: float, minimal_size: float) -> float:
    if not minimal_size > 0:
        raise ValueError("minimal size must be > 0")
    return (insertion - deletion) / minimal_size


def pixel_order(heatmap: np.ndarray) -> np.ndarray:
    """Flat pixel indices by descending value; ties keep row-major order."""
    return np.argsort(-np.asarray(heatmap, dtype=np.float64).ravel(), kind="stable")


def _check(image, heatmap) -> tuple:
    image = np.asarray(image, dtype=np.float64)
    heatmap = np.asarray(heatmap.grid if hasattr(heatmap, "grid") else heatmap, dtype=np.float64)
    if heatmap.shape != image.shape[:2]:
        raise ValueError(f"heatmap shape {heatmap.shape} does not match image {image.shape[:2]}")
    return image, heatmap


def baseline_image(image: np.ndarray, kind: str, sigma: float = 10.0) -> np.ndarray:
    if kind == "zero":
        return np.zeros_like(image)
    if kind == "blur":
        return np.stack([ndimage.gaussian_filter(image[..., c], sigma) for c in range(image.shape[2])],
                        axis=-1)
    raise ValueError(f"unknown baseline {kind!r}")


def step_counts(n_pixels: int, steps: int) -> np.ndarray:
    return np.round(np.arange(steps + 1) * n_pixels / steps).astype(np.int64)


def _probability_curve(image, heatmap, backend, config, start, end, target) -> Curve:
    """Move pixels from ``start`` to ``end`` in heatmap order, tracking p[target]."""
    if not backend.capabilities.has_probabilities:
        raise CapabilityError("backend lacks classification head")
    h, w = heatmap.shape
    order = pixel_order(heatmap)
    counts = step_counts(h * w, config.steps)
    frames = []
    for n in counts:
        sel = np.zeros(h * w, dtype=bool)
        sel[order[:n]] = True
        sel = sel.reshape(h, w)[..., None]
        frames.append(np.where(sel, end, start))
    values = backend.infer_probabilities_batch(frames)[:, target]
    fractions = counts / (h * w)
    return Curve(fractions, values, auc(fractions, values))


def target_class(image, backend: Backend) -> int:
    return int(np.argmax(backend.infer_probabilities(image)))


def deletion(image, heatmap, backend: Backend, config: MetricConfig = MetricConfig(),
             target: int | None = None) -> Curve:
    image, heatmap = _check(image, heatmap)
    target = target_class(image, backend) if target is None else target
    base = baseline_image(image, config.deletion_baseline, config.blur_sigma)
    return _probability_curve(image, heatmap, backend, config, image, base, target)


def insertion(image, heatmap, backend: Backend, config: MetricConfig = MetricConfig(),
              target: int | None = None) -> Curve:
    image, heatmap = _check(image, heatmap)
    target = target_class(image, backend) if target is None else target
    base = baseline_image(image, config.insertion_baseline, config.blur_sigma)
    return _probability_curve(image, heatmap, backend, config, base, image, target)


def _matches(ref: np.ndarray, raw: np.ndarray, config: MetricConfig) -> bool:
    try:
        f = normalize(raw)
    except DegenerateFeatureError:
        return False
    diff = np.abs(f - ref)
    err = diff.max() if config.tolerance_norm == "max" else diff.sum()
    return bool(err <= config.tolerance)


def _keep_only(image, keep: np.ndarray) -> np.ndarray:
    return image * keep.reshape(image.shape[:2])[..., None]


def minimal_size_plain(image, heatmap, backend: Backend, config: MetricConfig = MetricConfig()) -> float:
    """Smallest i/s such that keeping the top i*|x|/s pixels matches f(x) within tolerance."""
    image, heatmap = _check(image, heatmap)
    ref = backend.infer_features(image)
    n = heatmap.size
    order = pixel_order(heatmap)
    keep = np.zeros(n)
    done = 0
    for i, count in enumerate(step_counts(n, config.steps)[1:], start=1):
        keep[order[done:count]] = 1.0
        done = count
        if _matches(ref, backend.raw_features(_keep_only(image, keep)), config):
            return i / config.steps
    return 1.0


def contour_bands(heatmap: np.ndarray, levels: int) -> np.ndarray:
    """Band index per pixel from value quantiles; equal values share a band."""
    values = np.asarray(heatmap, dtype=np.float64).ravel()
    inner = np.quantile(values, np.linspace(0.0, 1.0, levels + 1)[1:-1])
    return np.searchsorted(inner, values, side="left").reshape(heatmap.shape)


def minimal_size_contour(image, heatmap, backend: Backend, config: MetricConfig = MetricConfig()) -> float:
    """Like the plain variant, but adds whole contour bands, brightest first."""
    image, heatmap = _check(image, heatmap)
    ref = backend.infer_features(image)
    bands = contour_bands(heatmap, config.levels).ravel()
    keep = np.zeros(heatmap.size)
    for band in np.unique(bands)[::-1]:
        keep[bands == band] = 1.0
        if _matches(ref, backend.raw_features(_keep_only(image, keep)), config):
            return float(keep.sum() / keep.size)
    return 1.0


def evaluate(image, heatmap, backend: Backend, config: MetricConfig = MetricConfig()) -> MetricReport:
    image, grid = _check(image, heatmap)
    target = target_class(image, backend)
    dele = deletion(image, grid, backend, config, target)
    ins = insertion(image, grid, backend, config, target)
    plain = minimal_size_plain(image, grid, backend, config)
    contour = minimal_size_contour(image, grid, backend, config)
    return MetricReport(
        deletion=dele.auc,
        insertion=ins.auc,
        minimal_size=plain if config.minimal_size_method == "plain" else contour,
        minimal_size_plain=plain,
        minimal_size_contour=contour,
        minimal_size_method=config.minimal_size_method,
        target_class=target,
        curves={"deletion": dele, "insertion": ins},
    )
