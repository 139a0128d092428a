"""Occlusion explainers: classic OSA, representation OSA and OSA-DAS.

All three share one accumulation rule: every mask adds its responsibility
score ``r`` to the pixels it occludes, and the sum is renormalized to 1.
They differ only in how ``r`` is computed.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import augment as aug
from .backend import Backend
from .errors import CapabilityError, ConfigError
from .mask import MASK_MODES, Mask, apply_mask, sample_anchors, sliding_masks, uniform_weights
from .subspace import lp_responsibility, orthogonal_degree, uncentered_pca

METHODS = ("osa", "osa-representation", "osa-das")
DRAW_SHARING = ("shared", "independent")


@dataclass
class Heatmap:
    grid: np.ndarray
    normalized: bool
    responsibilities: np.ndarray | None = None
    masks: list | None = field(default=None, repr=False)

    @property
    def shape(self):
        return self.grid.shape


@dataclass(frozen=True)
class ExplainerConfig:
    n_m: int = 256
    n_a: int = 32
    n_c: int = 32
    l: int = 64
    policy: aug.AugmentationPolicy = field(default_factory=aug.AugmentationPolicy)
    mask_mode: str = "gradient"
    stride: int = 1
    overlap_iou: float = 0.5
    p_order: float = 2.0
    normalization: str = "mean"
    draw_sharing: str = "shared"
    saliency_scalar: str = "norm"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("n_m", "n_a", "n_c", "l", "stride", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1 (got {getattr(self, name)})")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
        if not 0.0 <= self.overlap_iou <= 1.0:
            raise ConfigError("overlap_iou must lie in [0, 1]")
        if self.p_order < 1:
            raise ConfigError("p_order must be >= 1")
        if self.normalization not in ("mean", "sum"):
            raise ConfigError("normalization must be 'mean' or 'sum'")
        if self.draw_sharing not in DRAW_SHARING:
            raise ConfigError(f"draw_sharing must be one of {DRAW_SHARING}")
        if self.n_c > self.n_a:
            warnings.warn(f"n_c={self.n_c} exceeds n_a={self.n_a}; it will be clamped", RuntimeWarning)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"]["ops"] = list(d["policy"]["ops"])
        return d


def accumulate(masks, scores, shape) -> np.ndarray:
    """Sum ``(1 - M_i) * r_i`` in mask order."""
    H = np.zeros(shape, dtype=np.float64)
    for m, r in zip(masks, scores):
        r0, r1, c0, c1 = m.bounds
        H[r0:r1, c0:c1] += r
    return H


def _finish(H: np.ndarray, scores, masks) -> Heatmap:
    total = H.sum()
    if total <= 0:
        warnings.warn("all mask responsibilities are zero; returning an unnormalized heatmap",
                      RuntimeWarning, stacklevel=3)
        return Heatmap(H, False, np.asarray(scores), list(masks))
    return Heatmap(H / total, True, np.asarray(scores), list(masks))


def make_masks(image: np.ndarray, backend: Backend | None, config: ExplainerConfig) -> list[Mask]:
    shape = image.shape[:2]
    if config.mask_mode == "sliding":
        return sliding_masks(shape, config.l, config.stride)
    weights = uniform_weights(shape)
    if config.mask_mode == "gradient":
        if backend is not None and backend.capabilities.has_saliency:
            weights = backend.input_saliency(image, scalar=config.saliency_scalar)
        else:
            warnings.warn("backend has no saliency; sampling anchors uniformly", RuntimeWarning)
    return sample_anchors(weights, config.n_m, config.l, config.overlap_iou, seed=config.seed)


def _map(fn, items, workers: int):
    # results come back in input order regardless of completion order
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def osa_classic(image, backend: Backend, masks, class_index: int | None = None,
                workers: int = 1) -> Heatmap:
    if not backend.capabilities.has_probabilities:
        raise CapabilityError("backend lacks classification head")
    image = backend.check_image(image)
    p = backend.infer_probabilities(image)
    c = int(np.argmax(p)) if class_index is None else int(class_index)
    if p[c] <= 0:
        raise ValueError("reference probability is zero")

    def score(m):
        pm = backend.infer_probabilities(apply_mask(image, m))[c]
        return float(np.clip(1.0 - pm / p[c], 0.0, 1.0))

    scores = _map(score, masks, workers)
    return _finish(accumulate(masks, scores, image.shape[:2]), scores, masks)


def osa_representation(image, backend: Backend, masks, p_order: float = 2.0,
                       workers: int = 1) -> Heatmap:
    image = backend.check_image(image)
    v = backend.raw_features(image)
    scores = _map(lambda m: lp_responsibility(v, backend.raw_features(apply_mask(image, m)), p_order),
                  masks, workers)
    return _finish(accumulate(masks, scores, image.shape[:2]), scores, masks)


def _feature_subspace(backend: Backend, images):
    return uncentered_pca(backend.infer_features_batch(images))


def osa_das(image, backend: Backend, config: ExplainerConfig, masks=None) -> Heatmap:
    """Score each occlusion by the orthogonal degree between augmentation subspaces.

    The reference set holds the raw image plus ``n_a - 1`` augmented draws;
    each occluded set applies the same scheme to ``x * M`` (occlude, then
    augment).  With ``draw_sharing="shared"`` every set reuses the same
    augmentation list; ``"independent"`` keys the draws by mask index.
    """
    image = backend.check_image(image)
    if masks is None:
        masks = make_masks(image, backend, config)
    policy = config.policy
    V = _feature_subspace(backend, aug.augmented_set(image, policy, config.n_a))

    def score(indexed):
        i, m = indexed
        if config.draw_sharing == "shared":
            occluded = aug.augmented_set(apply_mask(image, m), policy, config.n_a)
        else:
            occluded = aug.augmented_set(apply_mask(image, m), policy, config.n_a,
                                         mask_index=i, stream=1)
        VM = _feature_subspace(backend, occluded)
        n_c = min(config.n_c, V.d, VM.d)
        if n_c < config.n_c:
            warnings.warn(f"n_c clamped from {config.n_c} to {n_c} (subspace rank)", RuntimeWarning)
        return orthogonal_degree(V, VM, n_c, config.normalization)

    scores = _map(score, list(enumerate(masks)), config.workers)
    if config.normalization == "sum":
        scores = [max(s, 0.0) for s in scores]
    return _finish(accumulate(masks, scores, image.shape[:2]), scores, masks)


def explain(image, backend: Backend, method: str, config: ExplainerConfig,
            class_index: int | None = None) -> Heatmap:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "osa" and not backend.capabilities.has_probabilities:
        raise CapabilityError("backend lacks classification head")
    image = backend.check_image(image)
    if method == "osa-das":
        return osa_das(image, backend, config)
    masks = make_masks(image, backend, config)
    if method == "osa":
        return osa_classic(image, backend, masks, class_index, config.workers)
    return osa_representation(image, backend, masks, config.p_order, config.workers)


def compose_heatmaps(heatmaps) -> Heatmap:
    grids = [h.grid if isinstance(h, Heatmap) else np.asarray(h, dtype=np.float64) for h in heatmaps]
    if not grids:
        raise ValueError("nothing to compose")
    if len({g.shape for g in grids}) != 1:
        raise ValueError("heatmap shape mismatch")
    total = np.sum(grids, axis=0)
    s = total.sum()
    if s <= 0:
        return Heatmap(total, False)
    return Heatmap(total / s, True)
