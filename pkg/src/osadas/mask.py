"""Square occlusion masks: sliding windows and saliency-weighted anchors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateSaliencyError

MASK_MODES = ("sliding", "random", "gradient")


@dataclass(frozen=True)
class Mask:
    """An ``side`` x ``side`` square centered at ``anchor``, clipped to ``shape``.

    For even sides the square spans ``anchor - side // 2`` up to
    ``anchor - side // 2 + side`` (exclusive).
    """

    anchor: tuple
    side: int
    shape: tuple

    @cached_property
    def bounds(self) -> tuple:
        h, w = self.shape
        r0 = self.anchor[0] - self.side // 2
        c0 = self.anchor[1] - self.side // 2
        return (max(r0, 0), min(r0 + self.side, h), max(c0, 0), min(c0 + self.side, w))

    @property
    def area(self) -> int:
        r0, r1, c0, c1 = self.bounds
        return max(r1 - r0, 0) * max(c1 - c0, 0)

    @property
    def keep(self) -> np.ndarray:
        """H x W array, 1 = keep, 0 = occlude."""
        out = np.ones(self.shape, dtype=np.float64)
        r0, r1, c0, c1 = self.bounds
        out[r0:r1, c0:c1] = 0.0
        return out

    @property
    def occluded(self) -> np.ndarray:
        return 1.0 - self.keep


def sliding_masks(shape, window: int, stride: int = 1) -> list[Mask]:
    h, w = shape
    if window < 1 or window > min(h, w):
        raise ValueError(f"window {window} does not fit image of shape {shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    half = window // 2
    return [
        Mask((r + half, c + half), window, (h, w))
        for r in range(0, h - window + 1, stride)
        for c in range(0, w - window + 1, stride)
    ]


def uniform_weights(shape) -> np.ndarray:
    return np.full(shape, 1.0 / (shape[0] * shape[1]))


def normalize_weights(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("saliency weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise DegenerateSaliencyError("degenerate saliency")
    return w / total


def iou(a: Mask, b: Mask) -> float:
    ar0, ar1, ac0, ac1 = a.bounds
    br0, br1, bc0, bc1 = b.bounds
    inter = max(0, min(ar1, br1) - max(ar0, br0)) * max(0, min(ac1, bc1) - max(ac0, bc0))
    union = a.area + b.area - inter
    return inter / union if union else 0.0


def _pairwise_iou(box, boxes: np.ndarray) -> np.ndarray:
    r0, r1, c0, c1 = box
    ih = np.clip(np.minimum(r1, boxes[:, 1]) - np.maximum(r0, boxes[:, 0]), 0, None)
    iw = np.clip(np.minimum(c1, boxes[:, 3]) - np.maximum(c0, boxes[:, 2]), 0, None)
    inter = ih * iw
    areas = (boxes[:, 1] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 2])
    union = (r1 - r0) * (c1 - c0) + areas - inter
    return inter / np.maximum(union, 1)


def sample_anchors(weights: np.ndarray, n_m: int, side: int, overlap_threshold: float = 0.5,
                   seed: int = 0, max_attempts: int | None = None) -> list[Mask]:
    """Draw mask centers from the multinomial over pixels given by ``weights``.

    A candidate whose square has IoU above ``overlap_threshold`` with an
    already accepted square is rejected; a threshold of 1 disables the
    filter.  Sampling stops after ``n_m`` acceptances or ``max_attempts``
    draws (default ``20 * n_m``), warning on shortfall.
    """
    if n_m < 1:
        raise ValueError("n_m must be >= 1")
    if side < 1:
        raise ValueError("mask side must be >= 1")
    if not 0.0 <= overlap_threshold <= 1.0:
        raise ValueError("overlap threshold must lie in [0, 1]")
    p = normalize_weights(weights)
    shape = p.shape
    if max_attempts is None:
        max_attempts = 20 * n_m

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), 0x4D41534B])))
    draws = rng.choice(p.size, size=max_attempts, p=p.ravel())

    masks: list[Mask] = []
    boxes = np.empty((n_m, 4), dtype=np.int64)
    for flat in draws:
        mask = Mask(tuple(int(v) for v in np.unravel_index(flat, shape)), side, shape)
        if masks and overlap_threshold < 1.0:
            if np.any(_pairwise_iou(mask.bounds, boxes[: len(masks)]) > overlap_threshold):
                continue
        boxes[len(masks)] = mask.bounds
        masks.append(mask)
        if len(masks) == n_m:
            break
    if len(masks) < n_m:
        warnings.warn(
            f"accepted {len(masks)} of {n_m} masks after {max_attempts} draws",
            RuntimeWarning,
            stacklevel=2,
        )
    return masks


def apply_mask(image: np.ndarray, mask) -> np.ndarray:
    keep = mask.keep if isinstance(mask, Mask) else np.asarray(mask, dtype=np.float64)
    image = np.asarray(image)
    if keep.shape != image.shape[:2]:
        raise ValueError(f"mask shape {keep.shape} does not match image shape {image.shape[:2]}")
    return image * keep[..., None]


def coverage(masks, shape) -> np.ndarray:
    total = np.zeros(shape, dtype=np.float64)
    for m in masks:
        r0, r1, c0, c1 = m.bounds
        total[r0:r1, c0:c1] += 1.0
    return total
