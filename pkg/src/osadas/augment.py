"""Seeded TrivialAugment / RandAugment style image augmentation.

Images are float arrays of shape (H, W, C) with values in [0, 1].  Every
op maps a magnitude in [0, 1] to a physical strength through the table
below; signed ops also carry a direction (+1 or -1).

============  =========================================================
kind          magnitude m in [0, 1] maps to
============  =========================================================
identity      no-op
rotate        angle = sign * 30 * m degrees about the image center
translate_x   shift = sign * 0.25 * m * W pixels
translate_y   shift = sign * 0.25 * m * H pixels
shear_x       x' = x + sign * 0.3 * m * (y - cy)
shear_y       y' = y + sign * 0.3 * m * (x - cx)
brightness    factor b = 1 + sign * 0.9 * m;  out = b * x
contrast      factor c = 1 + sign * 0.9 * m;  out = mu + c * (x - mu),
              mu = mean luminance of the whole image
saturation    factor s = 1 + sign * 0.9 * m;  out = g + s * (x - g),
              g = per-pixel luminance
sharpness     factor h = 1 + sign * 0.9 * m;  out = B + h * (x - B),
              B = 3x3 smoothing (center 5, ring 1, /13), edge replicated
posterize     keep 8 - round(4 * m) bits of the 8-bit value
solarize      threshold t = 1 - m;  pixels with x > t become 1 - x
autocontrast  per-channel min/max stretched to [0, 1] (m ignored)
equalize      per-channel 256-bin histogram equalization (m ignored)
============  =========================================================

Geometric ops sample bilinearly and fill with zeros outside the image.
All outputs are clamped to [0, 1].

Random draws come from a Philox counter-based generator keyed by
``SeedSequence((seed, stream, mask_index, draw_index))`` so that a draw
never depends on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

OP_KINDS = (
    "identity",
    "rotate",
    "translate_x",
    "translate_y",
    "shear_x",
    "shear_y",
    "brightness",
    "contrast",
    "saturation",
    "sharpness",
    "posterize",
    "solarize",
    "autocontrast",
    "equalize",
)
SIGNED_KINDS = frozenset(
    {"rotate", "translate_x", "translate_y", "shear_x", "shear_y",
     "brightness", "contrast", "saturation", "sharpness"}
)
POLICY_MODES = ("trivial", "randaugment", "none")

MAX_ROTATE_DEG = 30.0
MAX_TRANSLATE = 0.25
MAX_SHEAR = 0.3
MAX_ENHANCE = 0.9

_LUMA = np.array([0.299, 0.587, 0.114])
_SMOOTH = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0


@dataclass(frozen=True)
class AugmentationOp:
    kind: str
    magnitude: float = 0.0
    sign: int = 1

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not 0.0 <= self.magnitude <= 1.0:
            raise ValueError("magnitude must lie in [0, 1]")
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")


@dataclass(frozen=True)
class AugmentationPolicy:
    mode: str = "trivial"
    n_ops: int = 2
    mag: float = 0.5
    seed: int = 0
    ops: tuple = field(default=OP_KINDS)

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.n_ops < 1:
            raise ValueError("n_ops must be >= 1")
        if not 0.0 <= self.mag <= 1.0:
            raise ValueError("mag must lie in [0, 1]")
        if not self.ops:
            raise ValueError("empty op pool")
        for kind in self.ops:
            if kind not in OP_KINDS:
                raise ValueError(f"unknown augmentation kind {kind!r}")


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def sample_ops(policy: AugmentationPolicy, draw_index: int, mask_index: int = 0,
               stream: int = 0) -> list[AugmentationOp]:
    if draw_index < 0:
        raise ValueError("draw_index must be >= 0")
    if policy.mode == "none":
        return [AugmentationOp("identity")]
    rng = keyed_rng(policy.seed, stream, mask_index, draw_index)
    n = 1 if policy.mode == "trivial" else policy.n_ops
    ops = []
    for _ in range(n):
        kind = policy.ops[int(rng.integers(len(policy.ops)))]
        mag = float(rng.uniform(0.0, 1.0)) if policy.mode == "trivial" else policy.mag
        flip = rng.random() < 0.5
        sign = -1 if flip and kind in SIGNED_KINDS else 1
        ops.append(AugmentationOp(kind, mag, sign))
    return ops


def augment(image: np.ndarray, policy: AugmentationPolicy, draw_index: int,
            mask_index: int = 0, stream: int = 0) -> np.ndarray:
    out = image
    for op in sample_ops(policy, draw_index, mask_index, stream):
        out = apply_op(out, op)
    return out


# -- pixel ops ---------------------------------------------------------------

def _luma(image: np.ndarray) -> np.ndarray:
    if image.shape[2] == 1:
        return image[..., 0]
    return image[..., :3] @ _LUMA


def _affine(image: np.ndarray, matrix: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Bilinear resampling: input_coord = matrix @ output_coord + offset."""
    if np.allclose(matrix, np.eye(2)) and np.allclose(offset, 0.0):
        return image.copy()
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[..., c] = ndimage.affine_transform(
            image[..., c], matrix, offset=offset, order=1, mode="constant", cval=0.0
        )
    return out


def _about_center(image: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    center = (np.array(image.shape[:2], dtype=np.float64) - 1.0) / 2.0
    return _affine(image, matrix, center - matrix @ center)


def _rotate(image, deg):
    t = np.deg2rad(deg)
    # (row, col) coordinates; positive angle turns content counter-clockwise
    m = np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
    return _about_center(image, m)


def _equalize_channel(ch: np.ndarray) -> np.ndarray:
    q = np.clip(np.round(ch * 255.0), 0, 255).astype(np.int64)
    hist = np.bincount(q.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    nonzero = cdf[hist > 0]
    lo = nonzero[0]
    if cdf[-1] == lo:
        return ch.copy()
    lut = (cdf - lo) / (cdf[-1] - lo)
    return np.clip(lut[q], 0.0, 1.0)


def apply_op(image: np.ndarray, op: AugmentationOp) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError("image must have shape (H, W, C)")
    if op.kind == "identity":
        return np.array(image, copy=True)
    h, w = img.shape[:2]
    m, s = op.magnitude, op.sign

    if op.kind == "rotate":
        out = _rotate(img, s * MAX_ROTATE_DEG * m)
    elif op.kind in ("translate_x", "translate_y"):
        shift = np.zeros(2)
        axis = 1 if op.kind == "translate_x" else 0
        shift[axis] = s * MAX_TRANSLATE * m * (w if axis == 1 else h)
        out = _affine(img, np.eye(2), -shift)
    elif op.kind == "shear_x":
        out = _about_center(img, np.array([[1.0, 0.0], [s * MAX_SHEAR * m, 1.0]]))
    elif op.kind == "shear_y":
        out = _about_center(img, np.array([[1.0, s * MAX_SHEAR * m], [0.0, 1.0]]))
    elif op.kind == "brightness":
        out = img * (1.0 + s * MAX_ENHANCE * m)
    elif op.kind == "contrast":
        mu = _luma(img).mean()
        out = mu + (1.0 + s * MAX_ENHANCE * m) * (img - mu)
    elif op.kind == "saturation":
        g = _luma(img)[..., None]
        out = g + (1.0 + s * MAX_ENHANCE * m) * (img - g)
    elif op.kind == "sharpness":
        blur = np.stack(
            [ndimage.convolve(img[..., c], _SMOOTH, mode="nearest") for c in range(img.shape[2])],
            axis=-1,
        )
        out = blur + (1.0 + s * MAX_ENHANCE * m) * (img - blur)
    elif op.kind == "posterize":
        bits = 8 - int(round(4 * m))
        q = np.clip(np.floor(img * 255.0), 0, 255).astype(np.uint8)
        q &= np.uint8((0xFF << (8 - bits)) & 0xFF)
        out = q.astype(np.float64) / 255.0
    elif op.kind == "solarize":
        t = 1.0 - m
        out = np.where(img > t, 1.0 - img, img)
    elif op.kind == "autocontrast":
        lo = img.min(axis=(0, 1), keepdims=True)
        hi = img.max(axis=(0, 1), keepdims=True)
        span = np.where(hi > lo, hi - lo, 1.0)
        out = np.where(hi > lo, (img - lo) / span, img)
    elif op.kind == "equalize":
        out = np.stack([_equalize_channel(img[..., c]) for c in range(img.shape[2])], axis=-1)
    else:  # pragma: no cover - guarded by AugmentationOp
        raise ValueError(op.kind)
    return np.clip(out, 0.0, 1.0)


def augmented_set(image: np.ndarray, policy: AugmentationPolicy, n: int,
                  mask_index: int = 0, stream: int = 0) -> list[np.ndarray]:
    """Draw 0 is the untouched image; draws 1..n-1 are augmented."""
    out = [np.asarray(image, dtype=np.float64)]
    for j in range(1, n):
        out.append(augment(image, policy, j, mask_index, stream))
    return out

