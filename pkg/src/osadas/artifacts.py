"""Image loading, preprocessing and heatmap artifact files.

A heatmap artifact is three files sharing a stem:

``<stem>.f32``
    little-endian float32 matrix, row-major, ``height * width * 4`` bytes.
``<stem>.json``
    sidecar ``{"height", "width", "normalized", "explainer", "config_hash", "seed"}``.
``<stem>.png``
    8-bit viridis overlay for viewing only; never read back.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

RAW_DTYPE = np.dtype("<f4")

# viridis sampled at 9 evenly spaced points
_VIRIDIS = np.array([
    [0.267004, 0.004874, 0.329415],
    [0.282623, 0.140926, 0.457517],
    [0.253935, 0.265254, 0.529983],
    [0.206756, 0.371758, 0.553117],
    [0.163625, 0.471133, 0.558148],
    [0.127568, 0.566949, 0.550556],
    [0.134692, 0.658636, 0.517649],
    [0.266941, 0.748751, 0.440573],
    [0.993248, 0.906157, 0.143936],
])


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


def write_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    _atomic_write(path, _png_bytes(arr))


def preprocess(image: np.ndarray, resize: int = 256, crop: int = 224) -> np.ndarray:
    """Resize the short side to ``resize`` and center-crop ``crop`` x ``crop``.

    Images already at ``crop`` x ``crop`` pass through untouched.
    """
    h, w = image.shape[:2]
    if (h, w) == (crop, crop) or crop <= 0:
        return image
    if resize > 0:
        scale = resize / min(h, w)
        size = (max(crop, round(w * scale)), max(crop, round(h * scale)))
        arr = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
        with Image.fromarray(arr) as im:
            image = np.asarray(im.resize(size, Image.BILINEAR), dtype=np.float64) / 255.0
        h, w = image.shape[:2]
    if h < crop or w < crop:
        raise ValueError(f"image {h}x{w} is smaller than crop size {crop}")
    top, left = (h - crop) // 2, (w - crop) // 2
    return image[top:top + crop, left:left + crop]


def _png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def colorize(heatmap: np.ndarray) -> np.ndarray:
    h = np.asarray(heatmap, dtype=np.float64)
    span = h.max() - h.min()
    t = (h - h.min()) / span if span > 0 else np.zeros_like(h)
    pos = t * (len(_VIRIDIS) - 1)
    lo = np.floor(pos).astype(int).clip(0, len(_VIRIDIS) - 2)
    frac = (pos - lo)[..., None]
    return _VIRIDIS[lo] * (1 - frac) + _VIRIDIS[lo + 1] * frac


@dataclass
class HeatmapArtifact:
    raw: Path
    sidecar: Path
    preview: Path


def save_heatmap(stem, grid: np.ndarray, *, normalized: bool, explainer: str, config: dict,
                 seed: int, image: np.ndarray | None = None) -> HeatmapArtifact:
    stem = Path(stem)
    grid32 = np.ascontiguousarray(grid, dtype=RAW_DTYPE)
    h, w = grid32.shape
    # append rather than replace: stems like "cat.osa-das" already contain a dot
    paths = HeatmapArtifact(*(stem.with_name(stem.name + s) for s in (".f32", ".json", ".png")))
    _atomic_write(paths.raw, grid32.tobytes())
    write_json(paths.sidecar, {
        "height": h,
        "width": w,
        "normalized": bool(normalized),
        "explainer": explainer,
        "config_hash": config_hash(config),
        "seed": int(seed),
    })
    overlay = colorize(grid32)
    if image is not None and image.shape[:2] == (h, w):
        overlay = 0.5 * overlay + 0.5 * np.asarray(image)[..., :3]
    _atomic_write(paths.preview, _png_bytes(np.clip(np.round(overlay * 255), 0, 255).astype(np.uint8)))
    return paths


def load_heatmap(raw_path) -> tuple[np.ndarray, dict]:
    """Return the float32 grid and its sidecar metadata."""
    raw_path = Path(raw_path)
    meta = json.loads(raw_path.with_suffix(".json").read_text())
    data = raw_path.read_bytes()
    h, w = int(meta["height"]), int(meta["width"])
    if len(data) != h * w * RAW_DTYPE.itemsize:
        raise ValueError(f"{raw_path}: {len(data)} bytes, sidecar expects {h}x{w} float32")
    return np.frombuffer(data, dtype=RAW_DTYPE).reshape(h, w).copy(), meta
