"""Model backends: deep features, class probabilities and input saliency.

A backend maps an (H, W, C) float image in [0, 1] to a raw feature vector
and, optionally, to class logits.  Two analytic toy models ship for testing
(``ToyLinearBackend`` and ``OracleRegionModel``); real networks are loaded
from ONNX files through onnxruntime.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapabilityError, DegenerateSaliencyError, ModelLoadError
from .subspace import normalize

MODEL_DIR_ENV = "OSADAS_MODEL_DIR"
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class BackendCapabilities:
    has_probabilities: bool
    has_saliency: bool
    feature_dim: int


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Backend:
    """Base class; subclasses implement ``raw_features`` and maybe ``logits``."""

    input_shape: tuple
    capabilities: BackendCapabilities

    def raw_features(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def logits(self, image: np.ndarray) -> np.ndarray:
        raise CapabilityError("backend lacks classification head")

    def gradient(self, image: np.ndarray, scalar: str = "norm") -> np.ndarray | None:
        """Analytic d scalar / d image, or None when unavailable."""
        return None

    def raw_features_batch(self, images) -> np.ndarray:
        return np.stack([self.raw_features(im) for im in images])

    def logits_batch(self, images) -> np.ndarray:
        return np.stack([self.logits(im) for im in images])

    def check_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != tuple(self.input_shape):
            raise ValueError(f"image shape {image.shape} does not match backend input {tuple(self.input_shape)}")
        return image

    def infer_features(self, image: np.ndarray) -> np.ndarray:
        return normalize(self.raw_features(image))

    def infer_features_batch(self, images) -> np.ndarray:
        raw = self.raw_features_batch(images)
        return np.stack([normalize(r) for r in raw])

    def infer_probabilities(self, image: np.ndarray) -> np.ndarray:
        if not self.capabilities.has_probabilities:
            raise CapabilityError("backend lacks classification head")
        return softmax(self.logits(image))

    def infer_probabilities_batch(self, images) -> np.ndarray:
        if not self.capabilities.has_probabilities:
            raise CapabilityError("backend lacks classification head")
        return softmax(self.logits_batch(images))

    def saliency_scalar(self, image: np.ndarray, scalar: str = "norm") -> float:
        if scalar == "norm":
            return float(np.linalg.norm(self.raw_features(image)))
        if scalar == "max-logit":
            return float(np.max(self.logits(image)))
        raise ValueError(f"unknown saliency scalar {scalar!r}")

    def input_saliency(self, image: np.ndarray, scalar: str = "norm", pitch: int = 16) -> np.ndarray:
        """Channel-summed absolute gradient of the saliency scalar, summing to 1.

        Falls back to block finite differences on a ``pitch`` grid when the
        backend has no analytic gradient.
        """
        if not self.capabilities.has_saliency:
            raise CapabilityError("backend lacks input saliency")
        image = self.check_image(image)
        grad = self.gradient(image, scalar)
        if grad is None:
            sal = finite_difference_saliency(self, image, scalar=scalar, pitch=pitch)
        else:
            sal = np.abs(grad).sum(axis=-1)
        total = sal.sum()
        if not np.isfinite(total) or total <= 0:
            raise DegenerateSaliencyError("degenerate saliency")
        return sal / total


def finite_difference_saliency(backend: Backend, image: np.ndarray, scalar: str = "norm",
                               pitch: int = 16, eps: float = 1e-3) -> np.ndarray:
    """Central differences of the scalar w.r.t. a uniform shift of each block.

    Each ``pitch`` x ``pitch`` block (all channels) is moved by +/- eps; the
    absolute difference quotient is spread evenly over the block's pixels.
    """
    h, w = image.shape[:2]
    out = np.zeros((h, w))
    for r in range(0, h, pitch):
        for c in range(0, w, pitch):
            up, down = image.copy(), image.copy()
            up[r:r + pitch, c:c + pitch] += eps
            down[r:r + pitch, c:c + pitch] -= eps
            d = (backend.saliency_scalar(up, scalar) - backend.saliency_scalar(down, scalar)) / (2 * eps)
            block = out[r:r + pitch, c:c + pitch]
            block[...] = abs(d) / block.size
    return out


class ToyLinearBackend(Backend):
    """f_raw(x) = W vec(x); optional linear head on top of the raw features."""

    def __init__(self, weights: np.ndarray, input_shape, head: np.ndarray | None = None):
        self.W = np.asarray(weights, dtype=np.float64)
        self.input_shape = tuple(input_shape)
        if self.W.shape[1] != int(np.prod(self.input_shape)):
            raise ValueError("weight matrix does not match input shape")
        self.head = None if head is None else np.asarray(head, dtype=np.float64)
        self.capabilities = BackendCapabilities(
            has_probabilities=self.head is not None,
            has_saliency=True,
            feature_dim=self.W.shape[0],
        )

    @classmethod
    def random(cls, input_shape, k: int = 16, seed: int = 0, classes: int = 0) -> "ToyLinearBackend":
        rng = np.random.default_rng(seed)
        n = int(np.prod(input_shape))
        W = rng.normal(size=(k, n)) / np.sqrt(n)
        head = rng.normal(size=(classes, k)) * 4.0 if classes else None
        return cls(W, input_shape, head)

    def raw_features(self, image):
        return self.W @ self.check_image(image).ravel()

    def raw_features_batch(self, images):
        X = np.stack([self.check_image(im).ravel() for im in images])
        return X @ self.W.T

    def logits(self, image):
        if self.head is None:
            raise CapabilityError("backend lacks classification head")
        return self.head @ self.raw_features(image)

    def gradient(self, image, scalar="norm"):
        image = self.check_image(image)
        if scalar == "norm":
            v = self.W @ image.ravel()
            n = np.linalg.norm(v)
            if n == 0:
                return np.zeros(self.input_shape)
            g = self.W.T @ v / n
        elif scalar == "max-logit":
            z = self.logits(image)
            g = (self.head @ self.W)[int(np.argmax(z))]
        else:
            raise ValueError(f"unknown saliency scalar {scalar!r}")
        return g.reshape(self.input_shape)


class OracleRegionModel(Backend):
    """Toy model whose outputs depend only on the pixels inside one rectangle.

    Features are ``W vec(x[R]) + b`` and logits ``A vec(x[R])``, so a fully
    occluded region yields the uniform class distribution.
    """

    def __init__(self, region, input_shape=(224, 224, 3), k: int = 64, classes: int = 10,
                 seed: int = 0, with_head: bool = True, logit_scale: float = 8.0):
        r0, c0, rh, rw = region
        h, w, ch = input_shape
        if rh < 1 or rw < 1 or r0 < 0 or c0 < 0 or r0 + rh > h or c0 + rw > w:
            raise ValueError(f"region {region} does not fit input shape {input_shape}")
        self.region = (int(r0), int(c0), int(rh), int(rw))
        self.input_shape = tuple(input_shape)
        n = rh * rw * ch
        rng = np.random.default_rng(seed)
        self.W = rng.normal(size=(k, n)) / np.sqrt(n)
        self.b = rng.normal(size=k)
        self.A = rng.normal(size=(classes, n)) * (logit_scale / np.sqrt(n)) if with_head else None
        self.capabilities = BackendCapabilities(
            has_probabilities=with_head, has_saliency=True, feature_dim=k
        )

    @property
    def region_mask(self) -> np.ndarray:
        r0, c0, rh, rw = self.region
        out = np.zeros(self.input_shape[:2], dtype=bool)
        out[r0:r0 + rh, c0:c0 + rw] = True
        return out

    def _crop(self, image):
        r0, c0, rh, rw = self.region
        return self.check_image(image)[r0:r0 + rh, c0:c0 + rw].ravel()

    def raw_features(self, image):
        return self.W @ self._crop(image) + self.b

    def raw_features_batch(self, images):
        X = np.stack([self._crop(im) for im in images])
        return X @ self.W.T + self.b

    def logits(self, image):
        if self.A is None:
            raise CapabilityError("backend lacks classification head")
        return self.A @ self._crop(image)

    def logits_batch(self, images):
        if self.A is None:
            raise CapabilityError("backend lacks classification head")
        return np.stack([self._crop(im) for im in images]) @ self.A.T

    def gradient(self, image, scalar="norm"):
        r0, c0, rh, rw = self.region
        if scalar == "norm":
            v = self.raw_features(image)
            g = self.W.T @ v / np.linalg.norm(v)
        elif scalar == "max-logit":
            g = self.A[int(np.argmax(self.logits(image)))]
        else:
            raise ValueError(f"unknown saliency scalar {scalar!r}")
        out = np.zeros(self.input_shape)
        out[r0:r0 + rh, c0:c0 + rw] = g.reshape(rh, rw, self.input_shape[2])
        return out


@dataclass(frozen=True)
class InputSpec:
    """How to feed a loaded network; ignored by the toy models except ``shape``."""

    shape: tuple = (224, 224, 3)
    input_name: str | None = None
    feature_output: str | None = None
    logits_output: str | None = None
    mean: tuple = field(default=IMAGENET_MEAN)
    std: tuple = field(default=IMAGENET_STD)
    layout: str = "NCHW"
    saliency: str = "fd"


class OnnxBackend(Backend):
    def __init__(self, path, spec: InputSpec):
        try:
            import onnxruntime as ort
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise ModelLoadError("onnxruntime is required to load ONNX models") from exc
        if not spec.feature_output:
            raise ModelLoadError("config must name the feature output tensor")
        try:
            opts = ort.SessionOptions()
            opts.intra_op_num_threads = 1
            self.session = ort.InferenceSession(str(path), opts, providers=["CPUExecutionProvider"])
        except Exception as exc:
            raise ModelLoadError(f"failed to load model {path}: {exc}") from exc

        inputs = {i.name: i for i in self.session.get_inputs()}
        outputs = {o.name: o for o in self.session.get_outputs()}
        self.input_name = spec.input_name or next(iter(inputs))
        if self.input_name not in inputs:
            raise ModelLoadError(f"input tensor {self.input_name!r} not found in model")
        for name in (spec.feature_output, spec.logits_output):
            if name is not None and name not in outputs:
                raise ModelLoadError(f"output tensor {name!r} not found in model")
        if spec.layout not in ("NCHW", "NHWC"):
            raise ModelLoadError(f"unsupported layout {spec.layout!r}")

        self.spec = spec
        self.input_shape = tuple(spec.shape)
        self._mean = np.asarray(spec.mean, dtype=np.float32)
        self._std = np.asarray(spec.std, dtype=np.float32)
        dim = outputs[spec.feature_output].shape[-1]
        if not isinstance(dim, int):
            dim = int(self._run([np.zeros(self.input_shape)], spec.feature_output).shape[-1])
        self.capabilities = BackendCapabilities(
            has_probabilities=spec.logits_output is not None,
            has_saliency=spec.saliency == "fd",
            feature_dim=int(dim),
        )

    def _prepare(self, images) -> np.ndarray:
        batch = np.stack([self.check_image(im) for im in images]).astype(np.float32)
        batch = (batch - self._mean) / self._std
        if self.spec.layout == "NCHW":
            batch = batch.transpose(0, 3, 1, 2)
        return np.ascontiguousarray(batch)

    def _run(self, images, output: str) -> np.ndarray:
        out = self.session.run([output], {self.input_name: self._prepare(images)})[0]
        return np.asarray(out, dtype=np.float64).reshape(len(images), -1)

    def raw_features(self, image):
        return self._run([image], self.spec.feature_output)[0]

    def raw_features_batch(self, images):
        return self._run(list(images), self.spec.feature_output)

    def logits(self, image):
        if self.spec.logits_output is None:
            raise CapabilityError("backend lacks classification head")
        return self._run([image], self.spec.logits_output)[0]

    def logits_batch(self, images):
        if self.spec.logits_output is None:
            raise CapabilityError("backend lacks classification head")
        return self._run(list(images), self.spec.logits_output)


_ORACLE_RE = re.compile(r"^oracle:(\d+)x(\d+)@\(\s*(\d+)\s*,\s*(\d+)\s*\)$")


def _parse_options(parts) -> dict:
    opts = {}
    for part in parts:
        if not part.strip():
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise ModelLoadError(f"malformed model option {part!r}")
        try:
            opts[key.strip()] = int(value)
        except ValueError as exc:
            raise ModelLoadError(f"model option {key!r} must be an integer") from exc
    return opts


def load_model(spec: str, input_spec: InputSpec | None = None) -> Backend:
    """Build a backend from a toy-model name or an ONNX file path.

    Toy names::

        oracle:<h>x<w>@(<row>,<col>)[;k=64][;classes=10][;seed=0][;head=1]
        linear[;k=16][;classes=0][;seed=0]

    ``row``/``col`` give the region's top-left pixel.  A relative file path
    that does not exist is looked up under ``$OSADAS_MODEL_DIR``.
    """
    input_spec = input_spec or InputSpec()
    head, *rest = str(spec).split(";")
    if head.startswith("oracle:"):
        m = _ORACLE_RE.match(head.replace(" ", ""))
        if not m:
            raise ModelLoadError(f"malformed oracle model name {spec!r}")
        rh, rw, r0, c0 = (int(g) for g in m.groups())
        opts = _parse_options(rest)
        unknown = set(opts) - {"k", "classes", "seed", "head"}
        if unknown:
            raise ModelLoadError(f"unknown oracle options {sorted(unknown)}")
        try:
            return OracleRegionModel(
                (r0, c0, rh, rw), input_spec.shape, k=opts.get("k", 64),
                classes=opts.get("classes", 10), seed=opts.get("seed", 0),
                with_head=bool(opts.get("head", 1)),
            )
        except ValueError as exc:
            raise ModelLoadError(str(exc)) from exc
    if head == "linear":
        opts = _parse_options(rest)
        unknown = set(opts) - {"k", "classes", "seed"}
        if unknown:
            raise ModelLoadError(f"unknown linear options {sorted(unknown)}")
        return ToyLinearBackend.random(input_spec.shape, k=opts.get("k", 16),
                                       seed=opts.get("seed", 0), classes=opts.get("classes", 0))

    path = Path(spec)
    if not path.is_absolute() and not path.exists() and os.environ.get(MODEL_DIR_ENV):
        path = Path(os.environ[MODEL_DIR_ENV]) / path
    if not path.exists():
        raise ModelLoadError(f"model file not found: {path}")
    if path.suffix.lower() != ".onnx":
        raise ModelLoadError(f"unsupported model format {path.suffix!r} (expected .onnx)")
    return OnnxBackend(path, input_spec)
