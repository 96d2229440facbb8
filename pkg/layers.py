"""
Layer zoo for the from-scratch network engine.

Every layer works on batched arrays (batch first) and implements an explicit
forward/backward pair; the graph in model_graph.py chains them.
"""
from __future__ import annotations

from enum import Enum
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, model_validator

from errors import ShapeError


class LayerKind(str, Enum):
    DENSE = "Dense"
    CONV1D = "Conv1d"
    CONV2D = "Conv2d"
    MAXPOOL1D = "MaxPool1d"
    MAXPOOL2D = "MaxPool2d"
    GLOBAL_MAX_POOL = "GlobalMaxPool"
    DROPOUT = "Dropout"
    RELU = "Relu"
    FLATTEN = "Flatten"
    CONCAT = "Concat"


def as_pair(v) -> tuple[int, int]:
    return (int(v), int(v)) if isinstance(v, int) else (int(v[0]), int(v[1]))


class LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: LayerKind
    units: int | None = None
    filters: int | None = None
    kernel: int | tuple[int, int] | None = None
    stride: int | tuple[int, int] | None = None
    pool: int | tuple[int, int] | None = None
    rate: float | None = None

    @model_validator(mode="after")
    def _check(self):
        k = self.kind
        if k is LayerKind.DENSE and (self.units is None or self.units < 1):
            raise ValueError("Dense needs units >= 1")
        if k in (LayerKind.CONV1D, LayerKind.CONV2D):
            if self.filters is None or self.filters < 1 or self.kernel is None:
                raise ValueError(f"{k.value} needs filters >= 1 and a kernel")
            is_2d = k is LayerKind.CONV2D
            for field in ("kernel", "stride"):
                value = getattr(self, field)
                if value is None:
                    continue
                if isinstance(value, tuple) != is_2d:
                    raise ValueError(f"{k.value} {field} must be {'a pair' if is_2d else 'an integer'}, got {value}")
                if min(as_pair(value)) < 1:
                    raise ValueError(f"{k.value} {field} must be >= 1, got {value}")
        if k is LayerKind.MAXPOOL1D and (not isinstance(self.pool, int) or self.pool < 1):
            raise ValueError("MaxPool1d needs an integer pool >= 1")
        if k is LayerKind.MAXPOOL2D and (not isinstance(self.pool, tuple) or min(self.pool) < 1):
            raise ValueError("MaxPool2d needs a pool pair >= 1")
        if k is LayerKind.DROPOUT and (self.rate is None or not 0 <= self.rate < 1):
            raise ValueError(f"Dropout rate must be in [0, 1), got {self.rate}")
        return self

    # Shorthand constructors
    @classmethod
    def dense(cls, units):
        return cls(kind=LayerKind.DENSE, units=units)

    @classmethod
    def conv1d(cls, filters, kernel, stride=1):
        return cls(kind=LayerKind.CONV1D, filters=filters, kernel=kernel, stride=stride)

    @classmethod
    def conv2d(cls, filters, kernel, stride=(1, 1)):
        return cls(kind=LayerKind.CONV2D, filters=filters, kernel=tuple(kernel), stride=tuple(stride))

    @classmethod
    def maxpool1d(cls, pool):
        return cls(kind=LayerKind.MAXPOOL1D, pool=pool)

    @classmethod
    def maxpool2d(cls, pool):
        return cls(kind=LayerKind.MAXPOOL2D, pool=tuple(pool))

    @classmethod
    def global_max_pool(cls):
        return cls(kind=LayerKind.GLOBAL_MAX_POOL)

    @classmethod
    def dropout(cls, rate):
        return cls(kind=LayerKind.DROPOUT, rate=rate)

    @classmethod
    def relu(cls):
        return cls(kind=LayerKind.RELU)

    @classmethod
    def flatten(cls):
        return cls(kind=LayerKind.FLATTEN)

    @classmethod
    def concat(cls):
        return cls(kind=LayerKind.CONCAT)


# --- Layers ---
class Layer:
    """Base layer: parameter-free identity."""

    has_params = False

    def __init__(self, spec: LayerSpec, name: str):
        self.spec = spec
        self.name = name

    def init_params(self, in_shape, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
        return {}

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(in_shape)

    def forward(self, x, params, training=False, rng=None) -> tuple[np.ndarray, Any]:
        return x, None

    def backward(self, dy, cache, params, need_dx=True) -> tuple[np.ndarray | None, dict[str, np.ndarray]]:
        return dy, {}

    def _fail(self, message):
        raise ShapeError(f"layer '{self.name}': {message}")


def _he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _correlate1d(x, w, stride: int) -> np.ndarray:
    windows = sliding_window_view(x, w.shape[2], axis=2)[:, :, ::stride, :]
    return np.einsum("bclk,fck->bfl", windows, w, optimize=True)


def conv1d_forward(x, w, stride: int = 1, b=None) -> np.ndarray:
    """
    One sample through a valid 1D cross-correlation.

    Args:
        x: input [C_in, L].
        w: filters [C_out, C_in, K].
        stride: step between windows.
        b: optional bias [C_out].

    Returns:
        [C_out, (L - K) // stride + 1]; the batched `Conv1d` layer computes
        the same thing for every sample of a [B, C_in, L] batch.
    """
    x, w = np.asarray(x), np.asarray(w)
    if x.ndim != 2 or w.ndim != 3 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"conv1d_forward expects x [C_in, L] and w [C_out, C_in, K], got {x.shape} and {w.shape}")
    if w.shape[2] > x.shape[1]:
        raise ShapeError(f"kernel {w.shape[2]} exceeds input length {x.shape[1]}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    y = _correlate1d(x[None], w, stride)[0]
    return y if b is None else y + np.asarray(b)[:, None]


class Dense(Layer):
    has_params = True

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            self._fail(f"Dense expects flat input, got per-sample shape {in_shape}")
        return (self.spec.units,)

    def init_params(self, in_shape, rng, dtype=np.float32):
        d = in_shape[0]
        return {"w": _he_normal(rng, (d, self.spec.units), d, dtype), "b": np.zeros(self.spec.units, dtype=dtype)}

    def forward(self, x, params, training=False, rng=None):
        return x @ params["w"] + params["b"], x

    def backward(self, dy, cache, params, need_dx=True):
        x = cache
        grads = {"w": x.T @ dy, "b": dy.sum(axis=0)}
        return (dy @ params["w"].T if need_dx else None), grads


class Conv1d(Layer):
    """Valid cross-correlation: x [B, C, L] * w [F, C, K] -> [B, F, (L - K) // s + 1]."""

    has_params = True

    @property
    def stride(self) -> int:
        return int(self.spec.stride or 1)

    def output_shape(self, in_shape):
        if len(in_shape) != 2:
            self._fail(f"Conv1d expects [C, L] input, got {in_shape}")
        length = in_shape[1]
        if self.spec.kernel > length:
            self._fail(f"kernel {self.spec.kernel} exceeds input length {length}")
        return (self.spec.filters, (length - self.spec.kernel) // self.stride + 1)

    def init_params(self, in_shape, rng, dtype=np.float32):
        c, k = in_shape[0], self.spec.kernel
        return {"w": _he_normal(rng, (self.spec.filters, c, k), c * k, dtype), "b": np.zeros(self.spec.filters, dtype=dtype)}

    def forward(self, x, params, training=False, rng=None):
        self.output_shape(x.shape[1:])
        y = _correlate1d(x, params["w"], self.stride) + params["b"][None, :, None]
        return y, x

    def backward(self, dy, cache, params, need_dx=True):
        x = cache
        k, s = self.spec.kernel, self.stride
        windows = sliding_window_view(x, k, axis=2)[:, :, ::s, :]
        grads = {
            "w": np.einsum("bfl,bclk->fck", dy, windows, optimize=True),
            "b": dy.sum(axis=(0, 2)),
        }
        if not need_dx:
            return None, grads
        dx = np.zeros_like(x)
        span = s * (dy.shape[2] - 1) + 1
        for tap in range(k):
            dx[:, :, tap:tap + span:s] += np.einsum("bfl,fc->bcl", dy, params["w"][:, :, tap], optimize=True)
        return dx, grads


class Conv2d(Layer):
    """Valid 2D cross-correlation over [B, C, H, W] with per-axis stride."""

    has_params = True

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            self._fail(f"Conv2d expects [C, H, W] input, got {in_shape}")
        (kh, kw), (sh, sw) = as_pair(self.spec.kernel), as_pair(self.spec.stride or 1)
        _, h, w = in_shape
        if kh > h or kw > w:
            self._fail(f"kernel {(kh, kw)} exceeds input {(h, w)}")
        return (self.spec.filters, (h - kh) // sh + 1, (w - kw) // sw + 1)

    def init_params(self, in_shape, rng, dtype=np.float32):
        c = in_shape[0]
        kh, kw = as_pair(self.spec.kernel)
        return {
            "w": _he_normal(rng, (self.spec.filters, c, kh, kw), c * kh * kw, dtype),
            "b": np.zeros(self.spec.filters, dtype=dtype),
        }

    def _windows(self, x):
        (kh, kw), (sh, sw) = as_pair(self.spec.kernel), as_pair(self.spec.stride or 1)
        return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]

    def forward(self, x, params, training=False, rng=None):
        self.output_shape(x.shape[1:])
        y = np.einsum("bchwij,fcij->bfhw", self._windows(x), params["w"], optimize=True)
        return y + params["b"][None, :, None, None], x

    def backward(self, dy, cache, params, need_dx=True):
        x = cache
        grads = {
            "w": np.einsum("bfhw,bchwij->fcij", dy, self._windows(x), optimize=True),
            "b": dy.sum(axis=(0, 2, 3)),
        }
        if not need_dx:
            return None, grads
        (kh, kw), (sh, sw) = as_pair(self.spec.kernel), as_pair(self.spec.stride or 1)
        span_h = sh * (dy.shape[2] - 1) + 1
        span_w = sw * (dy.shape[3] - 1) + 1
        dx = np.zeros_like(x)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + span_h:sh, j:j + span_w:sw] += np.einsum(
                    "bfhw,fc->bchw", dy, params["w"][:, :, i, j], optimize=True
                )
        return dx, grads


class MaxPool1d(Layer):
    def output_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[1] < self.spec.pool:
            self._fail(f"MaxPool1d({self.spec.pool}) cannot pool input {in_shape}")
        return (in_shape[0], in_shape[1] // self.spec.pool)

    def forward(self, x, params, training=False, rng=None):
        p = self.spec.pool
        b, c, length = x.shape
        out = length // p
        blocks = x[:, :, :out * p].reshape(b, c, out, p)
        idx = blocks.argmax(axis=3)
        y = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]
        return y, (x.shape, idx)

    def backward(self, dy, cache, params, need_dx=True):
        shape, idx = cache
        if not need_dx:
            return None, {}
        p = self.spec.pool
        b, c, length = shape
        out = length // p
        blocks = np.zeros((b, c, out, p), dtype=dy.dtype)
        np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=3)
        dx = np.zeros(shape, dtype=dy.dtype)
        dx[:, :, :out * p] = blocks.reshape(b, c, out * p)
        return dx, {}


class MaxPool2d(Layer):
    def output_shape(self, in_shape):
        ph, pw = as_pair(self.spec.pool)
        if len(in_shape) != 3 or in_shape[1] < ph or in_shape[2] < pw:
            self._fail(f"MaxPool2d({(ph, pw)}) cannot pool input {in_shape}")
        return (in_shape[0], in_shape[1] // ph, in_shape[2] // pw)

    def forward(self, x, params, training=False, rng=None):
        ph, pw = as_pair(self.spec.pool)
        b, c, h, w = x.shape
        oh, ow = h // ph, w // pw
        blocks = (
            x[:, :, :oh * ph, :ow * pw]
            .reshape(b, c, oh, ph, ow, pw)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, oh, ow, ph * pw)
        )
        idx = blocks.argmax(axis=4)
        y = np.take_along_axis(blocks, idx[..., None], axis=4)[..., 0]
        return y, (x.shape, idx)

    def backward(self, dy, cache, params, need_dx=True):
        shape, idx = cache
        if not need_dx:
            return None, {}
        ph, pw = as_pair(self.spec.pool)
        b, c, h, w = shape
        oh, ow = h // ph, w // pw
        blocks = np.zeros((b, c, oh, ow, ph * pw), dtype=dy.dtype)
        np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=4)
        dx = np.zeros(shape, dtype=dy.dtype)
        dx[:, :, :oh * ph, :ow * pw] = (
            blocks.reshape(b, c, oh, ow, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh * ph, ow * pw)
        )
        return dx, {}


class GlobalMaxPool(Layer):
    """Max over every non-channel axis: [B, C, ...] -> [B, C]."""

    def output_shape(self, in_shape):
        if len(in_shape) < 2:
            self._fail(f"GlobalMaxPool expects [C, ...] input, got {in_shape}")
        return (in_shape[0],)

    def forward(self, x, params, training=False, rng=None):
        flat = x.reshape(x.shape[0], x.shape[1], -1)
        idx = flat.argmax(axis=2)
        return np.take_along_axis(flat, idx[..., None], axis=2)[..., 0], (x.shape, idx)

    def backward(self, dy, cache, params, need_dx=True):
        shape, idx = cache
        if not need_dx:
            return None, {}
        flat = np.zeros((shape[0], shape[1], int(np.prod(shape[2:]))), dtype=dy.dtype)
        np.put_along_axis(flat, idx[..., None], dy[..., None], axis=2)
        return flat.reshape(shape), {}


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    def forward(self, x, params, training=False, rng=None):
        rate = self.spec.rate
        if not training or rate == 0:
            return x, None
        if rng is None:
            raise ValueError(f"layer '{self.name}': training-mode dropout needs a random generator")
        mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
        return x * mask, mask

    def backward(self, dy, cache, params, need_dx=True):
        return (dy if cache is None else dy * cache), {}


class Relu(Layer):
    def forward(self, x, params, training=False, rng=None):
        positive = x > 0
        return np.where(positive, x, 0).astype(x.dtype, copy=False), positive

    def backward(self, dy, cache, params, need_dx=True):
        return dy * cache, {}


class Flatten(Layer):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params, training=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, params, need_dx=True):
        return dy.reshape(cache), {}


_LAYER_CLASSES = {
    LayerKind.DENSE: Dense,
    LayerKind.CONV1D: Conv1d,
    LayerKind.CONV2D: Conv2d,
    LayerKind.MAXPOOL1D: MaxPool1d,
    LayerKind.MAXPOOL2D: MaxPool2d,
    LayerKind.GLOBAL_MAX_POOL: GlobalMaxPool,
    LayerKind.DROPOUT: Dropout,
    LayerKind.RELU: Relu,
    LayerKind.FLATTEN: Flatten,
}


def make_layer(spec: LayerSpec, name: str) -> Layer:
    if spec.kind is LayerKind.CONCAT:
        raise ShapeError(f"layer '{name}': Concat only marks the merge point at the start of the head")
    return _LAYER_CLASSES[spec.kind](spec, name)


CONV_KINDS = (LayerKind.CONV1D, LayerKind.CONV2D)
