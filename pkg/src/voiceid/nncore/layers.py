"""Layers with hand-written backward passes and a sequential ``Network``.

Array layouts:
    conv2d            (batch, channels, freq, time)
    conv1d / splice   (batch, channels, time)
    linear            (batch, features) or (batch, features, time)
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import conv2d as _conv2d

LAYER_KINDS = (
    "conv1d",
    "conv2d_dilated",
    "linear",
    "relu",
    "sigmoid",
    "global_avg_pool",
    "tdnn_splice",
    "replicate_pad",
)


class ShapeError(ValueError):
    """Input does not fit a layer; the message names the layer."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    filters: int = 0
    kernel: tuple[int, int] = (1, 1)
    dilation: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: str = "valid"
    offsets: tuple[int, ...] = ()
    pad: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"{self.name}: unknown layer kind {self.kind!r}")
        if min(self.dilation) < 1 or self.stride < 1 or min(self.kernel) < 1:
            raise ValueError(f"{self.name}: kernel, dilation and stride must be >= 1")
        if self.padding not in ("valid", "same_zero"):
            raise ValueError(f"{self.name}: padding must be 'valid' or 'same_zero'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        for key in ("kernel", "dilation", "offsets", "pad"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Param:
    name: str
    value: np.ndarray
    trainable: bool = True
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.grad = np.zeros_like(self.value)


def _uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.name = spec.name
        self._cache = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        return self._cache

    def out_channels(self, in_channels: int) -> int:
        return in_channels

    def clear(self):
        self._cache = None


class Conv1d(Layer):
    """1-D convolution over time. ``kernel = (in_channels, width)``."""

    def __init__(self, spec, in_channels, rng, dtype):
        super().__init__(spec)
        span, width = spec.kernel
        if span != in_channels:
            raise ShapeError(f"{self.name}: kernel spans {span} channels but input has {in_channels}")
        if spec.padding != "valid":
            raise ValueError(f"{self.name}: conv1d supports valid padding only")
        fan_in = in_channels * width
        self.weight = Param(f"{self.name}.weight", _uniform(rng, (spec.filters, in_channels, width), fan_in, dtype))
        self.bias = Param(f"{self.name}.bias", np.zeros(spec.filters, dtype=dtype))

    def params(self):
        return [self.weight, self.bias]

    def out_channels(self, in_channels):
        return self.spec.filters

    def _windows(self, x):
        width = self.spec.kernel[1]
        d = self.spec.dilation[1]
        s = self.spec.stride
        t_out = (x.shape[2] - d * (width - 1) - 1) // s + 1
        if t_out < 1:
            raise ShapeError(f"{self.name}: {x.shape[2]} frames is shorter than the kernel")
        cols = np.empty((x.shape[0], x.shape[1], width, t_out), dtype=x.dtype)
        for k in range(width):
            start = k * d
            cols[:, :, k] = x[:, :, start:start + s * (t_out - 1) + 1:s]
        return cols, t_out

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.spec.kernel[0]:
            raise ShapeError(f"{self.name}: expected (batch, {self.spec.kernel[0]}, time), got {x.shape}")
        cols, t_out = self._windows(x)
        flat = cols.reshape(x.shape[0], -1, t_out)
        w = self.weight.value.reshape(self.spec.filters, -1)
        out = np.matmul(w, flat) + self.bias.value[None, :, None]
        self._cache = (flat, x.shape)
        return out

    def backward(self, grad):
        flat, x_shape = self._cached()
        width = self.spec.kernel[1]
        d = self.spec.dilation[1]
        s = self.spec.stride
        w = self.weight.value.reshape(self.spec.filters, -1)
        self.weight.grad += np.einsum("bot,bkt->ok", grad, flat, optimize=True).reshape(self.weight.value.shape)
        self.bias.grad += grad.sum(axis=(0, 2))
        dcols = np.matmul(w.T, grad).reshape(x_shape[0], x_shape[1], width, -1)
        t_out = dcols.shape[-1]
        gx = np.zeros(x_shape, dtype=grad.dtype)
        for k in range(width):
            start = k * d
            gx[:, :, start:start + s * (t_out - 1) + 1:s] += dcols[:, :, k]
        return gx


class Conv2dDilated(Layer):
    def __init__(self, spec, in_channels, rng, dtype):
        super().__init__(spec)
        kh, kw = spec.kernel
        if spec.stride != 1:
            raise ValueError(f"{self.name}: conv2d_dilated supports stride 1 only")
        if spec.padding == "same_zero" and (kh % 2 == 0 or kw % 2 == 0):
            raise ValueError(f"{self.name}: same padding needs odd kernel sizes")
        self.in_channels = in_channels
        fan_in = in_channels * kh * kw
        self.weight = Param(f"{self.name}.weight", _uniform(rng, (spec.filters, in_channels, kh, kw), fan_in, dtype))
        self.bias = Param(f"{self.name}.bias", np.zeros(spec.filters, dtype=dtype))
        if spec.padding == "same_zero":
            self.pad = ((kh - 1) * spec.dilation[0] // 2, (kw - 1) * spec.dilation[1] // 2)
        else:
            self.pad = (0, 0)

    def params(self):
        return [self.weight, self.bias]

    def out_channels(self, in_channels):
        return self.spec.filters

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.name}: expected (batch, {self.in_channels}, freq, time), got {x.shape}")
        try:
            out, xp = _conv2d.forward(x, self.weight.value, self.bias.value, self.spec.dilation, self.pad)
        except ValueError as exc:
            raise ShapeError(f"{self.name}: {exc}") from None
        self._cache = xp
        return out

    def backward(self, grad):
        xp = self._cached()
        gx, gw, gb = _conv2d.backward(grad, xp, self.weight.value, self.spec.dilation, self.pad)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


class Linear(Layer):
    def __init__(self, spec, in_features, rng, dtype, zero_init=False):
        super().__init__(spec)
        self.in_features = in_features
        shape = (spec.filters, in_features)
        w = np.zeros(shape, dtype=dtype) if zero_init else _uniform(rng, shape, in_features, dtype)
        self.weight = Param(f"{self.name}.weight", w)
        self.bias = Param(f"{self.name}.bias", np.zeros(spec.filters, dtype=dtype))

    def params(self):
        return [self.weight, self.bias]

    def out_channels(self, in_channels):
        return self.spec.filters

    def forward(self, x):
        if x.ndim not in (2, 3) or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected {self.in_features} input features, got shape {x.shape}")
        self._cache = x
        if x.ndim == 2:
            return x @ self.weight.value.T + self.bias.value
        return np.matmul(self.weight.value, x) + self.bias.value[None, :, None]

    def backward(self, grad):
        x = self._cached()
        if x.ndim == 2:
            self.weight.grad += grad.T @ x
            self.bias.grad += grad.sum(axis=0)
            return grad @ self.weight.value
        self.weight.grad += np.einsum("bot,bit->oi", grad, x, optimize=True)
        self.bias.grad += grad.sum(axis=(0, 2))
        return np.matmul(self.weight.value.T, grad)


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, grad):
        return grad * self._cached()


class Sigmoid(Layer):
    def forward(self, x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._cache = out
        return out

    def backward(self, grad):
        y = self._cached()
        return grad * y * (1.0 - y)


class GlobalAvgPool(Layer):
    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"{self.name}: expected (batch, channels, time), got {x.shape}")
        self._cache = x.shape
        return x.mean(axis=2)

    def backward(self, grad):
        shape = self._cached()
        return np.broadcast_to(grad[:, :, None] / shape[2], shape).copy()


class TdnnSplice(Layer):
    """Concatenate frames at fixed offsets along the channel axis (valid mode)."""

    def __init__(self, spec):
        super().__init__(spec)
        if not spec.offsets:
            raise ValueError(f"{self.name}: splice needs at least one offset")
        self.offsets = tuple(spec.offsets)
        self.lo = min(self.offsets)
        self.context = max(self.offsets) - self.lo + 1

    def out_channels(self, in_channels):
        return in_channels * len(self.offsets)

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"{self.name}: expected (batch, channels, time), got {x.shape}")
        t_out = x.shape[2] - self.context + 1
        if t_out < 1:
            raise ShapeError(f"{self.name}: {x.shape[2]} frames shorter than splice context {self.context}")
        parts = [x[:, :, o - self.lo:o - self.lo + t_out] for o in self.offsets]
        self._cache = x.shape
        return np.concatenate(parts, axis=1)

    def backward(self, grad):
        shape = self._cached()
        c = shape[1]
        t_out = grad.shape[2]
        gx = np.zeros(shape, dtype=grad.dtype)
        for k, o in enumerate(self.offsets):
            gx[:, :, o - self.lo:o - self.lo + t_out] += grad[:, k * c:(k + 1) * c]
        return gx


class ReplicatePad(Layer):
    """Repeat the first/last frame along time."""

    def forward(self, x):
        left, right = self.spec.pad
        self._cache = x.shape
        return np.pad(x, ((0, 0), (0, 0), (left, right)), mode="edge")

    def backward(self, grad):
        left, right = self.spec.pad
        shape = self._cached()
        t = shape[2]
        gx = grad[:, :, left:left + t].copy()
        gx[:, :, 0] += grad[:, :, :left].sum(axis=2)
        gx[:, :, -1] += grad[:, :, left + t:].sum(axis=2)
        return gx


def make_layer(spec: LayerSpec, in_channels: int, rng, dtype, zero_init=False) -> Layer:
    if spec.kind == "conv1d":
        return Conv1d(spec, in_channels, rng, dtype)
    if spec.kind == "conv2d_dilated":
        return Conv2dDilated(spec, in_channels, rng, dtype)
    if spec.kind == "linear":
        return Linear(spec, in_channels, rng, dtype, zero_init=zero_init)
    if spec.kind == "relu":
        return ReLU(spec)
    if spec.kind == "sigmoid":
        return Sigmoid(spec)
    if spec.kind == "global_avg_pool":
        return GlobalAvgPool(spec)
    if spec.kind == "tdnn_splice":
        return TdnnSplice(spec)
    return ReplicatePad(spec)


class Network:
    """Ordered chain of layers sharing one forward cache per call."""

    def __init__(self, specs, in_channels, seed=0, dtype=np.float64, zero_init=()):
        self.specs = list(specs)
        self.in_channels = in_channels
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers: list[Layer] = []
        channels = in_channels
        names = set()
        for spec in self.specs:
            if spec.name in names:
                raise ValueError(f"duplicate layer name {spec.name!r}")
            names.add(spec.name)
            layer = make_layer(spec, channels, rng, self.dtype, zero_init=spec.name in zero_init)
            channels = layer.out_channels(channels)
            self.layers.append(layer)
        self.out_channels = channels
        self._depth = None

    def index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)

    def forward(self, x, until: str | None = None):
        """Run layers in order; stop after layer ``until`` when given."""
        x = np.asarray(x, dtype=self.dtype)
        stop = len(self.layers) if until is None else self.index(until) + 1
        for layer in self.layers[stop:]:
            layer.clear()
        for layer in self.layers[:stop]:
            x = layer.forward(x)
        self._depth = stop
        return x

    def backward(self, grad):
        """Backpropagate ``grad`` (d loss / d output); returns d loss / d input."""
        if self._depth is None:
            raise RuntimeError("backward called before forward")
        grad = np.asarray(grad, dtype=self.dtype)
        for layer in reversed(self.layers[:self._depth]):
            grad = layer.backward(grad)
        return grad

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0

    def set_trainable(self, flag: bool):
        for p in self.params():
            p.trainable = flag

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params())


class Multiply:
    """Two-input elementwise product junction (mask times spectrogram)."""

    def __init__(self):
        self._cache = None

    def forward(self, a, b):
        self._cache = (a, b)
        return a * b

    def backward(self, grad):
        if self._cache is None:
            raise RuntimeError("multiply: backward called before forward")
        a, b = self._cache
        return grad * b, grad * a
