"""Convolutional regressor written directly in numpy.

Tensors are laid out ``(batch, channels, time, freq)``. Convolutions and
pooling use "same" padding (output size ``ceil(in / stride)``, surplus padding
after the data), matching the Keras convention the layer table was written in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Union

import numpy as np


# ---------------------------------------------------------------------------
# layer specs

@dataclass(frozen=True)
class Conv:
    filters: int
    kernel: tuple
    stride: tuple = (1, 1)
    l2: float = 0.001
    kind: str = field(default="conv", init=False)


@dataclass(frozen=True)
class MaxPool:
    kernel: tuple
    stride: tuple
    kind: str = field(default="maxpool", init=False)


@dataclass(frozen=True)
class BatchNorm:
    eps: float = 1e-5
    momentum: float = 0.9
    kind: str = field(default="batchnorm", init=False)


@dataclass(frozen=True)
class Flatten:
    kind: str = field(default="flatten", init=False)


@dataclass(frozen=True)
class Dense:
    units: int
    dropout: float = 0.0
    kind: str = field(default="dense", init=False)


LayerSpec = Union[Conv, MaxPool, BatchNorm, Flatten, Dense]
_KINDS = {"conv": Conv, "maxpool": MaxPool, "batchnorm": BatchNorm, "flatten": Flatten,
          "dense": Dense}


@dataclass(frozen=True)
class NetworkConfig:
    input_shape: tuple
    layers: tuple
    output_bias_init: float = 14.0

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "output_bias_init": self.output_bias_init,
                "layers": [asdict(layer) for layer in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        layers = []
        for spec in d["layers"]:
            spec = dict(spec)
            kind = spec.pop("kind")
            for key in ("kernel", "stride"):
                if key in spec:
                    spec[key] = tuple(spec[key])
            layers.append(_KINDS[kind](**spec))
        return cls(tuple(d["input_shape"]), tuple(layers), d.get("output_bias_init", 14.0))


def full_config() -> NetworkConfig:
    """The published architecture for 2 x 374 x 257 log-magnitude input."""
    return NetworkConfig(
        input_shape=(2, 374, 257),
        layers=(
            Conv(32, (16, 16), (1, 1)), MaxPool((8, 8), (4, 4)), BatchNorm(),
            Conv(64, (8, 8), (1, 1)), MaxPool((8, 8), (4, 4)), BatchNorm(),
            Conv(128, (4, 4), (2, 2)), MaxPool((4, 4), (2, 2)), BatchNorm(),
            Flatten(), Dense(256, dropout=0.3), BatchNorm(), Dense(1),
        ))


def reduced_config(input_shape=(2, 94, 65), filters=(8, 16, 32), dense_units=64,
                   dropout=0.3) -> NetworkConfig:
    """Same layer pattern with small filters and kernels, for desk-scale training."""
    f1, f2, f3 = filters
    return NetworkConfig(
        input_shape=tuple(input_shape),
        layers=(
            Conv(f1, (4, 4), (1, 1)), MaxPool((4, 4), (4, 4)), BatchNorm(),
            Conv(f2, (3, 3), (1, 1)), MaxPool((4, 4), (4, 4)), BatchNorm(),
            Conv(f3, (3, 3), (2, 2)), MaxPool((2, 2), (2, 2)), BatchNorm(),
            Flatten(), Dense(dense_units, dropout=dropout), BatchNorm(), Dense(1),
        ))


# ---------------------------------------------------------------------------
# shape arithmetic

def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """``(out, pad_before, pad_after)`` for same padding along one axis."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def output_shapes(config: NetworkConfig) -> list[tuple]:
    """Per-layer output shape (without batch axis), computed from the specs alone."""
    shape = tuple(config.input_shape)
    shapes = []
    for spec in config.layers:
        if isinstance(spec, Conv):
            c, h, w = shape
            shape = (spec.filters, same_padding(h, spec.kernel[0], spec.stride[0])[0],
                     same_padding(w, spec.kernel[1], spec.stride[1])[0])
        elif isinstance(spec, MaxPool):
            c, h, w = shape
            shape = (c, same_padding(h, spec.kernel[0], spec.stride[0])[0],
                     same_padding(w, spec.kernel[1], spec.stride[1])[0])
        elif isinstance(spec, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(spec, Dense):
            shape = (spec.units,)
        shapes.append(shape)
    return shapes


# ---------------------------------------------------------------------------
# layers

class Layer:
    trainable: tuple = ()
    state: tuple = ()

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.cache = None

    def param_count(self) -> int:
        return sum(self.params[k].size for k in self.trainable)

    def l2_penalty(self) -> float:
        return 0.0


class ConvLayer(Layer):
    trainable = ("W", "b")

    def __init__(self, spec: Conv, in_channels: int, rng, dtype):
        super().__init__()
        self.spec = spec
        kh, kw = spec.kernel
        fan_in = in_channels * kh * kw
        limit = math.sqrt(6.0 / fan_in)
        self.params["W"] = rng.uniform(-limit, limit, (spec.filters, in_channels, kh, kw)).astype(dtype)
        self.params["b"] = np.zeros(spec.filters, dtype)

    def l2_penalty(self):
        W = self.params["W"]
        return self.spec.l2 * float(np.sum(W.astype(np.float64) ** 2))

    def forward(self, x, train, keep):
        B, C, H, W_ = x.shape
        (kh, kw), (sh, sw) = self.spec.kernel, self.spec.stride
        ho, pt, pb = same_padding(H, kh, sh)
        wo, pl, pr = same_padding(W_, kw, sw)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        win = win[:, :, : (ho - 1) * sh + 1: sh, : (wo - 1) * sw + 1: sw]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * ho * wo, C * kh * kw)
        Wm = self.params["W"].reshape(self.spec.filters, -1)
        z = cols @ Wm.T + self.params["b"]
        out = np.maximum(z, 0).reshape(B, ho, wo, -1).transpose(0, 3, 1, 2)
        if keep:
            self.cache = (cols, z > 0, xp.shape, (B, C, H, W_), (ho, wo, pt, pl))
        return out

    def backward(self, dout):
        cols, active, xp_shape, x_shape, (ho, wo, pt, pl) = self.cache
        B, C, H, W_ = x_shape
        (kh, kw), (sh, sw) = self.spec.kernel, self.spec.stride
        dz = dout.transpose(0, 2, 3, 1).reshape(B * ho * wo, -1) * active
        W = self.params["W"]
        self.grads["W"] = (dz.T @ cols).reshape(W.shape) + 2.0 * self.spec.l2 * W
        self.grads["b"] = dz.sum(axis=0)
        dcols = (dz @ W.reshape(self.spec.filters, -1)).reshape(B, ho, wo, C, kh, kw)
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i: i + sh * (ho - 1) + 1: sh, j: j + sw * (wo - 1) + 1: sw] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, pt: pt + H, pl: pl + W_]


class MaxPoolLayer(Layer):
    def __init__(self, spec: MaxPool):
        super().__init__()
        self.spec = spec

    def forward(self, x, train, keep):
        B, C, H, W_ = x.shape
        (kh, kw), (sh, sw) = self.spec.kernel, self.spec.stride
        ho, pt, pb = same_padding(H, kh, sh)
        wo, pl, pr = same_padding(W_, kw, sw)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf)
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        win = win[:, :, : (ho - 1) * sh + 1: sh, : (wo - 1) * sw + 1: sw]
        flat = win.reshape(B, C, ho, wo, kh * kw)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        if keep:
            self.cache = (arg, xp.shape, x.shape, (pt, pl))
        return out

    def backward(self, dout):
        arg, xp_shape, x_shape, (pt, pl) = self.cache
        B, C, ho, wo = dout.shape
        (kh, kw), (sh, sw) = self.spec.kernel, self.spec.stride
        rows = np.arange(ho)[:, None] * sh + arg // kw
        cols = np.arange(wo)[None, :] * sw + arg % kw
        flat_idx = rows * xp_shape[3] + cols
        dxp = np.zeros((B, C, xp_shape[2] * xp_shape[3]), dtype=dout.dtype)
        for bi in range(B):
            for ci in range(C):
                dxp[bi, ci] += np.bincount(flat_idx[bi, ci].ravel(), dout[bi, ci].ravel(),
                                           minlength=dxp.shape[2])
        dxp = dxp.reshape(xp_shape)
        return dxp[:, :, pt: pt + x_shape[2], pl: pl + x_shape[3]]


class BatchNormLayer(Layer):
    trainable = ("gamma", "beta")
    state = ("running_mean", "running_var")

    def __init__(self, spec: BatchNorm, channels: int, dtype):
        super().__init__()
        self.spec = spec
        self.params["gamma"] = np.ones(channels, dtype)
        self.params["beta"] = np.zeros(channels, dtype)
        self.params["running_mean"] = np.zeros(channels, dtype)
        self.params["running_var"] = np.ones(channels, dtype)

    @staticmethod
    def _axes(x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    @staticmethod
    def _shape(x, v):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x, train, keep):
        axes = self._axes(x)
        p = self.params
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.spec.momentum
            p["running_mean"] = (m * p["running_mean"] + (1 - m) * mean).astype(x.dtype)
            p["running_var"] = (m * p["running_var"] + (1 - m) * var).astype(x.dtype)
        else:
            mean, var = p["running_mean"], p["running_var"]
        inv = 1.0 / np.sqrt(var + self.spec.eps)
        xhat = (x - self._shape(x, mean)) * self._shape(x, inv)
        self.cache = (xhat, inv, train) if keep else None
        return xhat * self._shape(x, p["gamma"]) + self._shape(x, p["beta"])

    def backward(self, dout):
        xhat, inv, train = self.cache
        axes = self._axes(dout)
        self.grads["gamma"] = np.sum(dout * xhat, axis=axes)
        self.grads["beta"] = np.sum(dout, axis=axes)
        dxhat = dout * self._shape(dout, self.params["gamma"])
        if not train:
            return dxhat * self._shape(dout, inv)
        mean_d = dxhat.mean(axis=axes, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=axes, keepdims=True)
        return (dxhat - mean_d - xhat * mean_dx) * self._shape(dout, inv)


class FlattenLayer(Layer):
    def forward(self, x, train, keep):
        self.cache = x.shape if keep else None
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self.cache)


class DenseLayer(Layer):
    trainable = ("W", "b")

    def __init__(self, spec: Dense, in_units: int, rng, dtype, bias_init=0.0):
        super().__init__()
        self.spec = spec
        limit = math.sqrt(6.0 / in_units)
        self.params["W"] = rng.uniform(-limit, limit, (in_units, spec.units)).astype(dtype)
        self.params["b"] = np.full(spec.units, bias_init, dtype)
        self.dropout_rng = None

    def forward(self, x, train, keep):
        z = x @ self.params["W"] + self.params["b"]
        out = np.maximum(z, 0)
        mask = None
        if train and self.spec.dropout > 0 and self.dropout_rng is not None:
            keep_prob = 1.0 - self.spec.dropout
            mask = (self.dropout_rng.random(out.shape) < keep_prob).astype(x.dtype) / keep_prob
            out = out * mask
        self.cache = (x, z > 0, mask) if keep else None
        return out

    def backward(self, dout):
        x, active, mask = self.cache
        if mask is not None:
            dout = dout * mask
        dz = dout * active
        self.grads["W"] = x.T @ dz
        self.grads["b"] = dz.sum(axis=0)
        return dz @ self.params["W"].T


# ---------------------------------------------------------------------------
# network

class Network:
    """Layer stack built from a :class:`NetworkConfig`.

    Every conv and dense layer applies ReLU, including the single-unit output,
    so predictions are never negative.
    """

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(self.seed)
        self.layers: list[Layer] = []
        shape = tuple(config.input_shape)
        shapes = output_shapes(config)
        n_dense = sum(isinstance(s, Dense) for s in config.layers)
        seen_dense = 0
        for spec, out_shape in zip(config.layers, shapes):
            if isinstance(spec, Conv):
                layer = ConvLayer(spec, shape[0], rng, self.dtype)
            elif isinstance(spec, MaxPool):
                layer = MaxPoolLayer(spec)
            elif isinstance(spec, BatchNorm):
                layer = BatchNormLayer(spec, shape[0], self.dtype)
            elif isinstance(spec, Flatten):
                layer = FlattenLayer()
            elif isinstance(spec, Dense):
                seen_dense += 1
                bias = config.output_bias_init if seen_dense == n_dense else 0.0
                layer = DenseLayer(spec, shape[0], rng, self.dtype, bias)
            else:
                raise TypeError(f"unknown layer spec {spec!r}")
            self.layers.append(layer)
            shape = out_shape
        self.set_dropout_seed(self.seed)
        self.last_shapes: list[tuple] = []

    def set_dropout_seed(self, seed) -> None:
        rng = np.random.default_rng([int(seed), 2])
        for layer in self.layers:
            if isinstance(layer, DenseLayer):
                layer.dropout_rng = rng

    def named_tensors(self, include_state: bool = True):
        """``(name, array)`` pairs in a fixed order, e.g. ``("0.conv.W", ...)``."""
        for i, (spec, layer) in enumerate(zip(self.config.layers, self.layers)):
            keys = layer.trainable + (layer.state if include_state else ())
            for key in keys:
                yield f"{i}.{spec.kind}.{key}", layer.params[key]

    def trainable_items(self):
        for i, (spec, layer) in enumerate(zip(self.config.layers, self.layers)):
            for key in layer.trainable:
                yield f"{i}.{spec.kind}.{key}", layer, key

    def forward(self, x: np.ndarray, train: bool = False, keep: bool | None = None) -> np.ndarray:
        """Raw ``(batch,)`` outputs for ``(batch, C, T, F)`` input.

        ``train`` switches batch norm to batch statistics and enables dropout;
        ``keep`` (default: same as ``train``) stores activations for backward.
        """
        keep = train if keep is None else keep
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        if tuple(x.shape[1:]) != tuple(self.config.input_shape):
            raise ValueError(f"input shape {x.shape[1:]} does not match network "
                             f"input {tuple(self.config.input_shape)}")
        out = x.astype(self.dtype, copy=False)
        self.last_shapes = []
        for layer in self.layers:
            out = layer.forward(out, train, keep)
            self.last_shapes.append(tuple(out.shape[1:]))
        return out[:, 0]

    def backward(self, dout: np.ndarray) -> None:
        """Backpropagate ``d loss / d output`` (shape ``(batch,)``) through cached activations."""
        if any(layer.cache is None for layer in self.layers):
            raise RuntimeError("backward() needs a preceding forward pass")
        grad = np.asarray(dout, dtype=self.dtype)[:, None]
        for layer in reversed(self.layers):
            grad = layer.backward(grad)

    def activation_pattern(self) -> list[np.ndarray]:
        """ReLU on/off masks and max-pool winners from the last ``keep=True`` pass.

        Two passes with equal patterns lie on the same linear piece of the
        network, which is what a finite-difference check needs to know.
        """
        pattern = []
        for layer in self.layers:
            if layer.cache is None:
                continue
            if isinstance(layer, ConvLayer):
                pattern.append(layer.cache[1])
            elif isinstance(layer, MaxPoolLayer):
                pattern.append(layer.cache[0])
            elif isinstance(layer, DenseLayer):
                pattern.append(layer.cache[1])
        return pattern

    def l2_penalty(self) -> float:
        return sum(layer.l2_penalty() for layer in self.layers)

    def param_counts(self) -> list[dict]:
        return param_count(self)

    def zero_(self) -> "Network":
        """Zero every conv/dense weight and bias (output becomes exactly 0)."""
        for layer in self.layers:
            if isinstance(layer, (ConvLayer, DenseLayer)):
                for key in layer.trainable:
                    layer.params[key][...] = 0
        return self


def param_count(net: Network) -> list[dict]:
    """Per-layer parameter counts; batch norm is reported apart from the layer table."""
    rows = []
    for spec, layer in zip(net.config.layers, net.layers):
        row = {"layer": spec.kind, "params": 0, "bn_trainable": 0, "bn_running": 0}
        if isinstance(layer, BatchNormLayer):
            ch = layer.params["gamma"].size
            row["bn_trainable"], row["bn_running"] = 2 * ch, 2 * ch
        else:
            row["params"] = layer.param_count()
        rows.append(row)
    return rows
