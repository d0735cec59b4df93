"""Layers with explicit forward/backward passes (batch-first, float64)."""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import OddDimension, ShapeMismatch


def glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "layer"
    tag = 0

    def __init__(self, name):
        self.name = name
        self.frozen = False
        self.params = {}
        self.grads = {}
        self.m = {}
        self.v = {}
        self.step = 0

    @property
    def trainable(self):
        return bool(self.params) and not self.frozen

    def _init_moments(self):
        self.m = {k: np.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p) for k, p in self.params.items()}
        self.step = 0

    def n_params(self):
        return sum(p.size for p in self.params.values())

    def output_shape(self, shape):
        return shape

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError


class Conv3D(Layer):
    """Valid (unpadded) 3D cross-correlation with stride."""

    kind = "conv3d"
    tag = 1

    def __init__(self, name, in_channels, filters, kernel, stride=1, rng=None):
        super().__init__(name)
        self.in_channels, self.filters, self.kernel, self.stride = in_channels, filters, kernel, stride
        fan_in = in_channels * kernel**3
        fan_out = filters * kernel**3
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "W": glorot(rng, (filters, in_channels, kernel, kernel, kernel), fan_in, fan_out),
            "b": np.zeros(filters),
        }
        self._init_moments()

    def output_shape(self, shape):
        c, *spatial = shape
        if c != self.in_channels or any(s < self.kernel for s in spatial):
            raise ShapeMismatch(f"{self.name}: cannot convolve {shape}")
        return (self.filters, *[(s - self.kernel) // self.stride + 1 for s in spatial])

    def forward(self, x, train=False, rng=None):
        if x.ndim != 5 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"{self.name}: expected [B,{self.in_channels},D,H,W], got {x.shape}")
        k, s = self.kernel, self.stride
        if min(x.shape[2:]) < k:
            raise ShapeMismatch(f"{self.name}: spatial dims {x.shape[2:]} smaller than kernel {k}")
        win = sliding_window_view(x, (k, k, k), axis=(2, 3, 4))[:, :, ::s, ::s, ::s]
        B, c, D, H, W = win.shape[:5]
        cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(B * D * H * W, c * k**3)
        out = cols @ self.params["W"].reshape(self.filters, -1).T + self.params["b"]
        self._cache = (x.shape, cols, (B, D, H, W))
        return out.reshape(B, D, H, W, self.filters).transpose(0, 4, 1, 2, 3)

    def backward(self, g):
        x_shape, cols, (B, D, H, W) = self._cache
        k, s, f = self.kernel, self.stride, self.filters
        g2 = g.transpose(0, 2, 3, 4, 1).reshape(-1, f)
        self.grads = {
            "W": (g2.T @ cols).reshape(self.params["W"].shape),
            "b": g2.sum(axis=0),
        }
        dcols = (g2 @ self.params["W"].reshape(f, -1)).reshape(B, D, H, W, self.in_channels, k, k, k)
        dx = np.zeros(x_shape)
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    dx[:, :, a:a + s * (D - 1) + 1:s, b:b + s * (H - 1) + 1:s, c:c + s * (W - 1) + 1:s] += (
                        dcols[..., a, b, c].transpose(0, 4, 1, 2, 3))
        return dx


class MaxPool3D(Layer):
    """Non-overlapping 2x2x2 max pooling; gradient goes to the first argmax."""

    kind = "maxpool3d"
    tag = 4

    def __init__(self, name, size=2):
        super().__init__(name)
        self.size = size

    def output_shape(self, shape):
        c, *spatial = shape
        if any(d % self.size for d in spatial):
            raise OddDimension(f"{self.name}: spatial dims {spatial} not divisible by {self.size}")
        return (c, *[d // self.size for d in spatial])

    def forward(self, x, train=False, rng=None):
        p = self.size
        B, c, D, H, W = x.shape
        if D % p or H % p or W % p:
            raise OddDimension(f"{self.name}: spatial dims {(D, H, W)} not divisible by {p}")
        blocks = x.reshape(B, c, D // p, p, H // p, p, W // p, p).transpose(0, 1, 2, 4, 6, 3, 5, 7)
        blocks = blocks.reshape(B, c, D // p, H // p, W // p, p**3)
        arg = blocks.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, g):
        (B, c, D, H, W), arg = self._cache
        p = self.size
        gb = np.zeros((B, c, D // p, H // p, W // p, p**3))
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(B, c, D // p, H // p, W // p, p, p, p).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        return gb.reshape(B, c, D, H, W)


class ReLU(Layer):
    kind = "relu"
    tag = 3

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, g):
        return g * self._mask


class Dropout(Layer):
    """Inverted dropout; identity at inference.  ``fixed_mask`` pins the mask (tests)."""

    kind = "dropout"
    tag = 5

    def __init__(self, name, rate=0.5):
        super().__init__(name)
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.fixed_mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0:
            self._scale = None
            return x
        if self.fixed_mask is not None:
            keep = self.fixed_mask
        else:
            keep = rng.random(x.shape) >= self.rate
        self._scale = keep / (1.0 - self.rate)
        return x * self._scale

    def backward(self, g):
        return g if self._scale is None else g * self._scale


class Flatten(Layer):
    kind = "flatten"
    tag = 6

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Dense(Layer):
    """Affine map on ``concat(x, extra)``; ``extra_width`` > 0 adds a side input."""

    kind = "dense"
    tag = 2

    def __init__(self, name, in_width, out_width, extra_width=0, rng=None):
        super().__init__(name)
        self.in_width, self.out_width, self.extra_width = in_width, out_width, extra_width
        total = in_width + extra_width
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {"W": glorot(rng, (out_width, total), total, out_width), "b": np.zeros(out_width)}
        self._init_moments()

    def output_shape(self, shape):
        if shape != (self.in_width,):
            raise ShapeMismatch(f"{self.name}: expected width {self.in_width}, got {shape}")
        return (self.out_width,)

    def forward(self, x, train=False, rng=None, extra=None):
        if self.extra_width:
            if extra is None or extra.shape[-1] != self.extra_width:
                raise ShapeMismatch(f"{self.name}: needs extra input of width {self.extra_width}")
            x = np.concatenate([x, extra], axis=1)
        elif extra is not None:
            raise ShapeMismatch(f"{self.name}: takes no extra input")
        if x.shape[1] != self.in_width + self.extra_width:
            raise ShapeMismatch(f"{self.name}: input width {x.shape[1]} != {self.in_width + self.extra_width}")
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, g):
        self.grads = {"W": g.T @ self._x, "b": g.sum(axis=0)}
        dx = g @ self.params["W"]
        self.extra_grad = dx[:, self.in_width:]
        return dx[:, : self.in_width]


def mse_loss(pred, target):
    """Mean over the batch of the per-sample mean squared error."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: {pred.shape} vs {target.shape}")
    pred2 = np.atleast_2d(pred)
    diff = pred2 - np.atleast_2d(target)
    B, n = diff.shape
    loss = float(np.mean(diff**2))
    return loss, (2.0 * diff / (n * B)).reshape(pred.shape)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits, labels):
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if len(labels) != len(logits):
        raise ShapeMismatch("cross entropy: batch size mismatch")
    p = softmax(logits)
    B = len(labels)
    loss = float(-np.mean(np.log(p[np.arange(B), labels] + 1e-300)))
    grad = p.copy()
    grad[np.arange(B), labels] -= 1.0
    return loss, grad / B


def loss(pred, target, kind="mse"):
    if kind == "mse":
        return mse_loss(pred, target)
    if kind == "softmax_cross_entropy":
        return cross_entropy_loss(pred, target)
    raise ValueError(f"unknown loss {kind!r}")
