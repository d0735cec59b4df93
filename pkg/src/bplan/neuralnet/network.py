"""Multi-input 3D CNN: voxel grid through the conv stack, endpoints into the last dense layer."""
from __future__ import annotations

import copy
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import CorruptFile, ShapeMismatch
from ..rng import make_rng
from .layers import Conv3D, Dense, Dropout, Flatten, Layer, MaxPool3D, ReLU

N_OUTPUTS = 9
N_ENDPOINTS = 6
PUBLISHED_PARAMETER_COUNT = 921_736


@dataclass(frozen=True)
class ArchConfig:
    grid: int = 32
    conv1_filters: int = 32
    conv1_kernel: int = 5
    conv1_stride: int = 2
    conv2_filters: int = 32
    conv2_kernel: int = 3
    conv2_stride: int = 1
    hidden: int = 128
    dropout: float = 0.5

    @classmethod
    def desk(cls):
        return cls(grid=16)


class Network:
    def __init__(self, layers, input_shape):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.shapes = self._check_shapes()

    def _check_shapes(self):
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        return shapes

    @property
    def conv_layers(self):
        return [l for l in self.layers if isinstance(l, Conv3D)]

    def forward(self, grids, endpoints=None, train=False, rng=None, start=0, stop=None):
        """Run layers ``start:stop``; ``grids`` is ``[B, 1, D, H, W]`` (or [D,H,W] for one sample)."""
        x = np.asarray(grids, dtype=float)
        if start == 0:
            if x.ndim == 3:
                x = x[None, None]
            elif x.ndim == 4:
                x = x[:, None]
            if x.shape[1:] != self.input_shape:
                raise ShapeMismatch(f"input {x.shape[1:]} does not match network {self.input_shape}")
        if endpoints is not None:
            endpoints = np.atleast_2d(np.asarray(endpoints, dtype=float))
        for layer in self.layers[start:stop]:
            if isinstance(layer, Dense) and layer.extra_width:
                x = layer.forward(x, train, rng, extra=endpoints)
            else:
                x = layer.forward(x, train, rng)
        return x

    def backward(self, g, start=0):
        """Backpropagate, stopping once no trainable layer remains upstream."""
        first = next((i for i, l in enumerate(self.layers) if l.trainable), len(self.layers))
        first = max(first, start)
        for layer in reversed(self.layers[first:]):
            g = layer.backward(g)
        return g

    def frozen_prefix(self):
        """Number of leading layers that are frozen or parameter-free and deterministic."""
        n = 0
        for layer in self.layers:
            if layer.trainable or isinstance(layer, Dropout):
                break
            n += 1
        return n

    def copy(self):
        return copy.deepcopy(self)


def _conv_stack(arch, rng):
    return [
        Conv3D("conv1", 1, arch.conv1_filters, arch.conv1_kernel, arch.conv1_stride, rng),
        ReLU("relu1"),
        Conv3D("conv2", arch.conv1_filters, arch.conv2_filters, arch.conv2_kernel, arch.conv2_stride, rng),
        ReLU("relu2"),
        MaxPool3D("pool", 2),
        Flatten("flatten"),
    ]


def _flat_width(arch):
    shape = (1, arch.grid, arch.grid, arch.grid)
    probe = Network(_conv_stack(arch, np.random.default_rng(0)), shape)
    return probe.shapes[-1][0]


def _head(arch, width, n_out, extra, rng):
    return [
        Dense("dense1", width, arch.hidden, 0, rng),
        ReLU("relu3"),
        Dropout("dropout", arch.dropout),
        Dense("dense2", arch.hidden, n_out, extra, rng),
    ]


def build_network(arch=ArchConfig(), seed=0):
    """Bottleneck regressor: conv-relu-conv-relu-pool-flatten-dense-relu-dropout-dense(+endpoints)."""
    rng = make_rng(seed, 0xC1)
    conv = _conv_stack(arch, rng)
    width = _flat_width(arch)
    layers = conv + _head(arch, width, N_OUTPUTS, N_ENDPOINTS, rng)
    return Network(layers, (1, arch.grid, arch.grid, arch.grid))


def build_pretext_network(arch=ArchConfig(), n_classes=5, seed=0):
    rng = make_rng(seed, 0xC2)
    conv = _conv_stack(arch, rng)
    layers = conv + _head(arch, _flat_width(arch), n_classes, 0, rng)
    return Network(layers, (1, arch.grid, arch.grid, arch.grid))


def transfer(pretrained, seed=0, n_out=N_OUTPUTS, extra=N_ENDPOINTS):
    """Keep (and freeze) the conv stack; replace the dense layers with fresh ones."""
    conv = []
    for layer in pretrained.layers:
        if isinstance(layer, Dense):
            break
        conv.append(copy.deepcopy(layer))
    for layer in conv:
        if layer.params:
            layer.frozen = True
    probe = Network(conv, pretrained.input_shape)
    width = probe.shapes[-1][0]
    old_dense = [l for l in pretrained.layers if isinstance(l, Dense)]
    drop = next((l.rate for l in pretrained.layers if isinstance(l, Dropout)), 0.5)
    hidden = old_dense[0].out_width if old_dense else 128
    rng = make_rng(seed, 0xC3)
    head = [
        Dense("dense1", width, hidden, 0, rng),
        ReLU("relu3"),
        Dropout("dropout", drop),
        Dense("dense2", hidden, n_out, extra, rng),
    ]
    return Network(conv + head, pretrained.input_shape)


def count_parameters(net, trainable_only=False):
    return sum(l.n_params() for l in net.layers if l.params and (l.trainable or not trainable_only))


# -- optimisation --------------------------------------------------------

@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(net, config=AdamConfig()):
    """One bias-corrected Adam update of every trainable layer; frozen layers are skipped."""
    lr, b1, b2, eps = config.learning_rate, config.beta1, config.beta2, config.eps
    for layer in net.layers:
        if not layer.trainable:
            continue
        layer.step += 1
        t = layer.step
        for k, p in layer.params.items():
            g = layer.grads[k]
            m = layer.m[k] = b1 * layer.m[k] + (1 - b1) * g
            v = layer.v[k] = b2 * layer.v[k] + (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)


# -- weights file --------------------------------------------------------
#
# magic BWT1, u32 layer count; per layer: u8 kind tag, u8 frozen, u32 name
# length + name, u32 rank + u64 dims, f64 data, f64 m, f64 v, u64 step.
# dims carry the layer hyper-parameters:
#   conv3d  (filters, in_channels, kernel, stride)  data = W then b
#   dense   (out, in, extra)                         data = W then b
#   maxpool (size,)   dropout: rank 0, data = [rate] and no moments
#   relu / flatten: rank 0, no data

_TAGS = {1: "conv3d", 2: "dense", 3: "relu", 4: "maxpool3d", 5: "dropout", 6: "flatten"}


def _layer_dims(layer):
    if isinstance(layer, Conv3D):
        return (layer.filters, layer.in_channels, layer.kernel, layer.stride)
    if isinstance(layer, Dense):
        return (layer.out_width, layer.in_width, layer.extra_width)
    if isinstance(layer, MaxPool3D):
        return (layer.size,)
    return ()


def _flat(d):
    return np.concatenate([d["W"].ravel(), d["b"].ravel()]) if d else np.zeros(0)


def save_weights(net, path):
    out = [b"BWT1", struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        name = layer.name.encode("utf-8")
        dims = _layer_dims(layer)
        out.append(struct.pack("<BBI", layer.tag, int(layer.frozen), len(name)) + name)
        out.append(struct.pack(f"<I{len(dims)}Q", len(dims), *dims))
        if isinstance(layer, Dropout):
            data, m, v = np.array([layer.rate]), np.zeros(0), np.zeros(0)
        else:
            data, m, v = _flat(layer.params), _flat(layer.m), _flat(layer.v)
        for arr in (data, m, v):
            out.append(np.asarray(arr, dtype="<f8").tobytes())
        out.append(struct.pack("<Q", layer.step))
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise CorruptFile("truncated weights file")
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals

    def floats(self, n):
        if self.pos + 8 * n > len(self.raw):
            raise CorruptFile("truncated weights file")
        arr = np.frombuffer(self.raw, dtype="<f8", count=n, offset=self.pos).astype(float)
        self.pos += 8 * n
        return arr


def _unflat(flat, w_shape):
    nw = int(np.prod(w_shape))
    return {"W": flat[:nw].reshape(w_shape).copy(), "b": flat[nw:].copy()}


def load_weights(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != b"BWT1":
        raise CorruptFile("bad weights magic")
    r = _Reader(raw)
    r.pos = 4
    (n_layers,) = r.take("<I")
    layers = []
    for _ in range(n_layers):
        tag, frozen, name_len = r.take("<BBI")
        name = bytes(r.take(f"<{name_len}s")[0]).decode("utf-8")
        (rank,) = r.take("<I")
        dims = r.take(f"<{rank}Q") if rank else ()
        kind = _TAGS.get(tag)
        if kind is None:
            raise CorruptFile(f"unknown layer tag {tag}")
        if kind == "conv3d":
            f, c, k, s = dims
            layer = Conv3D(name, c, f, k, s)
            w_shape = (f, c, k, k, k)
        elif kind == "dense":
            o, i, e = dims
            layer = Dense(name, i, o, e)
            w_shape = (o, i + e)
        elif kind == "maxpool3d":
            layer = MaxPool3D(name, dims[0])
        elif kind == "dropout":
            rate = r.floats(1)[0]
            layer = Dropout(name, rate)
        elif kind == "relu":
            layer = ReLU(name)
        else:
            layer = Flatten(name)
        if kind in ("conv3d", "dense"):
            n = int(np.prod(w_shape)) + w_shape[0]
            layer.params = _unflat(r.floats(n), w_shape)
            layer.m = _unflat(r.floats(n), w_shape)
            layer.v = _unflat(r.floats(n), w_shape)
        (layer.step,) = r.take("<Q")
        layer.frozen = bool(frozen)
        layers.append(layer)
    if r.pos != len(raw):
        raise CorruptFile("trailing bytes in weights file")
    return Network(layers, (1, *[_infer_grid(layers)] * 3))


def _infer_grid(layers):
    """Largest cubic input side consistent with the first dense layer's width.

    Strided valid convolutions drop trailing voxels, so several sides can map
    to the same width; the largest one is the side the stack was built for
    whenever that side is a power of two.
    """
    dense = next((l for l in layers if isinstance(l, Dense)), None)
    best = None
    for g in range(1, 513):
        try:
            shape = (1, g, g, g)
            for layer in layers:
                if layer is dense:
                    break
                shape = layer.output_shape(shape)
        except Exception:
            continue
        if dense is None or shape == (dense.in_width,):
            best = g
        elif best is not None:
            break
    if best is None:
        raise CorruptFile("cannot infer input grid size from layer shapes")
    return best


def layer_summary(net):
    rows = []
    for layer, shape in zip(net.layers, net.shapes[1:]):
        rows.append((layer.name, layer.kind, shape, layer.n_params(), layer.frozen))
    return rows


__all__ = [
    "ArchConfig", "Network", "build_network", "build_pretext_network", "transfer",
    "count_parameters", "AdamConfig", "adam_step", "save_weights", "load_weights",
    "layer_summary", "Layer",
]
