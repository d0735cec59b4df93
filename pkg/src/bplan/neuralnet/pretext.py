"""Synthetic shape classification used to pretrain the conv stack."""
from __future__ import annotations

import math

import numpy as np

from ..occupancy import L_MAX, L_MIN, sigmoid
from ..rng import make_rng
from .network import ArchConfig, build_pretext_network
from .train import TrainConfig, evaluate, train

CLASSES = ("box", "sphere", "cylinder", "wall_with_gap", "empty")
OCCUPIED = float(2 * sigmoid(L_MAX) - 1)
FREE = float(2 * sigmoid(L_MIN) - 1)


def shape_grid(label, grid, rng, unknown_fraction=0.1):
    """Voxelize one random primitive of class ``label`` into a descriptor-like grid."""
    c = (np.arange(grid) + 0.5) / grid
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    name = CLASSES[label]
    if name == "box":
        cx, cy, cz = rng.uniform(0.35, 0.65, 3)
        hx, hy, hz = rng.uniform(0.12, 0.28, 3)
        yaw = rng.uniform(0, math.pi / 2)
        u = math.cos(yaw) * (x - cx) + math.sin(yaw) * (y - cy)
        v = -math.sin(yaw) * (x - cx) + math.cos(yaw) * (y - cy)
        inside = (np.abs(u) <= hx) & (np.abs(v) <= hy) & (np.abs(z - cz) <= hz)
    elif name == "sphere":
        cx, cy, cz = rng.uniform(0.35, 0.65, 3)
        r = rng.uniform(0.15, 0.3)
        inside = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= r * r
    elif name == "cylinder":
        cx, cy = rng.uniform(0.35, 0.65, 2)
        r = rng.uniform(0.1, 0.22)
        z0 = rng.uniform(0.0, 0.3)
        h = rng.uniform(0.45, 0.7)
        inside = ((x - cx) ** 2 + (y - cy) ** 2 <= r * r) & (z >= z0) & (z <= z0 + h)
    elif name == "wall_with_gap":
        axis = int(rng.integers(2))
        coord = (x, y)[axis]
        other = (y, x)[axis]
        pos = rng.uniform(0.3, 0.7)
        thick = rng.uniform(0.08, 0.16)
        g0 = rng.uniform(0.15, 0.6)
        gw = rng.uniform(0.15, 0.3)
        z0 = rng.uniform(0.1, 0.5)
        zh = rng.uniform(0.2, 0.4)
        hole = (other >= g0) & (other <= g0 + gw) & (z >= z0) & (z <= z0 + zh)
        inside = (np.abs(coord - pos) <= thick / 2) & ~hole
    else:
        inside = np.zeros_like(x, dtype=bool)
    vals = np.where(inside, OCCUPIED, FREE)
    vals[rng.random(vals.shape) < unknown_fraction] = 0.0
    return vals


def shape_dataset(n, grid, seed):
    rng = make_rng(seed, 0x5A)
    labels = np.arange(n) % len(CLASSES)
    rng.shuffle(labels)
    X = np.stack([shape_grid(int(l), grid, rng) for l in labels])[:, None]
    return X, labels


def pretrain_pretext(arch=ArchConfig(), seed=0, n_train=640, n_test=200, epochs=20, batch_size=32):
    """Train conv stack + temporary classification head; returns ``(net, held-out accuracy, history)``."""
    net = build_pretext_network(arch, len(CLASSES), seed)
    Xtr, ytr = shape_dataset(n_train, arch.grid, seed)
    Xte, yte = shape_dataset(n_test, arch.grid, seed + 1_000_003)
    cfg = TrainConfig(batch_size=batch_size, epochs=epochs, loss="softmax_cross_entropy", seed=seed)
    history = train(net, (Xtr, None, ytr), (Xte, None, yte), cfg)
    _, acc = evaluate(net, Xte, None, yte, "softmax_cross_entropy")
    return net, acc, history
