"""Inference: map + query to three bottleneck points in world coordinates."""
from __future__ import annotations

import numpy as np

from ..labeling import denormalize, normalize
from ..occupancy import to_voxel_descriptor


def descriptor_side(net, bounds):
    """Voxel side that makes the network's input grid span the whole workspace."""
    return float(np.max(bounds.size) / net.input_shape[1])


def predict_bottlenecks(net, omap, query, bounds, voxel_side=None):
    """Run the regressor in inference mode; returns a ``(3, 3)`` array clamped to ``bounds``."""
    dims = net.input_shape[1:]
    side = descriptor_side(net, bounds) if voxel_side is None else voxel_side
    grid = to_voxel_descriptor(omap, bounds.lo_arr, dims, side).values.astype(np.float32)
    endpoints = np.concatenate([normalize(query.start, bounds), normalize(query.goal, bounds)])
    out = net.forward(grid.astype(float)[None, None], endpoints[None])[0]
    pts = denormalize(out.reshape(3, 3), bounds)
    return np.clip(pts, bounds.lo_arr, bounds.hi_arr)
