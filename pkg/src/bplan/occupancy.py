"""Probabilistic octree occupancy map and the dense voxel descriptor.

Leaves live in a dict keyed by their linear index at the deepest level; the
inner nodes that exist (ancestors of every updated leaf) are tracked per
level.  Geometric queries treat each occupied leaf as an axis-aligned cube
and are exact (point-to-box distance), accelerated by a k-d tree over
occupied leaf centers.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import CorruptFile, OutOfBounds, ResolutionTooFine
from .scene import GRID_DIM, VOXEL_SIDE, Bounds

L_HIT = 0.85
L_MISS = -0.4
L_MIN = -2.0
L_MAX = 2.8
LEAF_RESOLUTION = 0.05
MAX_DEPTH = 16
_SQRT3 = math.sqrt(3.0)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def box_distance(points, centers, half):
    """Euclidean distance from each point to each axis-aligned cube (0 inside)."""
    q = np.abs(points[:, None, :] - centers[None, :, :]) - half
    return np.linalg.norm(np.maximum(q, 0.0), axis=-1)


class OccupancyOctree:
    def __init__(self, bounds, leaf_resolution=LEAF_RESOLUTION):
        if leaf_resolution <= 0:
            raise ValueError("leaf resolution must be positive")
        self.bounds = bounds
        self.origin = bounds.lo_arr
        self.side = float(bounds.size.max())
        ratio = self.side / leaf_resolution
        self.depth = max(0, int(math.ceil(math.log2(ratio) - 1e-9)))
        if self.depth > MAX_DEPTH:
            raise ResolutionTooFine(f"depth {self.depth} exceeds {MAX_DEPTH}")
        self.n = 1 << self.depth
        self.leaf = self.side / self.n
        self.leaves = {}
        # inner[l] holds linear keys of existing nodes at level l (0 = root)
        self.inner = [set() for _ in range(self.depth)]
        self._cache = None

    # -- indexing -------------------------------------------------------
    def _check(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if not np.all(self.bounds.contains(pts, tol=1e-9)):
            raise OutOfBounds("point outside map bounds")
        return pts

    def leaf_index(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = np.floor((pts - self.origin) / self.leaf).astype(np.int64)
        return np.clip(idx, 0, self.n - 1)

    def key(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return idx[..., 0] + self.n * (idx[..., 1] + self.n * idx[..., 2])

    def unkey(self, keys):
        keys = np.asarray(keys, dtype=np.int64)
        return np.stack([keys % self.n, (keys // self.n) % self.n, keys // (self.n * self.n)], axis=-1)

    def leaf_center(self, idx):
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.leaf

    # -- updates --------------------------------------------------------
    def _update(self, keys, delta):
        leaves = self.leaves
        new = []
        for k in keys.tolist():
            v = leaves.get(k)
            if v is None:
                new.append(k)
                v = 0.0
            leaves[k] = min(L_MAX, max(L_MIN, v + delta))
        if new and self.depth:
            idx = self.unkey(np.array(new, dtype=np.int64))
            for level in range(self.depth):
                shift = self.depth - level
                sub = idx >> shift
                m = 1 << level
                self.inner[level].update((sub[:, 0] + m * (sub[:, 1] + m * sub[:, 2])).tolist())
        self._cache = None

    def traverse(self, origins, ends):
        """Leaves crossed by each segment (3D DDA).

        Returns ``(ray_ids, miss_idx, end_idx)``: every traversed leaf except
        the end leaf, tagged by ray, plus the end leaf of each ray.
        """
        o = (np.atleast_2d(origins) - self.origin) / self.leaf
        e = (np.atleast_2d(ends) - self.origin) / self.leaf
        o, e = np.broadcast_arrays(o, e)
        cur = np.clip(np.floor(o).astype(np.int64), 0, self.n - 1)
        end = np.clip(np.floor(e).astype(np.int64), 0, self.n - 1)
        d = e - o
        step = np.sign(end - cur)
        remaining = np.abs(end - cur)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_delta = np.where(d != 0, 1.0 / np.abs(d), np.inf)
            boundary = np.where(step > 0, cur + 1, cur).astype(float)
            t_max = np.where(d != 0, (boundary - o) / d, np.inf)
        t_max = np.where(remaining > 0, t_max, np.inf)
        ray_ids, misses = [], []
        active = np.flatnonzero(remaining.sum(axis=1) > 0)
        while len(active):
            ray_ids.append(active)
            misses.append(cur[active].copy())
            tm = t_max[active]
            axis = np.argmin(tm, axis=1)
            rows = active
            cur[rows, axis] += step[rows, axis]
            t_max[rows, axis] += t_delta[rows, axis]
            remaining[rows, axis] -= 1
            done_axis = remaining[rows, axis] == 0
            t_max[rows[done_axis], axis[done_axis]] = np.inf
            active = active[remaining[active].sum(axis=1) > 0]
        if misses:
            return np.concatenate(ray_ids), np.concatenate(misses), end
        return np.zeros(0, dtype=np.int64), np.zeros((0, 3), dtype=np.int64), end

    def insert_ray(self, origin, hit):
        """Miss-update every leaf on the segment before ``hit``; hit-update its leaf."""
        self._check([origin, hit])
        _, miss, end = self.traverse(np.asarray(origin, float)[None], np.asarray(hit, float)[None])
        end_key = self.key(end)
        miss_keys = np.unique(self.key(miss))
        miss_keys = miss_keys[miss_keys != end_key[0]]
        self._update(miss_keys, L_MISS)
        self._update(end_key, L_HIT)

    def insert_scan(self, origin, hits):
        """Integrate one scan; each leaf is updated at most once, hits win over misses."""
        hits = np.atleast_2d(np.asarray(hits, dtype=float))
        if len(hits) == 0:
            return
        self._check(np.vstack([np.asarray(origin, float)[None], hits]))
        _, miss, end = self.traverse(np.asarray(origin, float)[None], hits)
        hit_keys = np.unique(self.key(end))
        miss_keys = np.setdiff1d(np.unique(self.key(miss)), hit_keys)
        self._update(miss_keys, L_MISS)
        self._update(hit_keys, L_HIT)

    # -- state ----------------------------------------------------------
    def logodds(self, pts):
        """Log-odds at each point (NaN where unknown)."""
        keys = self.key(self.leaf_index(self._check(pts)))
        return np.array([self.leaves.get(k, np.nan) for k in keys.tolist()])

    def state(self, pt):
        v = self.logodds(pt)[0]
        if np.isnan(v):
            return "unknown"
        return "occupied" if v > 0 else "free"

    def node_count(self):
        return len(self.leaves) + sum(len(s) for s in self.inner)

    def _occupied(self):
        if self._cache is None:
            keys = np.array(sorted(k for k, v in self.leaves.items() if v > 0), dtype=np.int64)
            centers = self.leaf_center(self.unkey(keys)) if len(keys) else np.zeros((0, 3))
            tree = cKDTree(centers) if len(keys) else None
            self._cache = (keys, centers, tree)
        return self._cache

    def occupied_leaves(self):
        keys, centers, _ = self._occupied()
        return centers, np.array([self.leaves[k] for k in keys.tolist()])

    def occupied_keys(self):
        return self._occupied()[0]


def new_octree(bounds, leaf_resolution=LEAF_RESOLUTION):
    return OccupancyOctree(bounds, leaf_resolution)


def insert_ray(omap, origin, hit):
    omap.insert_ray(origin, hit)


def build_map(scene, sensor_poses=None, angular_resolution=0.01, leaf_resolution=LEAF_RESOLUTION):
    """Render each sensor view and integrate it as one scan (robot body excluded)."""
    from .perception import default_sensor_poses, render_point_cloud, transform_cloud

    if sensor_poses is None:
        sensor_poses = default_sensor_poses(scene.bounds)
    if not sensor_poses:
        raise ValueError("build_map needs at least one sensor pose")
    omap = OccupancyOctree(scene.bounds, leaf_resolution)
    for pose in sensor_poses:
        cloud = render_point_cloud(scene, pose, angular_resolution, include_robot=False)
        if len(cloud) == 0:
            continue
        world = transform_cloud(cloud, pose.rotation, pose.position)
        inside = scene.bounds.contains(world.xyz, tol=1e-9)
        omap.insert_scan(pose.position, world.xyz[inside])
    return omap


# -- geometric queries ---------------------------------------------------

def collides_spheres(omap, centers, radius):
    """Vectorized :func:`collides_sphere` over an ``(N, 3)`` array."""
    pts = omap._check(centers)
    _, occ, tree = omap._occupied()
    out = np.zeros(len(pts), dtype=bool)
    if tree is None:
        return out
    half = omap.leaf / 2
    dc, _ = tree.query(pts)
    out[dc <= radius + half] = True  # the cube contains the ball of radius half
    unsure = np.flatnonzero((dc > radius + half) & (dc <= radius + half * _SQRT3))
    for i in unsure:
        cand = tree.query_ball_point(pts[i], radius + half * _SQRT3 + 1e-12)
        if cand and box_distance(pts[i:i + 1], occ[cand], half).min() <= radius:
            out[i] = True
    return out


def collides_sphere(omap, center, radius):
    return bool(collides_spheres(omap, np.asarray(center, dtype=float)[None], radius)[0])


def clearances(omap, points):
    pts = omap._check(points)
    _, occ, tree = omap._occupied()
    if tree is None:
        return np.full(len(pts), omap.bounds.diagonal)
    half = omap.leaf / 2
    dc, _ = tree.query(pts)
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        cand = tree.query_ball_point(p, dc[i] + half * _SQRT3 + 1e-12)
        out[i] = box_distance(p[None], occ[cand], half).min()
    return out


def clearance(omap, point):
    return float(clearances(omap, np.asarray(point, dtype=float)[None])[0])


# -- voxel descriptor ----------------------------------------------------

@dataclass
class VoxelGrid:
    dims: tuple
    origin: np.ndarray
    voxel_side: float
    values: np.ndarray  # shape dims, indexed [i, j, k]

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.origin = np.asarray(self.origin, dtype=float)
        self.values = np.asarray(self.values).reshape(self.dims)


def to_voxel_descriptor(omap, grid_origin=None, dims=(GRID_DIM,) * 3, voxel_side=VOXEL_SIDE):
    """Dense grid of ``2p - 1`` (max over covered leaves); unknown cells are 0."""
    dims = tuple(int(d) for d in np.broadcast_to(dims, 3))
    go = omap.bounds.lo_arr if grid_origin is None else np.asarray(grid_origin, dtype=float)
    far = go + np.array(dims) * voxel_side
    if not (omap.bounds.contains(go, tol=1e-9)[0] and omap.bounds.contains(far, tol=1e-9)[0]):
        raise OutOfBounds("descriptor volume exceeds map bounds")
    vals = np.full(dims, -np.inf)
    if omap.leaves:
        keys = np.fromiter(omap.leaves.keys(), dtype=np.int64, count=len(omap.leaves))
        lo_odds = np.fromiter(omap.leaves.values(), dtype=float, count=len(omap.leaves))
        leaf_lo = omap.origin + omap.unkey(keys) * omap.leaf
        eps = 1e-9
        first = np.floor((leaf_lo - go) / voxel_side + eps).astype(np.int64)
        last = np.ceil((leaf_lo + omap.leaf - go) / voxel_side - eps).astype(np.int64) - 1
        value = 2.0 * sigmoid(lo_odds) - 1.0
        span = int((last - first).max()) + 1
        for di in range(span):
            for dj in range(span):
                for dk in range(span):
                    idx = first + (di, dj, dk)
                    ok = np.all((idx <= last) & (idx >= 0) & (idx < dims), axis=1)
                    if ok.any():
                        np.maximum.at(vals, tuple(idx[ok].T), value[ok])
    vals[np.isneginf(vals)] = 0.0
    return VoxelGrid(dims, go, voxel_side, vals)


# -- file formats --------------------------------------------------------

def dump_map(omap, path):
    centers, odds = omap.occupied_leaves()
    with open(path, "w", encoding="utf-8") as fh:
        for c, v in zip(centers, odds):
            fh.write(f"{c[0]:.9g} {c[1]:.9g} {c[2]:.9g} {omap.leaf:.9g} {v:.9g}\n")


def load_map_dump(path, bounds=None):
    """Rebuild a map holding only the occupied leaves of a dump."""
    rows = np.loadtxt(path, ndmin=2)
    bounds = bounds or Bounds.default()
    leaf = float(rows[0, 3]) if len(rows) else LEAF_RESOLUTION
    omap = OccupancyOctree(bounds, leaf)
    if len(rows):
        keys = omap.key(omap.leaf_index(rows[:, :3]))
        for k, v in zip(keys.tolist(), rows[:, 4]):
            omap._update(np.array([k]), float(v))
    return omap


_BVG_HEAD = struct.Struct("<4s3I4d")


def save_voxel_grid(grid, path):
    with open(path, "wb") as fh:
        fh.write(_BVG_HEAD.pack(b"BVG1", *grid.dims, *grid.origin, grid.voxel_side))
        # x-fastest order == Fortran order of the [i, j, k] array
        fh.write(np.asarray(grid.values, dtype="<f4").ravel(order="F").tobytes())


def load_voxel_grid(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _BVG_HEAD.size or raw[:4] != b"BVG1":
        raise CorruptFile("bad voxel grid magic")
    _, dx, dy, dz, ox, oy, oz, side = _BVG_HEAD.unpack_from(raw)
    n = dx * dy * dz
    body = raw[_BVG_HEAD.size:]
    if len(body) != 4 * n:
        raise CorruptFile("truncated voxel grid")
    vals = np.frombuffer(body, dtype="<f4").reshape((dx, dy, dz), order="F").astype(float)
    return VoxelGrid((dx, dy, dz), (ox, oy, oz), side, vals)
