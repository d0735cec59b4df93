"""Simulated RGB-D sensing and the colour-based self-identification pipeline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateNeighborhood
from .scene import ROBOT_ORANGE

THRESHOLD_1 = 30.0
THRESHOLD_2 = 20.0
ORANGE_TOLERANCE = 40.0
K_NEIGHBORS = 10


@dataclass
class PointCloud:
    xyz: np.ndarray
    rgb: np.ndarray
    frame: str = "sensor"
    # index of the generating obstacle; robot parts are -(k + 1); None if unknown
    source: np.ndarray | None = None

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        self.rgb = np.asarray(self.rgb, dtype=float).reshape(-1, 3)
        if len(self.xyz) != len(self.rgb):
            raise ValueError("xyz/rgb length mismatch")
        if self.frame not in ("sensor", "world"):
            raise ValueError(f"bad frame {self.frame!r}")
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("non-finite point position")

    def __len__(self):
        return len(self.xyz)

    def subset(self, mask_or_idx):
        src = None if self.source is None else self.source[mask_or_idx]
        return PointCloud(self.xyz[mask_or_idx], self.rgb[mask_or_idx], self.frame, src)


@dataclass(frozen=True)
class SensorPose:
    """Rigid sensor-to-world transform; the optical axis is sensor +z."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)):
        eye = np.asarray(eye, dtype=float)
        z = np.asarray(target, dtype=float) - eye
        z /= np.linalg.norm(z)
        up = np.asarray(up, dtype=float)
        if abs(np.dot(up, z)) > 0.99:
            up = np.array([0.0, 1.0, 0.0])
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.stack([x, y, z], axis=1), eye)


def tilt_rotation(angle, axis="x"):
    c, s = math.cos(angle), math.sin(angle)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def default_sensor_poses(bounds, margin=0.05):
    """Eye-to-hand views: four side cameras, four high corners and one top-down."""
    lo, hi = bounds.lo_arr + margin, bounds.hi_arr - margin
    c = bounds.center
    mid_z = c[2]
    poses = []
    for x, y in ((lo[0], c[1]), (hi[0], c[1]), (c[0], lo[1]), (c[0], hi[1])):
        poses.append(SensorPose.look_at((x, y, mid_z), (c[0], c[1], mid_z)))
    for x, y in ((lo[0], lo[1]), (hi[0], lo[1]), (lo[0], hi[1]), (hi[0], hi[1])):
        poses.append(SensorPose.look_at((x, y, hi[2]), (c[0], c[1], bounds.lo[2] + 0.5)))
    poses.append(SensorPose.look_at((c[0], c[1], hi[2]), (c[0], c[1], bounds.lo[2])))
    return poses


def ray_directions(angular_resolution, fov=math.radians(100)):
    """Unit ray directions (sensor frame) on an angular grid about +z."""
    n = int(math.floor(fov / angular_resolution / 2))
    ang = np.arange(-n, n + 1) * angular_resolution
    a, b = np.meshgrid(ang, ang, indexing="ij")
    d = np.stack([np.tan(a).ravel(), np.tan(b).ravel(), np.ones(a.size)], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def render_point_cloud(scene, pose, angular_resolution=0.01, include_robot=True, fov=math.radians(100)):
    """Cast a grid of rays and keep the first analytic hit per ray (sensor frame)."""
    dirs_s = ray_directions(angular_resolution, fov)
    dirs_w = dirs_s @ pose.rotation.T
    obstacles = list(scene.obstacles)
    sources = list(range(len(obstacles)))
    if include_robot:
        obstacles += scene.robot_body
        sources += [-(k + 1) for k in range(len(scene.robot_body))]
    if not obstacles:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), "sensor", np.zeros(0, dtype=int))
    origin = np.broadcast_to(pose.position, dirs_w.shape)
    ts = np.stack([o.intersect_rays(origin, dirs_w) for o in obstacles])
    best = np.argmin(ts, axis=0)
    t = ts[best, np.arange(len(best))]
    hit = np.isfinite(t)
    colors = np.array([o.color for o in obstacles], dtype=float)
    xyz = dirs_s[hit] * t[hit, None]
    return PointCloud(xyz, colors[best[hit]], "sensor", np.asarray(sources)[best[hit]])


def transform_cloud(cloud, rotation, translation):
    """Rigidly map a sensor-frame cloud into the world frame."""
    if cloud.frame != "sensor":
        raise ValueError("transform_cloud expects a sensor-frame cloud")
    R = np.asarray(rotation, dtype=float)
    xyz = cloud.xyz @ R.T + np.asarray(translation, dtype=float)
    return PointCloud(xyz, cloud.rgb.copy(), "world", None if cloud.source is None else cloud.source.copy())


def passthrough_filter(cloud, axis, lo, hi):
    if lo > hi:
        raise ValueError("passthrough_filter needs lo <= hi")
    col = cloud.xyz[:, "xyz".index(axis)]
    return cloud.subset(np.flatnonzero((col >= lo) & (col <= hi)))


def voxel_downsample(cloud, leaf):
    """Replace every occupied ``leaf``-sized bin by the centroid of its points."""
    if leaf <= 0:
        raise ValueError("leaf must be positive")
    if len(cloud) == 0:
        return cloud.subset(slice(0, 0))
    keys = np.floor(cloud.xyz / leaf).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    xyz = np.zeros((len(counts), 3))
    rgb = np.zeros((len(counts), 3))
    np.add.at(xyz, inverse, cloud.xyz)
    np.add.at(rgb, inverse, cloud.rgb)
    source = None
    if cloud.source is not None:
        # provenance of a bin = source of its lowest-index member
        _, first = np.unique(inverse, return_index=True)
        source = cloud.source[first]
    return PointCloud(xyz / counts[:, None], rgb / counts[:, None], cloud.frame, source)


def color_distance(a, b):
    return np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), axis=-1)


@dataclass
class Region:
    indices: np.ndarray
    mean_color: np.ndarray


def surface_curvature(xyz, neighbors):
    """PCA surface variation lambda0 / (lambda0 + lambda1 + lambda2) per point."""
    pts = xyz[neighbors]
    centered = pts - pts.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / neighbors.shape[1]
    eig = np.linalg.eigvalsh(cov)
    total = eig.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        curv = np.where(total > 0, eig[:, 0] / total, 0.0)
    return curv


def region_grow_segment(cloud, k_neighbors=K_NEIGHBORS, threshold_1=THRESHOLD_1,
                        threshold_2=THRESHOLD_2, max_distance=0.1, strict=False):
    """Colour-based region growing followed by region merging.

    Seeds are taken in order of increasing curvature (lowest index on ties).
    A region grows through k-NN links (within ``max_distance``) to points whose
    colour is within ``threshold_1`` of the *seed* colour.  Adjacent regions
    with mean colours within ``threshold_2`` are then merged.
    Points with fewer than 3 neighbours become singleton regions, or raise
    :class:`DegenerateNeighborhood` when ``strict``.
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("region_grow_segment needs a non-empty cloud")
    if k_neighbors < 3:
        raise ValueError("k_neighbors must be >= 3")
    k = min(k_neighbors, n - 1)
    tree = cKDTree(cloud.xyz)
    if k >= 1:
        dist, nbr = tree.query(cloud.xyz, k=k + 1, distance_upper_bound=max_distance)
        dist, nbr = dist[:, 1:], nbr[:, 1:]
        valid = np.isfinite(dist)
    else:
        nbr = np.zeros((n, 0), dtype=int)
        valid = np.zeros((n, 0), dtype=bool)
    n_valid = valid.sum(axis=1)
    sparse = n_valid < 3
    if strict and sparse.any():
        raise DegenerateNeighborhood(f"{int(sparse.sum())} points have fewer than 3 neighbours")

    curv = np.full(n, np.inf)
    dense = np.flatnonzero(~sparse)
    if len(dense):
        full = np.where(valid, nbr, np.arange(n)[:, None])
        curv[dense] = surface_curvature(cloud.xyz, np.concatenate([np.arange(n)[:, None], full], axis=1)[dense])
    order = np.lexsort((np.arange(n), curv))
    rgb = cloud.rgb
    label = np.full(n, -1)
    regions = []
    for seed in order:
        if label[seed] >= 0:
            continue
        rid = len(regions)
        label[seed] = rid
        members = [seed]
        if not sparse[seed]:
            queue = [seed]
            seed_color = rgb[seed]
            while queue:
                p = queue.pop()
                cand = nbr[p][valid[p]]
                cand = cand[label[cand] < 0]
                if len(cand) == 0:
                    continue
                cand = cand[color_distance(rgb[cand], seed_color) <= threshold_1]
                label[cand] = rid
                members.extend(cand.tolist())
                queue.extend(cand[~sparse[cand]].tolist())
        regions.append(members)

    # merge adjacent regions by mean colour
    parent = list(range(len(regions)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    sums = [rgb[m].sum(axis=0) for m in regions]
    counts = [len(m) for m in regions]
    a = np.repeat(np.arange(n), nbr.shape[1])[valid.ravel()]
    b = nbr[valid]
    la, lb = label[a], label[b]
    pairs = np.unique(np.sort(np.stack([la, lb], axis=1)[la != lb], axis=1), axis=0)
    if len(pairs):
        means = np.array(sums) / np.array(counts)[:, None]
        pairs = pairs[np.argsort(color_distance(means[pairs[:, 0]], means[pairs[:, 1]]), kind="stable")]
    changed = True
    while changed:
        changed = False
        for i, j in pairs:
            ri, rj = find(i), find(j)
            if ri == rj:
                continue
            mi, mj = sums[ri] / counts[ri], sums[rj] / counts[rj]
            if color_distance(mi, mj) <= threshold_2:
                lo_, hi_ = min(ri, rj), max(ri, rj)
                parent[hi_] = lo_
                sums[lo_] = sums[lo_] + sums[hi_]
                counts[lo_] += counts[hi_]
                changed = True

    groups = {}
    for rid in range(len(regions)):
        groups.setdefault(find(rid), []).extend(regions[rid])
    out = []
    for root in sorted(groups):
        idx = np.array(sorted(groups[root]), dtype=int)
        out.append(Region(idx, rgb[idx].mean(axis=0)))
    return out


def remove_robot_regions(cloud, regions, reference_color=ROBOT_ORANGE, tolerance=ORANGE_TOLERANCE):
    keep = np.ones(len(cloud), dtype=bool)
    for r in regions:
        if color_distance(r.mean_color, reference_color) <= tolerance:
            keep[r.indices] = False
    return cloud.subset(np.flatnonzero(keep))


def self_identify(cloud, reference_color=ROBOT_ORANGE, **kw):
    regions = region_grow_segment(cloud, **kw)
    return remove_robot_regions(cloud, regions, reference_color)


# -- cloud file ------------------------------------------------------------

def save_cloud(cloud, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# frame={cloud.frame} count={len(cloud)}\n")
        rgb = np.rint(cloud.rgb).astype(int)
        for p, c in zip(cloud.xyz, rgb):
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]}\n")


def load_cloud(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        fields = dict(tok.split("=") for tok in header.lstrip("#").split())
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != int(fields["count"]):
        raise ValueError("cloud file count mismatch")
    arr = np.array(rows, dtype=float).reshape(-1, 6)
    return PointCloud(arr[:, :3], arr[:, 3:], fields["frame"])
