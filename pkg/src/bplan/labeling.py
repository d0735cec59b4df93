"""Supervised dataset: baseline RRT* solutions labelled by their lowest-clearance waypoints."""
from __future__ import annotations

import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptFile, GenerationExhausted, OutOfBounds
from .occupancy import build_map, clearances, to_voxel_descriptor
from .planner import BASELINE, plan
from .rng import child_seed, make_rng
from .scene import FAMILIES, GRID_DIM, VOXEL_SIDE, make_scene, sample_query

log = logging.getLogger(__name__)

N_LABELS = 3
TEST_EVERY = 10
MAX_ATTEMPTS_PER_PROBLEM = 20


def normalize(point, bounds):
    p = np.asarray(point, dtype=float)
    if not np.all(bounds.contains(p.reshape(-1, 3), tol=1e-9)):
        raise OutOfBounds("point outside bounds")
    return 2.0 * (p - bounds.lo_arr) / bounds.size - 1.0


def denormalize(coords, bounds):
    return bounds.lo_arr + (np.asarray(coords, dtype=float) + 1.0) * bounds.size / 2.0


def select_bottleneck_labels(path, omap, n=N_LABELS):
    """The ``n`` interior waypoints with the smallest clearance (ties by path order).

    With fewer than ``n`` interior waypoints, the lowest-clearance one is repeated.
    """
    pts = np.asarray(path, dtype=float)
    if len(pts) < 2:
        raise ValueError("path needs at least two waypoints")
    inner = pts[1:-1]
    if len(inner) == 0:
        # no interior waypoint: fall back to the endpoint nearest an obstacle
        inner = pts
    c = clearances(omap, inner)
    order = np.argsort(c, kind="stable")[:n]
    chosen = [inner[i].copy() for i in order]
    while len(chosen) < n:
        chosen.append(inner[order[0]].copy())
    return chosen


@dataclass
class DatasetSample:
    grid: np.ndarray  # (D, H, W) float32
    endpoints: np.ndarray  # 6 normalized
    labels: np.ndarray  # 9 normalized
    test: bool = False
    # provenance, kept in memory only
    family: str = ""
    scene_seed: int = 0
    path: np.ndarray | None = None
    label_points: np.ndarray | None = None


@dataclass
class Dataset:
    samples: list
    dims: tuple = (GRID_DIM,) * 3
    voxel_side: float = VOXEL_SIDE
    log: list = field(default_factory=list)

    @property
    def test_idx(self):
        return [i for i, s in enumerate(self.samples) if s.test]

    @property
    def train_idx(self):
        return [i for i, s in enumerate(self.samples) if not s.test]

    def arrays(self, idx):
        X = np.stack([self.samples[i].grid for i in idx]).astype(float)[:, None] if idx else np.zeros((0, 1, *self.dims))
        E = np.array([self.samples[i].endpoints for i in idx], dtype=float).reshape(-1, 6)
        Y = np.array([self.samples[i].labels for i in idx], dtype=float).reshape(-1, 9)
        return X, E, Y


def split_flag(i):
    return i % TEST_EVERY == TEST_EVERY - 1


def _choose_family(seed, i, weights):
    w = np.array([weights.get(f, 0.0) for f in FAMILIES], dtype=float)
    rng = make_rng(seed, i, 0xFA)
    return FAMILIES[int(rng.choice(len(FAMILIES), p=w / w.sum()))]


def solve_problem(family, scene_seed, planner_config, dims, voxel_side):
    """One labelled sample, or None if query generation or planning failed."""
    scene = make_scene(family, scene_seed)
    omap = build_map(scene)
    try:
        query = sample_query(scene, omap, scene_seed)
    except GenerationExhausted:
        return None
    result = plan(omap, query, (), planner_config.with_(seed=scene_seed))
    if not result.success:
        return None
    labels = select_bottleneck_labels(result.path, omap)
    grid = to_voxel_descriptor(omap, scene.bounds.lo_arr, dims, voxel_side).values.astype(np.float32)
    b = scene.bounds
    endpoints = np.concatenate([normalize(query.start, b), normalize(query.goal, b)])
    norm_labels = np.concatenate([normalize(p, b) for p in labels])
    return DatasetSample(grid, endpoints, norm_labels, False, family, scene_seed,
                         np.asarray(result.path), np.array(labels))


def _problem(args):
    i, seed, weights, planner_config, dims, voxel_side = args
    family = _choose_family(seed, i, weights)
    events = []
    for attempt in range(MAX_ATTEMPTS_PER_PROBLEM):
        scene_seed = child_seed(seed, i, attempt)
        sample = solve_problem(family, scene_seed, planner_config, dims, voxel_side)
        if sample is not None:
            return i, sample, events
        events.append(f"problem {i}: {family} seed {scene_seed} failed, regenerating")
    return i, None, events


def build_dataset(n_problems, families=None, planner_config=BASELINE, seed=0,
                  dims=(GRID_DIM,) * 3, voxel_side=VOXEL_SIDE, jobs=1):
    """Generate ``n_problems`` labelled samples; every 10th sample goes to the test split."""
    if n_problems < 10:
        raise ValueError("n_problems must be >= 10")
    weights = families or {f: 1.0 for f in FAMILIES}
    dims = tuple(int(d) for d in np.broadcast_to(dims, 3))
    tasks = [(i, seed, weights, planner_config, dims, voxel_side) for i in range(n_problems)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_problem, tasks))
    else:
        results = [_problem(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    events = [e for _, _, ev in results for e in ev]
    for e in events:
        log.info(e)
    failures = len(events)
    if failures > (failures + n_problems) / 2 or any(s is None for _, s, _ in results):
        raise GenerationExhausted(f"{failures} planning failures for {n_problems} problems")
    samples = []
    for i, sample, _ in results:
        sample.test = split_flag(i)
        samples.append(sample)
    return Dataset(samples, dims, voxel_side, events)


def verify_labels(sample, omap, tol=1e-12):
    """Re-check a sample's labels against its own map: membership and minimal clearance."""
    path = np.asarray(sample.path)
    inner = path[1:-1] if len(path) > 2 else path
    pts = sample.label_points
    for p in pts:
        if not np.any(np.all(inner == p, axis=1)):
            return False
    c_inner = clearances(omap, inner)
    c_sel = clearances(omap, pts)
    if len(inner) >= N_LABELS:
        # no unselected waypoint strictly below the largest selected clearance
        chosen = {tuple(p) for p in pts}
        rest = np.array([c for q, c in zip(inner, c_inner) if tuple(q) not in chosen])
        if len(rest) and rest.min() < c_sel.max() - tol:
            return False
    elif not np.allclose(c_sel, c_inner.min()):
        return False
    return True


# -- dataset file --------------------------------------------------------

_HEAD = struct.Struct("<4sI3Id")


def save_dataset(ds, path):
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(b"BNK1", len(ds.samples), *ds.dims, ds.voxel_side))
        for s in ds.samples:
            fh.write(np.asarray(s.grid, dtype="<f4").ravel(order="F").tobytes())
            fh.write(np.asarray(s.endpoints, dtype="<f4").tobytes())
            fh.write(np.asarray(s.labels, dtype="<f4").tobytes())
            fh.write(struct.pack("<B", int(s.test)))


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD.size or raw[:4] != b"BNK1":
        raise CorruptFile("bad dataset magic")
    _, count, dx, dy, dz, side = _HEAD.unpack_from(raw)
    ng = dx * dy * dz
    rec = 4 * (ng + 15) + 1
    if len(raw) != _HEAD.size + count * rec:
        raise CorruptFile("truncated dataset file")
    samples = []
    off = _HEAD.size
    for _ in range(count):
        grid = np.frombuffer(raw, "<f4", ng, off).reshape((dx, dy, dz), order="F").copy()
        off += 4 * ng
        ep = np.frombuffer(raw, "<f4", 6, off).astype(float)
        off += 24
        lab = np.frombuffer(raw, "<f4", 9, off).astype(float)
        off += 36
        test = bool(raw[off])
        off += 1
        samples.append(DatasetSample(grid, ep, lab, test))
    return Dataset(samples, (dx, dy, dz), side)
