"""World model: primitive obstacles, workspace bounds and scene families.

Obstacles are analytic (box with yaw, sphere, upright cylinder) so that
containment, distance and ray intersection are exact.  All geometric
queries are vectorized over ``(N, 3)`` point arrays.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationExhausted
from .rng import make_rng

EE_RADIUS = 0.05
VOXEL_SIDE = 0.1
GRID_DIM = 32
ROBOT_ORANGE = (255, 102, 0)
FAMILIES = ("elongated", "narrow_circular", "cluttered")
QUERY_ATTEMPTS = 10_000

_PARAM_COUNT = {"box": 7, "sphere": 4, "cylinder": 5}


def _round9(v):
    return float(f"{float(v):.9g}")


@dataclass(frozen=True)
class Bounds:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError(f"bounds need positive extent on each axis: {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def default(cls):
        half = GRID_DIM * VOXEL_SIDE / 2
        return cls((-half, -half, 0.0), (half, half, 2 * half))

    @property
    def lo_arr(self):
        return np.array(self.lo)

    @property
    def hi_arr(self):
        return np.array(self.hi)

    @property
    def size(self):
        return self.hi_arr - self.lo_arr

    @property
    def center(self):
        return 0.5 * (self.lo_arr + self.hi_arr)

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.size))

    def contains(self, pts, tol=0.0):
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lo_arr - tol) & (pts <= self.hi_arr + tol), axis=1)


@dataclass(frozen=True)
class Obstacle:
    """A colored primitive.

    ``params`` layout per shape:
      box      -- cx, cy, cz, hx, hy, hz, yaw
      sphere   -- cx, cy, cz, r
      cylinder -- bx, by, bz, r, h   (upright, base center at bz)
    """

    shape: str
    params: tuple
    color: tuple = (128, 128, 128)

    def __post_init__(self):
        if self.shape not in _PARAM_COUNT:
            raise ValueError(f"unknown shape {self.shape!r}")
        params = tuple(float(p) for p in self.params)
        if len(params) != _PARAM_COUNT[self.shape]:
            raise ValueError(f"{self.shape} needs {_PARAM_COUNT[self.shape]} params")
        if not all(math.isfinite(p) for p in params):
            raise ValueError("non-finite obstacle parameter")
        extents = {"box": params[3:6], "sphere": params[3:4], "cylinder": params[3:5]}[self.shape]
        if any(e <= 0 for e in extents):
            raise ValueError("obstacle extents must be positive")
        color = tuple(int(c) for c in self.color)
        if len(color) != 3 or any(c < 0 or c > 255 for c in color):
            raise ValueError(f"bad color {self.color}")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "color", color)

    # -- constructors ---------------------------------------------------
    @classmethod
    def box(cls, center, half, yaw=0.0, color=(128, 128, 128)):
        return cls("box", (*center, *half, yaw), color)

    @classmethod
    def sphere(cls, center, radius, color=(128, 128, 128)):
        return cls("sphere", (*center, radius), color)

    @classmethod
    def cylinder(cls, base, radius, height, color=(128, 128, 128)):
        return cls("cylinder", (*base, radius, height), color)

    # -- geometry -------------------------------------------------------
    def _box_local(self, pts):
        cx, cy, cz, _, _, _, yaw = self.params
        d = np.atleast_2d(pts) - (cx, cy, cz)
        c, s = math.cos(yaw), math.sin(yaw)
        # rotate by -yaw into the box frame
        return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=1)

    def signed_distance(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        p = self.params
        if self.shape == "sphere":
            return np.linalg.norm(pts - p[:3], axis=1) - p[3]
        if self.shape == "box":
            q = np.abs(self._box_local(pts)) - p[3:6]
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            return outside + inside
        bx, by, bz, r, h = p
        radial = np.hypot(pts[:, 0] - bx, pts[:, 1] - by) - r
        axial = np.abs(pts[:, 2] - (bz + h / 2)) - h / 2
        q = np.stack([radial, axial], axis=1)
        return np.linalg.norm(np.maximum(q, 0.0), axis=1) + np.minimum(q.max(axis=1), 0.0)

    def contains(self, pts):
        return self.signed_distance(pts) <= 0.0

    def aabb(self):
        p = self.params
        if self.shape == "sphere":
            c = np.array(p[:3])
            return c - p[3], c + p[3]
        if self.shape == "cylinder":
            bx, by, bz, r, h = p
            return np.array([bx - r, by - r, bz]), np.array([bx + r, by + r, bz + h])
        cx, cy, cz, hx, hy, hz, yaw = p
        c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
        ex = np.array([c * hx + s * hy, s * hx + c * hy, hz])
        return np.array([cx, cy, cz]) - ex, np.array([cx, cy, cz]) + ex

    def intersect_rays(self, origins, dirs):
        """Smallest ``t >= 0`` with ``origin + t*dir`` on the surface, ``inf`` on miss.

        ``dirs`` need not be unit length; ``t`` is in units of ``|dir|``.
        """
        o = np.atleast_2d(np.asarray(origins, dtype=float))
        d = np.atleast_2d(np.asarray(dirs, dtype=float))
        o, d = np.broadcast_arrays(o, d)
        if self.shape == "sphere":
            return _ray_sphere(o, d, np.array(self.params[:3]), self.params[3])
        if self.shape == "box":
            cx, cy, cz, hx, hy, hz, yaw = self.params
            lo = self._box_local(o)
            c, s = math.cos(yaw), math.sin(yaw)
            ld = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=1)
            return _ray_aabb(lo, ld, -np.array([hx, hy, hz]), np.array([hx, hy, hz]))
        return _ray_cylinder(o, d, *self.params)


def _ray_sphere(o, d, c, r):
    oc = o - c
    a = np.einsum("ij,ij->i", d, d)
    b = np.einsum("ij,ij->i", oc, d)
    cc = np.einsum("ij,ij->i", oc, oc) - r * r
    disc = b * b - a * cc
    t = np.full(len(o), np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = (-b - sq) / a
    t1 = (-b + sq) / a
    t = np.where(ok & (t0 >= 0), t0, t)
    t = np.where(ok & (t0 < 0) & (t1 >= 0), 0.0, t)  # origin inside
    return t


def _ray_aabb(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    # rays parallel to a slab: inside the slab -> unconstrained, outside -> miss
    par = d == 0
    inside_slab = (o >= lo) & (o <= hi)
    tmin = np.where(par, np.where(inside_slab, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside_slab, np.inf, -np.inf), tmax)
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    hit = (near <= far) & (far >= 0)
    return np.where(hit, np.maximum(near, 0.0), np.inf)


def _ray_cylinder(o, d, bx, by, bz, r, h):
    t = np.full(len(o), np.inf)
    ox, oy = o[:, 0] - bx, o[:, 1] - by
    dx, dy = d[:, 0], d[:, 1]
    a = dx * dx + dy * dy
    b = ox * dx + oy * dy
    c = ox * ox + oy * oy - r * r
    disc = b * b - a * c
    ok = (a > 0) & (disc >= 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for tt in ((-b - sq) / a, (-b + sq) / a):
            z = o[:, 2] + tt * d[:, 2]
            good = ok & (tt >= 0) & (z >= bz) & (z <= bz + h)
            t = np.where(good & (tt < t), tt, t)
        for zc in (bz, bz + h):
            tt = (zc - o[:, 2]) / d[:, 2]
            px, py = ox + tt * dx, oy + tt * dy
            good = (d[:, 2] != 0) & (tt >= 0) & (px * px + py * py <= r * r)
            t = np.where(good & (tt < t), tt, t)
    inside = (c <= 0) & (o[:, 2] >= bz) & (o[:, 2] <= bz + h)
    return np.where(inside, 0.0, t)


@dataclass
class Scene:
    obstacles: list
    bounds: Bounds = field(default_factory=Bounds.default)
    robot_body: list = field(default_factory=list)
    family: str | None = None

    def signed_distance(self, pts, include_robot=False):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        obs = self.obstacles + (self.robot_body if include_robot else [])
        if not obs:
            return np.full(len(pts), np.inf)
        return np.min([o.signed_distance(pts) for o in obs], axis=0)

    def contains(self, pts, include_robot=False):
        return self.signed_distance(pts, include_robot) <= 0.0

    def segment_blocked(self, a, b):
        """True iff the closed segment a-b touches any (non-robot) obstacle."""
        a = np.asarray(a, dtype=float)
        d = np.asarray(b, dtype=float) - a
        for o in self.obstacles:
            if o.intersect_rays(a, d)[0] <= 1.0:
                return True
        return False

    def to_json(self):
        return dumps_scene(self)


# -- serialization -------------------------------------------------------

def _fmt(v):
    return f"{float(v):.9g}"


def _obstacle_json(o):
    params = ", ".join(_fmt(p) for p in o.params)
    color = ", ".join(str(c) for c in o.color)
    return f'{{"shape": "{o.shape}", "params": [{params}], "color": [{color}]}}'


def dumps_scene(scene):
    """Serialize with a fixed key order and 9 significant digits."""
    lines = ["{", '  "obstacles": [']
    lines.append(",\n".join("    " + _obstacle_json(o) for o in scene.obstacles))
    lines.append("  ],")
    lo = ", ".join(_fmt(v) for v in scene.bounds.lo)
    hi = ", ".join(_fmt(v) for v in scene.bounds.hi)
    lines.append(f'  "bounds": {{"min": [{lo}], "max": [{hi}]}},')
    lines.append('  "robot_body": [')
    lines.append(",\n".join("    " + _obstacle_json(o) for o in scene.robot_body))
    lines.append("  ],")
    lines.append(f'  "family": {json.dumps(scene.family)}')
    lines.append("}")
    return "\n".join(line for line in lines if line) + "\n"


def loads_scene(text):
    data = json.loads(text)

    def obs(d):
        return Obstacle(d["shape"], tuple(d["params"]), tuple(d["color"]))

    return Scene(
        obstacles=[obs(d) for d in data["obstacles"]],
        bounds=Bounds(tuple(data["bounds"]["min"]), tuple(data["bounds"]["max"])),
        robot_body=[obs(d) for d in data.get("robot_body", [])],
        family=data.get("family"),
    )


def save_scene(scene, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_scene(scene))


def load_scene(path):
    with open(path, encoding="utf-8") as fh:
        return loads_scene(fh.read())


# -- scene families ------------------------------------------------------

# generated geometry stays this far inside the bounds so rounding never leaks out
_INSET = 1e-6


def _rounded(shape, params, color):
    return Obstacle(shape, tuple(_round9(p) for p in params), color)


def _elongated(rng, bounds):
    lo, hi = bounds.lo_arr, bounds.hi_arr
    n = int(rng.integers(2, 5))
    gaps = rng.uniform(4 * EE_RADIUS, 8 * EE_RADIUS, size=n - 1)
    span = hi[1] - lo[1] - 2 * _INSET
    raw = rng.uniform(0.8, 1.2, size=n)
    widths = raw / raw.sum() * (span - gaps.sum())
    x0 = rng.uniform(-0.3, 0.3)
    obstacles = []
    y = lo[1] + _INSET
    for i in range(n):
        hx = rng.uniform(0.18, 0.3)
        height = rng.uniform(0.75, 0.9) * (hi[2] - lo[2])
        shade = int(rng.integers(90, 170))
        color = (shade, shade, shade)
        obstacles.append(_rounded("box", (x0, y + widths[i] / 2, lo[2] + height / 2,
                                          hx, widths[i] / 2, height / 2, 0.0), color))
        y += widths[i]
        if i < n - 1:
            y += gaps[i]
    return obstacles


def _narrow_circular(rng, bounds):
    c = bounds.center
    cx, cy = c[0] + rng.uniform(-0.15, 0.15), c[1] + rng.uniform(-0.15, 0.15)
    ring = rng.uniform(0.8, 0.95)
    rc = rng.uniform(0.1, 0.14)
    gap = rng.uniform(4 * EE_RADIUS, 8 * EE_RADIUS)
    window = rng.uniform(4 * EE_RADIUS, 8 * EE_RADIUS)
    height = bounds.hi[2] - bounds.lo[2]
    sill = bounds.lo[2] + rng.uniform(0.25, 0.65) * height
    theta_gap = rng.uniform(0, 2 * math.pi)
    half_open = math.asin((gap + 2 * rc) / (2 * ring))
    arc = 2 * math.pi - 2 * half_open
    m = int(math.ceil(arc * ring / (1.2 * rc))) + 1
    obstacles = []
    for i in range(m):
        a = theta_gap + half_open + arc * i / (m - 1)
        shade = int(rng.integers(90, 170))
        obstacles.append(_rounded("cylinder", (cx + ring * math.cos(a), cy + ring * math.sin(a),
                                               bounds.lo[2], rc, height), (shade, shade, shade)))
    # the opening is only a window: fill the gap below and above it
    gx, gy = cx + ring * math.cos(theta_gap), cy + ring * math.sin(theta_gap)
    rg = gap / 2 + 0.8 * rc
    shade = int(rng.integers(90, 170))
    obstacles.append(_rounded("cylinder", (gx, gy, bounds.lo[2], rg, sill - bounds.lo[2]), (shade,) * 3))
    top = sill + window
    obstacles.append(_rounded("cylinder", (gx, gy, top, rg, bounds.hi[2] - _INSET - top), (shade,) * 3))
    return obstacles


def _cluttered(rng, bounds):
    n = int(rng.integers(8, 16))
    lo, hi = bounds.lo_arr, bounds.hi_arr
    obstacles = []
    for _ in range(n):
        x, y = rng.uniform(lo[:2] + 0.5, hi[:2] - 0.5)
        shade = int(rng.integers(90, 170))
        color = (shade, shade, shade)
        if rng.random() < 0.6:
            hx, hy = rng.uniform(0.12, 0.3, size=2)
            hz = rng.uniform(0.2, 0.45)
            yaw = rng.uniform(-math.pi / 4, math.pi / 4)
            obstacles.append(_rounded("box", (x, y, lo[2] + hz, hx, hy, hz, yaw), color))
        else:
            r = rng.uniform(0.15, 0.3)
            obstacles.append(_rounded("sphere", (x, y, lo[2] + r, r), color))
    return obstacles


def robot_stack(bounds, color=ROBOT_ORANGE):
    """A short stack of boxes standing in for the manipulator body."""
    lo = bounds.lo_arr
    base = (lo[0] + 0.3, lo[1] + 0.3)
    parts = []
    z = lo[2]
    for hx, hz in ((0.2, 0.15), (0.14, 0.25), (0.1, 0.2)):
        parts.append(_rounded("box", (base[0], base[1], z + hz, hx, hx, hz, 0.0), color))
        z += 2 * hz
    return parts


def make_scene(family, seed, bounds=None, with_robot=False):
    """Procedurally generate a scene of ``family``; deterministic per seed."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    bounds = bounds or Bounds.default()
    rng = make_rng(seed, FAMILIES.index(family))
    gen = {"elongated": _elongated, "narrow_circular": _narrow_circular, "cluttered": _cluttered}[family]
    obstacles = gen(rng, bounds)
    robot = robot_stack(bounds) if with_robot else []
    return Scene(obstacles, bounds, robot, family)


def ring_geometry(scene):
    """Center and radius of a narrow_circular ring (circle fit through cylinder axes)."""
    xy = np.array([o.params[:2] for o in scene.obstacles])
    A = np.column_stack([2 * xy, np.ones(len(xy))])
    b = (xy ** 2).sum(axis=1)
    (cx, cy, k), *_ = np.linalg.lstsq(A, b, rcond=None)
    return np.array([cx, cy]), float(math.sqrt(k + cx * cx + cy * cy))


def wall_slab(scene):
    """x-extent of the elongated pillar wall."""
    lo = min(o.aabb()[0][0] for o in scene.obstacles)
    hi = max(o.aabb()[1][0] for o in scene.obstacles)
    return lo, hi


def _family_ok(scene, start, goal):
    if scene.family == "narrow_circular":
        c, r = ring_geometry(scene)
        inside = [np.linalg.norm(p[:2] - c) < r for p in (start, goal)]
        return inside[0] != inside[1]
    if scene.family == "elongated":
        lo, hi = wall_slab(scene)
        return (start[0] < lo and goal[0] > hi) or (goal[0] < lo and start[0] > hi)
    return True


@dataclass(frozen=True)
class PlanningQuery:
    start: tuple
    goal: tuple


def sample_query(scene, omap=None, seed=0, ee_radius=EE_RADIUS, min_sep_frac=0.4):
    """Draw a start/goal pair that forces a non-trivial plan.

    Both endpoints keep ``ee_radius`` clearance from the analytic obstacles and
    (if given) from the occupancy map; their straight segment must be blocked.
    """
    from .occupancy import collides_sphere

    rng = make_rng(seed, 0x51)
    b = scene.bounds
    lo, hi = b.lo_arr + ee_radius, b.hi_arr - ee_radius
    if scene.family == "cluttered" and scene.obstacles:
        hi = hi.copy()
        hi[2] = min(hi[2], max(o.aabb()[1][2] for o in scene.obstacles))
    min_sep = min_sep_frac * b.diagonal
    for _ in range(QUERY_ATTEMPTS):
        pts = rng.uniform(lo, hi, size=(2, 3))
        start, goal = pts
        if np.linalg.norm(goal - start) < min_sep:
            continue
        if np.any(scene.signed_distance(pts) < ee_radius):
            continue
        if not scene.segment_blocked(start, goal):
            continue
        if not _family_ok(scene, start, goal):
            continue
        if omap is not None and (collides_sphere(omap, start, ee_radius)
                                 or collides_sphere(omap, goal, ee_radius)):
            continue
        return PlanningQuery(tuple(float(v) for v in start), tuple(float(v) for v in goal))
    raise GenerationExhausted(f"no valid query after {QUERY_ATTEMPTS} attempts")


def free_volume_fraction(scene, n=100_000, seed=0):
    rng = make_rng(seed, 0xF7)
    pts = rng.uniform(scene.bounds.lo_arr, scene.bounds.hi_arr, size=(n, 3))
    return float(np.mean(~scene.contains(pts)))
