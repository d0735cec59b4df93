import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from bplan.errors import GenerationExhausted
from bplan.occupancy import build_map
from bplan.scene import (EE_RADIUS, FAMILIES, Bounds, Obstacle, Scene, dumps_scene, free_volume_fraction,
                         load_scene, loads_scene, make_scene, ring_geometry, sample_query, save_scene,
                         wall_slab)

coords = st.floats(-1.5, 1.5)
pts3 = st.tuples(coords, coords, st.floats(0.0, 3.2))


def test_default_bounds_span_32_voxels():
    b = Bounds.default()
    assert np.allclose(b.size, 3.2)
    assert b.lo == (-1.6, -1.6, 0.0)


def test_bounds_reject_degenerate():
    with pytest.raises(ValueError):
        Bounds((0, 0, 0), (1, 0, 1))


@pytest.mark.parametrize("shape,args", [
    ("box", ((0.1, -0.2, 1.0), (0.3, 0.2, 0.4), 0.5)),
    ("sphere", ((0.0, 0.3, 1.2), 0.4)),
    ("cylinder", ((-0.2, 0.1, 0.5), 0.25, 1.0)),
])
def test_signed_distance_sign_matches_brute_containment(shape, args):
    o = getattr(Obstacle, shape)(*args)
    rng = np.random.default_rng(0)
    pts = rng.uniform([-1, -1, 0], [1, 1, 2.5], size=(20_000, 3))
    sd = o.signed_distance(pts)
    if shape == "box":
        (c, h, yaw) = args
        cs, sn = math.cos(yaw), math.sin(yaw)
        d = pts - c
        local = np.c_[cs * d[:, 0] + sn * d[:, 1], -sn * d[:, 0] + cs * d[:, 1], d[:, 2]]
        inside = np.all(np.abs(local) <= h, axis=1)
    elif shape == "sphere":
        inside = np.linalg.norm(pts - args[0], axis=1) <= args[1]
    else:
        (b, r, h) = args
        inside = (np.hypot(pts[:, 0] - b[0], pts[:, 1] - b[1]) <= r) & (pts[:, 2] >= b[2]) & (pts[:, 2] <= b[2] + h)
    assert np.array_equal(sd <= 0, inside)


@pytest.mark.parametrize("shape,args", [
    ("box", ((0.1, -0.2, 1.0), (0.3, 0.2, 0.4), 0.5)),
    ("sphere", ((0.0, 0.3, 1.2), 0.4)),
    ("cylinder", ((-0.2, 0.1, 0.5), 0.25, 1.0)),
])
def test_ray_hit_is_first_surface_crossing(shape, args):
    """Ray parameter matches a fine march along the ray (oracle: sign change of the SDF)."""
    o = getattr(Obstacle, shape)(*args)
    rng = np.random.default_rng(1)
    origins = rng.uniform([-1.5, -1.5, 0.0], [1.5, 1.5, 3.0], size=(200, 3))
    origins = origins[o.signed_distance(origins) > 0.01]
    targets = rng.uniform([-0.4, -0.4, 0.6], [0.4, 0.4, 1.6], size=(len(origins), 3))
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t_hit = o.intersect_rays(origins, dirs)
    ts = np.linspace(0, 5, 50_001)
    for i in range(len(origins)):
        sd = o.signed_distance(origins[i] + ts[:, None] * dirs[i])
        inside = np.flatnonzero(sd <= 0)
        if len(inside) == 0:
            assert not np.isfinite(t_hit[i]) or t_hit[i] > 5 - 1e-3
        else:
            assert abs(t_hit[i] - ts[inside[0]]) <= 2e-4


def test_obstacle_validation():
    with pytest.raises(ValueError):
        Obstacle.sphere((0, 0, 0), -1.0)
    with pytest.raises(ValueError):
        Obstacle("sphere", (0, 0, 0, 1), (300, 0, 0))


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("seed", [0, 1, 2, 3, 42])
def test_generated_obstacles_inside_bounds(family, seed):
    scene = make_scene(family, seed)
    b = scene.bounds
    for o in scene.obstacles:
        lo, hi = o.aabb()
        assert np.all(lo >= b.lo_arr - 1e-9) and np.all(hi <= b.hi_arr + 1e-9)


@pytest.mark.parametrize("family", FAMILIES)
def test_scene_determinism_bytewise(family):
    assert dumps_scene(make_scene(family, 5)) == dumps_scene(make_scene(family, 5))
    assert dumps_scene(make_scene(family, 5)) != dumps_scene(make_scene(family, 6))


def test_elongated_42_free_volume():
    scene = make_scene("elongated", 42)
    assert len(scene.obstacles) >= 2
    fv = free_volume_fraction(scene, 100_000, seed=0)
    assert 0.5 < fv < 0.95


@pytest.mark.parametrize("seed", range(10))
def test_elongated_gaps_are_narrow(seed):
    scene = make_scene("elongated", seed)
    spans = sorted((o.params[1] - o.params[4], o.params[1] + o.params[4]) for o in scene.obstacles)
    assert 2 <= len(spans) <= 4
    for (_, a_hi), (b_lo, _) in zip(spans, spans[1:]):
        gap = b_lo - a_hi
        assert 2 * (2 * EE_RADIUS) - 1e-6 <= gap <= 4 * (2 * EE_RADIUS) + 1e-6


def _free_arcs(free):
    """Number of contiguous runs of True on a circular boolean array."""
    if free.all():
        return 1
    return int(np.sum(free & ~np.roll(free, 1)))


def test_narrow_circular_7_has_one_gap():
    scene = make_scene("narrow_circular", 7)
    c, r = ring_geometry(scene)
    lower, upper = scene.obstacles[-2], scene.obstacles[-1]
    z_window = 0.5 * (lower.params[2] + lower.params[4] + upper.params[2])
    theta = np.arange(3600) * 2 * math.pi / 3600
    circle = np.c_[c[0] + r * np.cos(theta), c[1] + r * np.sin(theta), np.full(3600, z_window)]
    free = ~scene.contains(circle)
    assert _free_arcs(free) == 1
    # the window is the only opening: off its height band the ring is closed
    for z in (0.2, lower.params[4] - 0.05, upper.params[2] + 0.05, 3.0):
        circle[:, 2] = z
        assert not (~scene.contains(circle)).any()


@pytest.mark.parametrize("seed", range(5))
def test_narrow_circular_window_size(seed):
    scene = make_scene("narrow_circular", seed)
    lower, upper = scene.obstacles[-2], scene.obstacles[-1]
    window = upper.params[2] - (lower.params[2] + lower.params[4])
    assert 2 * (2 * EE_RADIUS) - 1e-6 <= window <= 4 * (2 * EE_RADIUS) + 1e-6


def test_cluttered_is_low_and_counted():
    for seed in range(10):
        scene = make_scene("cluttered", seed)
        assert 8 <= len(scene.obstacles) <= 15
        assert all(o.shape in ("box", "sphere") for o in scene.obstacles)
        assert max(o.aabb()[1][2] for o in scene.obstacles) <= 1.0


def test_scene_file_round_trip_and_layout(tmp_path):
    scene = make_scene("narrow_circular", 3, with_robot=True)
    path = tmp_path / "s.scene"
    save_scene(scene, path)
    text = path.read_text()
    data = json.loads(text)
    assert list(data) == ["obstacles", "bounds", "robot_body", "family"]
    assert list(data["obstacles"][0]) == ["shape", "params", "color"]
    back = load_scene(path)
    assert dumps_scene(back) == text
    assert back.obstacles == scene.obstacles
    assert back.robot_body == scene.robot_body


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_nine_significant_digits(v):
    scene = Scene([Obstacle.sphere((v, 0.0, 0.0), 1.0)], Bounds((-1e4,) * 3, (1e4,) * 3))
    back = loads_scene(dumps_scene(scene))
    assert back.obstacles[0].params[0] == float(f"{v:.9g}")


# -- queries ---------------------------------------------------------------

def test_empty_scene_query_exhausts():
    with pytest.raises(GenerationExhausted):
        sample_query(Scene([], Bounds.default()), None, seed=3)


def test_narrow_circular_7_query_crosses_ring(narrow_world):
    scene, omap = narrow_world
    q = sample_query(scene, omap, 7)
    c, r = ring_geometry(scene)
    inside = [np.linalg.norm(np.array(p[:2]) - c) < r for p in (q.start, q.goal)]
    assert inside[0] != inside[1]
    assert sample_query(scene, omap, 7) == q


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_query_postconditions(family, seed):
    scene = make_scene(family, seed)
    q = sample_query(scene, None, seed)
    s, g = np.array(q.start), np.array(q.goal)
    assert np.all(scene.bounds.contains(np.array([s, g])))
    assert np.linalg.norm(g - s) >= 0.4 * scene.bounds.diagonal
    assert np.all(scene.signed_distance(np.array([s, g])) >= EE_RADIUS)
    # straight segment blocked: dense sampling oracle
    t = np.linspace(0, 1, 20_001)[:, None]
    assert scene.contains(s + t * (g - s)).any()
    if family == "elongated":
        lo, hi = wall_slab(scene)
        assert min(s[0], g[0]) < lo and max(s[0], g[0]) > hi


def _free_components(scene, res=0.05):
    """Label 6-connected components of free cells (centre clearance >= EE radius)."""
    b = scene.bounds
    n = np.round(b.size / res).astype(int)
    axes = [b.lo[i] + (np.arange(n[i]) + 0.5) * res for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    free = (scene.signed_distance(grid) >= EE_RADIUS).reshape(n)
    labels, _ = ndimage.label(free)
    return labels, res


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("seed", [0, 1])
def test_query_has_feasible_path_bfs_oracle(family, seed):
    scene = make_scene(family, seed)
    q = sample_query(scene, None, seed)
    labels, res = _free_components(scene)
    ij = [tuple(np.floor((np.array(p) - scene.bounds.lo_arr) / res).astype(int)) for p in (q.start, q.goal)]
    a, b = labels[ij[0]], labels[ij[1]]
    assert a != 0 and a == b


def test_query_map_clearance(elongated_world):
    from bplan.occupancy import collides_sphere
    scene, omap = elongated_world
    for seed in range(5):
        q = sample_query(scene, omap, seed)
        assert not collides_sphere(omap, q.start, EE_RADIUS)
        assert not collides_sphere(omap, q.goal, EE_RADIUS)
