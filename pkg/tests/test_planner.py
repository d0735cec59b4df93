import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bplan.errors import NoFeasibleParent, StartInCollision
from bplan.occupancy import L_MAX, collides_spheres, new_octree
from bplan.planner import (BASELINE, BOTTLENECK, PlannerConfig, PlanTree, choose_parent_and_rewire,
                           choose_target, edge_collision_free, load_result, nearest_k, plan, save_result,
                           steer, target_branch)
from bplan.rng import make_rng
from bplan.scene import Bounds, PlanningQuery, sample_query
from conftest import random_octree

finite = st.floats(-10, 10, allow_nan=False)
point = st.tuples(finite, finite, finite).map(np.array)


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(step=0)
    with pytest.raises(ValueError):
        PlannerConfig(k_nearest=0)
    with pytest.raises(ValueError):
        PlannerConfig(p_goal=0.7, p_bottleneck=0.4)
    assert BOTTLENECK.p_goal == 0.2 and BOTTLENECK.p_bottleneck == 0.4
    assert BASELINE.p_goal == 0.1 and BASELINE.p_bottleneck == 0.0


def test_choose_target_always_goal():
    rng = make_rng(0)
    cfg = PlannerConfig(p_goal=1.0)
    for _ in range(100):
        assert np.array_equal(choose_target(cfg, (1, 2, 3), [], rng, Bounds.default()), [1, 2, 3])


def test_choose_target_branches():
    b = Bounds.default()
    bn = [np.array([0.1, 0.2, 0.3]), np.array([-0.5, 0.0, 1.0])]
    rng = make_rng(1)
    for _ in range(2000):
        x = choose_target(BOTTLENECK, (1, 1, 1), bn, rng, b)
        assert np.all(b.contains(x))
    # empty bottleneck list forces the bottleneck mass to zero
    assert target_branch(BOTTLENECK, 0, 0.3) == "random"
    assert target_branch(BOTTLENECK, 3, 0.3) == "bottleneck"
    assert target_branch(BOTTLENECK, 3, 0.1) == "goal"
    assert target_branch(BOTTLENECK, 3, 0.7) == "random"


def _tree(points):
    t = PlanTree(points[0])
    for p in points[1:]:
        t.add(p, 0, float(np.linalg.norm(p - points[0])))
    return t


def test_nearest_k_small_cases():
    t = PlanTree(np.zeros(3))
    assert nearest_k(t, (5, 5, 5), 1) == [0]
    pts = np.array([[0, 0, 0], [3, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    t = _tree(pts)
    assert nearest_k(t, (0, 0, 0), 10) == [0, 2, 3, 1]
    # exact ties resolved by lower index
    t = _tree(np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0]], dtype=float))
    assert nearest_k(t, (0, 0, 0), 3) == [0, 1, 2]
    assert nearest_k(t, (0.0, 0.0, 0.0), 1) == [0]


@given(st.integers(0, 100_000), st.integers(1, 8))
def test_nearest_k_matches_full_sort(seed, k):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(500, 3))
    t = _tree(pts)
    x = rng.uniform(-1, 1, size=3)
    d = np.linalg.norm(pts - x, axis=1)
    oracle = sorted(range(500), key=lambda i: (d[i], i))[:k]
    assert nearest_k(t, x, k) == oracle


def test_steer_examples():
    assert np.allclose(steer((0, 0, 0), (1, 0, 0), 0.15), (0.15, 0, 0))
    assert np.array_equal(steer((0, 0, 0), (0.1, 0.05, 0), 0.15), (0.1, 0.05, 0))
    assert np.array_equal(steer((1, 1, 1), (1, 1, 1), 0.15), (1, 1, 1))


@given(point, point, st.floats(1e-3, 5))
def test_steer_distance(a, b, d):
    x = steer(a, b, d)
    assert abs(np.linalg.norm(x - a) - min(d, np.linalg.norm(b - a))) <= 1e-12 * max(1, np.linalg.norm(b - a))


def test_edge_collision_examples(bounds):
    empty = new_octree(bounds)
    assert edge_collision_free(empty, (-1, -1, 0.5), (1, 1, 2.5), 0.05, 0.05)
    omap = new_octree(bounds, 0.05)
    omap._update(omap.key(omap.leaf_index(np.array([[0.0, 0.0, 1.0]]))), L_MAX)
    assert not edge_collision_free(omap, (-0.5, 0.0, 1.0), (0.5, 0.0, 1.0), 0.05, 0.01)
    assert edge_collision_free(omap, (-0.5, 0.5, 1.0), (0.5, 0.5, 1.0), 0.05, 0.05)


def test_edge_collision_against_dense_oracle():
    rng = np.random.default_rng(11)
    agree = 0
    total = 0
    for m in range(10):
        omap = random_octree(rng, 300)
        for _ in range(100):
            a = rng.uniform(omap.bounds.lo_arr, omap.bounds.hi_arr)
            b = np.clip(a + rng.normal(scale=0.3, size=3), omap.bounds.lo_arr, omap.bounds.hi_arr)
            got = edge_collision_free(omap, a, b, 0.05, 0.05)
            n = max(1, int(np.ceil(np.linalg.norm(b - a) / 0.05)))
            t = np.linspace(0, 1, 10 * n + 1)[:, None]
            dense = not collides_spheres(omap, a + t * (b - a), 0.05).any()
            # the dense samples include every coarse sample
            if dense:
                assert got
            agree += got == dense
            total += 1
    assert total == 1000
    assert agree / total >= 0.97


def test_choose_parent_hand_case(bounds):
    omap = new_octree(bounds)
    t = PlanTree(np.zeros(3) + [0, 0, 1])
    t.add(np.array([1.0, 0, 1]), 0, 1.0)
    x_new = np.array([0.5, 0.1, 1.0])
    i = choose_parent_and_rewire(t, x_new, [0, 1], omap, BASELINE)
    assert t.parent[i] == 0
    assert t.cost[i] == pytest.approx(math.hypot(0.5, 0.1))
    assert t.parent[1] == 0 and t.cost[1] == 1.0  # 1.0198 > 1: no rewire


def test_choose_parent_rewires_when_cheaper(bounds):
    omap = new_octree(bounds)
    t = PlanTree(np.array([0, 0, 1.0]))
    a = t.add(np.array([0.0, 1.0, 1.0]), 0, 1.0)
    b = t.add(np.array([1.0, 1.0, 1.0]), a, 2.0)  # detour through a
    c = t.add(np.array([1.5, 1.0, 1.0]), b, 2.5)
    i = choose_parent_and_rewire(t, np.array([0.7, 0.7, 1.0]), [0, a, b], omap, BASELINE)
    assert t.parent[i] == 0
    assert t.parent[b] == i
    assert t.cost[b] == pytest.approx(math.hypot(0.7, 0.7) + math.hypot(0.3, 0.3))
    assert t.cost[c] == pytest.approx(t.cost[b] + 0.5)


def test_choose_parent_no_feasible(bounds):
    omap = new_octree(bounds, 0.05)
    wall = np.array([[32, j, k] for j in range(20, 44) for k in range(10, 30)])
    omap._update(omap.key(wall), L_MAX)
    t = PlanTree(np.array([-0.3, 0.0, 1.0]))
    with pytest.raises(NoFeasibleParent):
        choose_parent_and_rewire(t, np.array([0.3, 0.0, 1.0]), [0], omap, BASELINE)


def _check_tree(tree):
    n = len(tree)
    assert tree.parent[0] == -1 and tree.cost[0] == 0
    assert np.sum(tree.parent[:n] >= 0) == n - 1
    for v in range(1, n):
        p = tree.parent[v]
        assert 0 <= p < n
        assert abs(tree.cost[v] - tree.cost[p] - np.linalg.norm(tree.vertices[v] - tree.vertices[p])) < 1e-9
        # walking to the root terminates (acyclic)
        seen, u = 0, v
        while u != 0:
            u = tree.parent[u]
            seen += 1
            assert seen <= n


def test_tree_invariants_during_plan(elongated_world):
    scene, omap = elongated_world
    q = sample_query(scene, omap, 0)
    snapshots = []

    def observer(tree):
        _check_tree(tree)
        snapshots.append(tree.cost[: len(tree)].copy())

    res = plan(omap, q, (), BASELINE.with_(seed=3), observer)
    assert res.success
    for before, after in zip(snapshots, snapshots[1:]):
        assert np.all(after[: len(before)] <= before + 1e-12)
    for a, b in zip(res.path, res.path[1:]):
        assert edge_collision_free(omap, a, b, BASELINE.edge_step, BASELINE.ee_radius)


def test_plan_postconditions_and_determinism(elongated_world):
    scene, omap = elongated_world
    q = sample_query(scene, omap, 1)
    a = plan(omap, q, (), BASELINE.with_(seed=5))
    b = plan(omap, q, (), BASELINE.with_(seed=5))
    assert a.success
    assert (a.path, a.tree_size, a.iterations) == (b.path, b.tree_size, b.iterations)
    assert a.path[0] == tuple(q.start)
    assert np.linalg.norm(np.array(a.path[-1]) - q.goal) <= BASELINE.goal_tolerance
    assert a.tree_size == len(a.tree)


def test_plan_empty_map_typically_near_straight(bounds):
    """Median detour on an empty map stays within 1.2x the chord.

    The strict every-seed bound is checked (and reported) in the acceptance suite.
    """
    omap = new_octree(bounds)
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        s, g = rng.uniform([-1.5, -1.5, 0.1], [1.5, 1.5, 3.1], size=(2, 3))
        res = plan(omap, PlanningQuery(tuple(s), tuple(g)), (), BASELINE.with_(seed=seed))
        assert res.success
        chord = np.linalg.norm(g - s)
        assert res.cost >= chord - BASELINE.goal_tolerance - 1e-9
        ratios.append(res.cost / chord)
    assert np.median(ratios) <= 1.2
    assert max(ratios) <= 2.0


def test_plan_enclosed_goal_fails(bounds):
    omap = new_octree(bounds, 0.05)
    idx = np.array([[i, j, k] for i in range(36, 44) for j in range(36, 44) for k in range(28, 36)])
    omap._update(omap.key(idx), L_MAX)
    goal = omap.leaf_center([40, 40, 32])
    q = PlanningQuery((-1.0, -1.0, 1.0), tuple(goal))
    res = plan(omap, q, (), BASELINE.with_(max_iterations=2000))
    assert not res.success and res.iterations == 2000 and res.path == []


def test_plan_start_in_collision(bounds):
    omap = new_octree(bounds, 0.05)
    omap._update(omap.key(omap.leaf_index(np.array([[0.0, 0.0, 1.0]]))), L_MAX)
    with pytest.raises(StartInCollision):
        plan(omap, PlanningQuery((0.0, 0.0, 1.0), (1.0, 1.0, 1.0)))


def test_completeness_smoke(elongated_world):
    scene, omap = elongated_world
    q = sample_query(scene, omap, 2)
    assert all(plan(omap, q, (), BASELINE.with_(seed=s)).success for s in range(50))


def test_result_file_round_trip(tmp_path, elongated_world):
    scene, omap = elongated_world
    res = plan(omap, sample_query(scene, omap, 0), (), BASELINE)
    save_result(res, tmp_path / "p.txt")
    back = load_result(tmp_path / "p.txt")
    assert back.success and back.tree_size == res.tree_size and back.iterations == res.iterations
    assert np.allclose(back.path, res.path, rtol=1e-8)
    lines = (tmp_path / "p.txt").read_text().splitlines()
    assert [l.split()[0] for l in lines[:4]] == ["success", "tree_size", "iterations", "wall_time_s"]
