"""k-nearest RRT* with goal-biased and bottleneck-guided target selection."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoFeasibleParent, StartInCollision
from .occupancy import collides_sphere, collides_spheres
from .rng import make_rng
from .scene import EE_RADIUS


@dataclass(frozen=True)
class PlannerConfig:
    step: float = 0.15
    k_nearest: int = 3
    p_goal: float = 0.1
    p_bottleneck: float = 0.0
    goal_tolerance: float = 0.1
    max_iterations: int = 100_000
    edge_step: float = 0.05
    ee_radius: float = EE_RADIUS
    seed: int = 0

    def __post_init__(self):
        if self.step <= 0 or self.edge_step <= 0:
            raise ValueError("step sizes must be positive")
        if self.k_nearest < 1:
            raise ValueError("k_nearest must be >= 1")
        if not (0 <= self.p_goal <= 1 and 0 <= self.p_bottleneck <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.p_goal + self.p_bottleneck > 1 + 1e-12:
            raise ValueError("p_goal + p_bottleneck must not exceed 1")

    def with_(self, **kw):
        return replace(self, **kw)


BASELINE = PlannerConfig(p_goal=0.1, p_bottleneck=0.0)
BOTTLENECK = PlannerConfig(p_goal=0.2, p_bottleneck=0.4)


class PlanTree:
    """Vertices, parent links and cost-to-come, stored in growable arrays."""

    def __init__(self, root, capacity=1024):
        self.vertices = np.zeros((capacity, 3))
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.cost = np.zeros(capacity)
        self.children = [[]]
        self.vertices[0] = root
        self.n = 1

    def __len__(self):
        return self.n

    @property
    def V(self):
        return self.vertices[: self.n]

    def add(self, x, parent, cost):
        if self.n == len(self.vertices):
            grow = len(self.vertices)
            self.vertices = np.concatenate([self.vertices, np.zeros((grow, 3))])
            self.parent = np.concatenate([self.parent, np.full(grow, -1, dtype=np.int64)])
            self.cost = np.concatenate([self.cost, np.zeros(grow)])
        i = self.n
        self.vertices[i] = x
        self.parent[i] = parent
        self.cost[i] = cost
        self.children.append([])
        self.children[parent].append(i)
        self.n += 1
        return i

    def reparent(self, i, new_parent):
        self.children[self.parent[i]].remove(i)
        self.children[new_parent].append(i)
        self.parent[i] = new_parent
        stack = [i]
        while stack:
            v = stack.pop()
            p = self.parent[v]
            self.cost[v] = self.cost[p] + float(np.linalg.norm(self.vertices[v] - self.vertices[p]))
            stack.extend(self.children[v])

    def path_to(self, i):
        out = []
        while i >= 0:
            out.append(tuple(float(c) for c in self.vertices[i]))
            i = self.parent[i]
        return out[::-1]


@dataclass
class PlanResult:
    path: list
    tree_size: int
    iterations: int
    wall_time: float
    success: bool
    tree: PlanTree | None = field(default=None, repr=False, compare=False)

    @property
    def cost(self):
        p = np.asarray(self.path)
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()) if len(p) > 1 else 0.0


def choose_target(config, goal, bottlenecks, rng, bounds):
    """Three-way draw: goal, a bottleneck point, or a uniform workspace sample."""
    p_b = config.p_bottleneck if len(bottlenecks) else 0.0
    u = rng.random()
    if u < config.p_goal:
        return np.asarray(goal, dtype=float)
    if u < config.p_goal + p_b:
        return np.asarray(bottlenecks[int(rng.integers(len(bottlenecks)))], dtype=float)
    return rng.uniform(bounds.lo_arr, bounds.hi_arr)


def target_branch(config, n_bottlenecks, u):
    """Which branch of :func:`choose_target` a uniform draw ``u`` selects."""
    p_b = config.p_bottleneck if n_bottlenecks else 0.0
    if u < config.p_goal:
        return "goal"
    if u < config.p_goal + p_b:
        return "bottleneck"
    return "random"


def nearest_k(tree, x, k):
    """Indices of the ``min(k, |V|)`` closest vertices, ascending; ties by index."""
    d2 = np.sum((tree.V - np.asarray(x, dtype=float)) ** 2, axis=1)
    n = len(d2)
    if k == 1:
        return [int(np.argmin(d2))]
    if k >= n:
        return np.lexsort((np.arange(n), d2)).tolist()
    kth = np.partition(d2, k - 1)[k - 1]
    cand = np.flatnonzero(d2 <= kth)
    order = np.lexsort((cand, d2[cand]))
    return cand[order[:k]].tolist()


def steer(origin, toward, d):
    origin = np.asarray(origin, dtype=float)
    toward = np.asarray(toward, dtype=float)
    delta = toward - origin
    dist = float(np.linalg.norm(delta))
    if dist <= d:
        return toward.copy()
    return origin + (d / dist) * delta


def edge_collision_free(omap, a, b, delta, ee_radius):
    """Sample the segment at spacing <= ``delta`` (endpoints included)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(1, int(np.ceil(np.linalg.norm(b - a) / delta)))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return not collides_spheres(omap, a + t * (b - a), ee_radius).any()


def choose_parent_and_rewire(tree, x_new, neighbors, omap, config):
    """Attach ``x_new`` to its cheapest reachable neighbour, then rewire through it."""
    x_new = np.asarray(x_new, dtype=float)
    nb = np.asarray(neighbors, dtype=np.int64)
    dist = np.linalg.norm(tree.vertices[nb] - x_new, axis=1)
    via = tree.cost[nb] + dist
    order = np.argsort(via, kind="stable")
    parent = -1
    for j in order:
        if edge_collision_free(omap, tree.vertices[nb[j]], x_new, config.edge_step, config.ee_radius):
            parent = j
            break
    if parent < 0:
        raise NoFeasibleParent("no collision-free edge to any neighbour")
    new = tree.add(x_new, int(nb[parent]), float(via[parent]))
    c_new = tree.cost[new]
    for j in range(len(nb)):
        if j == parent:
            continue
        v = int(nb[j])
        if c_new + dist[j] < tree.cost[v] and edge_collision_free(
                omap, x_new, tree.vertices[v], config.edge_step, config.ee_radius):
            tree.reparent(v, new)
    return new


def plan(omap, query, bottlenecks=(), config=BASELINE, observer=None):
    """Grow the tree until a vertex lands within ``goal_tolerance`` of the goal.

    ``observer(tree)`` is called after every accepted insertion (for tests).
    """
    t0 = time.perf_counter()
    start = np.asarray(query.start, dtype=float)
    goal = np.asarray(query.goal, dtype=float)
    if collides_sphere(omap, start, config.ee_radius):
        raise StartInCollision("start configuration collides")
    bottlenecks = [np.asarray(b, dtype=float) for b in bottlenecks]
    rng = make_rng(config.seed, 0xB7)
    bounds = omap.bounds
    tree = PlanTree(start)
    if np.linalg.norm(start - goal) <= config.goal_tolerance:
        return PlanResult(tree.path_to(0), 1, 0, time.perf_counter() - t0, True, tree)
    for it in range(1, config.max_iterations + 1):
        target = choose_target(config, goal, bottlenecks, rng, bounds)
        near = nearest_k(tree, target, 1)[0]
        x_new = steer(tree.vertices[near], target, config.step)
        if np.linalg.norm(x_new - tree.vertices[near]) < 1e-12:
            continue
        if collides_sphere(omap, x_new, config.ee_radius):
            continue
        nbrs = nearest_k(tree, x_new, config.k_nearest)
        try:
            new = choose_parent_and_rewire(tree, x_new, nbrs, omap, config)
        except NoFeasibleParent:
            continue
        if observer is not None:
            observer(tree)
        if np.linalg.norm(x_new - goal) <= config.goal_tolerance:
            return PlanResult(tree.path_to(new), len(tree), it, time.perf_counter() - t0, True, tree)
    return PlanResult([], len(tree), config.max_iterations, time.perf_counter() - t0, False, tree)


# -- serialization -------------------------------------------------------

def format_result(result, with_time=True):
    lines = [
        f"success {str(result.success).lower()}",
        f"tree_size {result.tree_size}",
        f"iterations {result.iterations}",
        f"wall_time_s {result.wall_time:.6f}" if with_time else "wall_time_s -",
    ]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in result.path]
    return "\n".join(lines) + "\n"


def save_result(result, path, with_time=True):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_result(result, with_time))


def load_result(path):
    with open(path, encoding="utf-8") as fh:
        lines = [line.split() for line in fh if line.strip()]
    head = {k: v for k, v in lines[:4]}
    path_pts = [tuple(float(v) for v in row) for row in lines[4:]]
    wall = head["wall_time_s"]
    return PlanResult(path_pts, int(head["tree_size"]), int(head["iterations"]),
                      float("nan") if wall == "-" else float(wall), head["success"] == "true")
