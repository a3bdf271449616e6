"""Motion-tree planners.

`plan_memory_guided` and `plan_baseline_roadmap` share one group-partitioned
tree expansion and differ only in their guide: where the motion map comes from,
which goal-to-goal costs price the tours, and which coordinates a group follows.
`plan_sequential_rrt` reaches the goals one RRT leg at a time.
"""
from __future__ import annotations

import heapq
import json
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dynamics import RobotModel, SteeringController, Trajectory, polyline_length, simulate
from .motionmap import (
    R_VICINITY,
    START,
    MotionMap,
    generate_motion_map,
    generate_uniform_map,
    sample_in_disc,
)
from .tour import SuffixTours
from .world import Scene, is_state_colliding, point_free

ALPHA = 0.95
EPSILON = 1.0
E_STEPS = 80
T_RETRY = 10
TARGET_TOL = 0.5
GROUP_RADIUS = 2.0
NOMAD = -1
ROADMAP_SAMPLES = 1000
LOOKUP_CELL = 0.25
RRT_GOAL_BIAS = 0.1


class PlannerError(ValueError):
    pass


@dataclass
class PlanResult:
    status: str
    planner: str
    seed: int
    goal_order: list
    tree_size: int
    runtime: float
    trajectory: Trajectory | None = None
    stats: dict = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status == "solved"

    @property
    def distance(self) -> float:
        if self.trajectory is None:
            return math.nan
        return self.trajectory.length()

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = {
            "planner": self.planner,
            "seed": self.seed,
            "status": self.status,
            "goal_order": list(self.goal_order),
            "tree_nodes": self.tree_size,
            "distance_m": None if self.trajectory is None else self.distance,
            "dt": None if self.trajectory is None else self.trajectory.dt,
            "initial_state": None if self.trajectory is None else list(self.trajectory.states[0]),
            "actions": [] if self.trajectory is None else [list(a) for a in self.trajectory.actions],
            "stats": dict(sorted(self.stats.items())),
        }
        if include_runtime:
            d["runtime_s"] = self.runtime
        return d

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(self.to_dict(include_runtime), sort_keys=True)


def result_from_dict(d: dict, model: RobotModel) -> PlanResult:
    """Rebuild a result by replaying its recorded actions."""
    from .dynamics import rollout

    traj = None
    if d.get("initial_state") is not None:
        traj = rollout(model, tuple(d["initial_state"]), [tuple(a) for a in d["actions"]])
    return PlanResult(d["status"], d["planner"], d["seed"], list(d["goal_order"]), d["tree_nodes"],
                      d.get("runtime_s", math.nan), traj, dict(d.get("stats", {})))


def check_solution(scene: Scene, model: RobotModel, s_init, result: PlanResult) -> list:
    """Replay, collision and goal-order checks; returns a list of violations (empty when valid)."""
    problems = []
    traj = result.trajectory
    if traj is None:
        return ["no trajectory"]
    if tuple(traj.states[0]) != tuple(s_init):
        problems.append("trajectory does not start at s_init")
    s = tuple(traj.states[0])
    for j, a in enumerate(traj.actions):
        s = simulate(model, s, a, traj.dt)
        if s != tuple(traj.states[j + 1]):
            problems.append(f"replay mismatch at step {j + 1}")
            break
    for j, st in enumerate(traj.states):
        if is_state_colliding(scene, model, st):
            problems.append(f"state {j} in collision")
            break
    first = {}
    for j, st in enumerate(traj.states):
        for g, region in enumerate(scene.goals):
            if g not in first and region.contains(st[0], st[1]):
                first[g] = j
    visited = [g for g, _ in sorted(first.items(), key=lambda kv: (kv[1], kv[0]))]
    if len(first) != len(scene.goals):
        problems.append(f"goals never reached: {sorted(set(range(len(scene.goals))) - set(first))}")
    if visited != list(result.goal_order):
        problems.append(f"reported order {list(result.goal_order)} != visited order {visited}")
    return problems


# ---------------------------------------------------------------------------
# tree storage


class _Tree:
    def __init__(self):
        self.states = []
        self.parents = []
        self.actions = []
        self.reached = []

    def add(self, state, parent, action, reached) -> int:
        self.states.append(state)
        self.parents.append(parent)
        self.actions.append(action)
        self.reached.append(reached)
        return len(self.states) - 1

    def __len__(self):
        return len(self.states)

    def extract(self, node: int, dt: float) -> Trajectory:
        seq = []
        while node is not None:
            seq.append(node)
            node = self.parents[node]
        seq.reverse()
        return Trajectory([self.states[i] for i in seq], [self.actions[i] for i in seq[1:]], dt)


def _goals_at(scene: Scene, x: float, y: float, skip) -> list:
    return [g for g, r in enumerate(scene.goals) if g not in skip and r.contains(x, y)]


def _random_free_point(scene: Scene, rng, clearance: float, tries: int = 200):
    xmin, ymin, xmax, ymax = scene.bounds
    p = None
    for _ in range(tries):
        p = (xmin + (xmax - xmin) * rng.random(), ymin + (ymax - ymin) * rng.random())
        if point_free(scene, p[0], p[1], clearance):
            return p
    return p


def select_target(scene: Scene, path: deque | None, rng, clearance: float,
                  r_vic: float = R_VICINITY, retries: int = T_RETRY):
    """Next extension target for a group.

    Returns ``(point, popped)`` where `popped` is the path coordinate consumed
    (None for a random sample). The final coordinate of a path is the goal centre
    and is targeted exactly.
    """
    for _ in range(retries):
        if not path:
            break
        p = path[0]
        q = tuple(p) if len(path) == 1 else sample_in_disc(rng, p, r_vic)
        if point_free(scene, q[0], q[1], clearance):
            path.popleft()
            return q, p
    return _random_free_point(scene, rng, clearance), None


# ---------------------------------------------------------------------------
# guides


class _Guide:
    name = "guide"

    def __init__(self, scene: Scene, mmap: MotionMap, goal_costs, model: RobotModel):
        self.scene = scene
        self.mmap = mmap
        self.tours = SuffixTours(goal_costs)
        self.clearance = model.clearance_radius
        xmin, ymin, xmax, ymax = scene.bounds
        self.nx = int(math.ceil((xmax - xmin) / LOOKUP_CELL))
        self.ny = int(math.ceil((ymax - ymin) / LOOKUP_CELL))
        self.x0, self.y0 = xmin, ymin
        gx = xmin + LOOKUP_CELL * (np.arange(self.nx) + 0.5)
        gy = ymin + LOOKUP_CELL * (np.arange(self.ny) + 0.5)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        d, idx = mmap._tree.query(np.column_stack([X.ravel(), Y.ravel()]))
        self.nearest = idx.astype(np.int64).tolist()
        self.key = np.where(d <= GROUP_RADIUS, idx, NOMAD).astype(np.int64).tolist()

    def _cell(self, x, y):
        c = min(self.nx - 1, max(0, int((x - self.x0) / LOOKUP_CELL)))
        r = min(self.ny - 1, max(0, int((y - self.y0) / LOOKUP_CELL)))
        return c * self.ny + r

    def map_key(self, x: float, y: float) -> int:
        return self.key[self._cell(x, y)]

    def nearest_node(self, x: float, y: float) -> int:
        return self.nearest[self._cell(x, y)]

    def first_leg(self, anchor, map_node: int, context, goal: int):
        raise NotImplementedError


def _goal_point(scene, g):
    return np.array([scene.goals[g].cx, scene.goals[g].cy])


def _trim(coords: np.ndarray, anchor, goal_xy):
    """Cost from `anchor` along `coords`, and the coordinates still ahead of it."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    if len(coords) == 0 or not np.allclose(coords[-1], goal_xy):
        coords = np.vstack([coords, goal_xy])
    d = np.hypot(coords[:, 0] - anchor[0], coords[:, 1] - anchor[1])
    i = int(np.argmin(d))
    cost = float(d[i]) + polyline_length(coords[i:])
    ahead = coords[i + 1:] if i + 1 < len(coords) else coords[-1:]
    return cost, deque(map(tuple, ahead))


def _map_leg(mmap: MotionMap, anchor, node: int, goal: int):
    """Cost and coordinates along the map's shortest path from `node` to the goal anchor, or None."""
    seq = mmap.path_to(node, goal)
    if seq is None:
        return None
    coords = mmap.nodes[list(seq)]
    cost = float(np.hypot(*(coords[0] - anchor))) + float(mmap.dist[goal][node])
    ahead = coords[1:] if len(coords) > 1 else coords
    return cost, deque(map(tuple, ahead))


def repaired_costs(mmap: MotionMap, delta, n: int) -> np.ndarray:
    """Goal-to-goal costs: map distance where the guided map connects a pair, memory distance otherwise."""
    D = np.asarray(delta, dtype=float)[1:, 1:].reshape(n, n).copy()
    for i in range(n):
        for j in range(n):
            if i != j:
                entry = mmap.paths.get((i, j))
                if entry is not None and not entry.fallback:
                    D[i, j] = entry.cost
    return D


class MemoryGuide(_Guide):
    """Groups follow the guided map, else the retrieved pair path; tours use repaired costs."""

    name = "memory"

    def __init__(self, scene, mmap, delta, model):
        n = len(scene.goals)
        self.goal_dist = repaired_costs(mmap, delta, n)
        super().__init__(scene, mmap, self.goal_dist, model)

    def first_leg(self, anchor, map_node, context, goal):
        if map_node != NOMAD:
            leg = _map_leg(self.mmap, anchor, map_node, goal)
            if leg is not None:
                return leg
        entry = self.mmap.paths.get((context, goal))
        coords = entry.coords if entry is not None else np.zeros((0, 2))
        return _trim(coords, anchor, _goal_point(self.scene, goal))


class RoadmapGuide(_Guide):
    """Follows roadmap shortest paths from the group's map node; tours priced by Dijkstra costs."""

    name = "roadmap"

    def __init__(self, scene, mmap, model):
        n = len(scene.goals)
        D = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if i != j:
                    c = mmap.dist[j][mmap.anchors[i]]
                    D[i, j] = c if math.isfinite(c) else float(np.hypot(*(_goal_point(scene, i) - _goal_point(scene, j))))
        self.goal_dist = D
        super().__init__(scene, mmap, D, model)

    def first_leg(self, anchor, map_node, context, goal):
        node = map_node if map_node != NOMAD else self.nearest_node(anchor[0], anchor[1])
        leg = _map_leg(self.mmap, anchor, node, goal)
        if leg is None:
            goal_xy = _goal_point(self.scene, goal)
            return float(np.hypot(*(goal_xy - anchor))), deque([tuple(goal_xy)])
        return leg


# ---------------------------------------------------------------------------
# group-partitioned expansion


@dataclass
class _Group:
    gid: int
    key: tuple
    reached: tuple
    context: int
    members: list
    tour: tuple
    tour_cost: float
    path: deque
    failures: int = 0
    version: int = 0

    @property
    def priority(self) -> float:
        return ALPHA ** self.failures / (EPSILON + self.tour_cost)


class _GroupExpansion:
    def __init__(self, scene, model, guide: _Guide, rng, deadline, clock, required=None):
        self.scene = scene
        self.model = model
        self.guide = guide
        self.rng = rng
        self.deadline = deadline
        self.clock = clock
        self.tree = _Tree()
        self.groups = []
        self.by_key = {}
        self.heap = []
        self.required = frozenset(range(len(scene.goals)) if required is None else required)
        self.failed_extensions = 0

    def _push(self, grp):
        # equal priorities favour groups further along the goal sequence
        heapq.heappush(self.heap, (-round(grp.priority, 12), -len(grp.reached), grp.gid, grp.version))

    def _group_for(self, node: int) -> _Group:
        s = self.tree.states[node]
        reached = self.tree.reached[node]
        mkey = self.guide.map_key(s[0], s[1])
        key = (frozenset(reached), mkey)
        grp = self.by_key.get(key)
        if grp is not None:
            grp.members.append(node)
            return grp
        remaining = sorted(self.required.difference(reached))
        context = reached[-1] if reached else START
        anchor = self.guide.mmap.nodes[mkey] if mkey != NOMAD else np.array(s[:2])
        legs = {}
        paths = {}
        for g in remaining:
            legs[g], paths[g] = self.guide.first_leg(anchor, mkey, context, g)
        tour = self.guide.tours.tour(legs)
        path = paths[tour.order[0]] if tour.order else deque()
        grp = _Group(len(self.groups), key, reached, context, [node], tour.order, tour.cost, path)
        self.groups.append(grp)
        self.by_key[key] = grp
        self._push(grp)
        return grp

    def run(self, s_init):
        tree = self.tree
        reached0 = tuple(_goals_at(self.scene, s_init[0], s_init[1], ()))
        root = tree.add(tuple(s_init), None, None, reached0)
        if self.required.issubset(reached0):
            return root
        self._group_for(root)
        scene, model, rng = self.scene, self.model, self.rng
        clearance = self.guide.clearance
        tol2 = TARGET_TOL * TARGET_TOL
        while self.heap:
            if self.clock() >= self.deadline:
                return None
            _, _, gid, version = heapq.heappop(self.heap)
            grp = self.groups[gid]
            if version != grp.version:
                continue
            eta = grp.members[int(rng.integers(len(grp.members)))]
            target, popped = select_target(scene, grp.path, rng, clearance)
            ctl = SteeringController(model)
            cur = eta
            s = tree.states[eta]
            reached = tree.reached[eta]
            success = False
            for _ in range(E_STEPS):
                a = ctl(s, target)
                s2 = simulate(model, s, a)
                if is_state_colliding(scene, model, s2):
                    break
                new = _goals_at(scene, s2[0], s2[1], reached)
                if new:
                    reached = reached + tuple(new)
                cur = tree.add(s2, cur, a, reached)
                self._group_for(cur)
                if new and self.required.issubset(reached):
                    return cur
                s = s2
                if new:
                    # entering a goal only counts when the target came from the group's path
                    success = popped is not None
                    break
                if (s2[0] - target[0]) ** 2 + (s2[1] - target[1]) ** 2 <= tol2:
                    success = True
                    break
            if not success:
                grp.failures += 1
                grp.version += 1
                self.failed_extensions += 1
            self._push(grp)
        return None


def _run_tree(name, scene, model, s_init, guide, rng, t0, budget, seed, stats, clock, required=None):
    expansion = _GroupExpansion(scene, model, guide, rng, t0 + budget, clock, required)
    node = expansion.run(s_init)
    runtime = clock() - t0
    stats = dict(stats, groups=len(expansion.groups), failed_extensions=expansion.failed_extensions)
    tree = expansion.tree
    if node is None:
        return PlanResult("timeout", name, seed, list(tree.reached[-1]) if len(tree) else [], len(tree),
                          runtime, None, stats)
    traj = tree.extract(node, model.dt)
    return PlanResult("solved", name, seed, list(tree.reached[node]), len(tree), runtime, traj, stats)


def _check_start(scene, model, s_init):
    if is_state_colliding(scene, model, s_init):
        raise PlannerError("initial state is in collision")


def plan_memory_guided(scene: Scene, model: RobotModel, s_init, store, budget: float = 10.0,
                       seed: int = 0, clock=time.perf_counter, t0: float | None = None) -> PlanResult:
    """Retrieve per-pair trajectories, build the guided map, expand the tree along tours."""
    from .memory import call_memory

    t0 = clock() if t0 is None else t0
    _check_start(scene, model, s_init)
    rng = np.random.default_rng(seed)
    goals = list(range(len(scene.goals)))
    Lambda, Delta = call_memory(store, scene, s_init, goals)
    mmap = generate_motion_map(scene, s_init[:2], goals, Lambda, rng, model.clearance_radius)
    guide = MemoryGuide(scene, mmap, Delta, model)
    fallbacks = sum(1 for e in mmap.paths.values() if e.fallback)
    stats = {"map_nodes": mmap.size, "map_edges": len(mmap.edges), "map_fallbacks": fallbacks}
    return _run_tree("memory", scene, model, s_init, guide, rng, t0, budget, seed, stats, clock)


def plan_baseline_roadmap(scene: Scene, model: RobotModel, s_init, budget: float = 10.0, seed: int = 0,
                          samples: int = ROADMAP_SAMPLES, clock=time.perf_counter,
                          t0: float | None = None, required=None) -> PlanResult:
    """Uniform roadmap, Dijkstra costs and paths, same group expansion (DROMOS-style).

    `required` restricts the goals that must be visited (all goals by default).
    """
    t0 = clock() if t0 is None else t0
    _check_start(scene, model, s_init)
    rng = np.random.default_rng(seed)
    goals = list(range(len(scene.goals)))
    mmap = generate_uniform_map(scene, s_init[:2], goals, rng, model.clearance_radius, samples)
    guide = RoadmapGuide(scene, mmap, model)
    stats = {"map_nodes": mmap.size, "map_edges": len(mmap.edges),
             "map_fallbacks": sum(1 for e in mmap.paths.values() if e.fallback)}
    return _run_tree("dromos", scene, model, s_init, guide, rng, t0, budget, seed, stats, clock, required)


def nearest_goal(scene: Scene, x: float, y: float, remaining) -> int:
    return min(remaining, key=lambda g: ((scene.goals[g].cx - x) ** 2 + (scene.goals[g].cy - y) ** 2, g))


def plan_sequential_rrt(scene: Scene, model: RobotModel, s_init, budget: float = 10.0, seed: int = 0,
                        clock=time.perf_counter, t0: float | None = None) -> PlanResult:
    """Single-goal RRT legs, always heading for the Euclidean-nearest unvisited goal."""
    t0 = clock() if t0 is None else t0
    deadline = t0 + budget
    _check_start(scene, model, s_init)
    rng = np.random.default_rng(seed)
    n = len(scene.goals)
    clearance = model.clearance_radius
    tree = _Tree()
    reached0 = tuple(_goals_at(scene, s_init[0], s_init[1], ()))
    leaf = tree.add(tuple(s_init), None, None, reached0)
    legs = 0
    tol2 = TARGET_TOL * TARGET_TOL

    def done(node):
        runtime = clock() - t0
        traj = tree.extract(node, model.dt)
        return PlanResult("solved", "seqrrt", seed, list(tree.reached[node]), len(tree), runtime, traj,
                          {"legs": legs})

    if len(reached0) == n:
        return done(leaf)
    while True:
        reached = tree.reached[leaf]
        s = tree.states[leaf]
        goal = nearest_goal(scene, s[0], s[1], [g for g in range(n) if g not in reached])
        gx, gy = scene.goals[goal].cx, scene.goals[goal].cy
        legs += 1
        leg_nodes = [leaf]
        pos = np.empty((1024, 2))
        pos[0] = s[:2]
        finished = None
        while finished is None:
            if clock() >= deadline:
                return PlanResult("timeout", "seqrrt", seed, list(tree.reached[leaf]), len(tree),
                                  clock() - t0, None, {"legs": legs})
            if rng.random() < RRT_GOAL_BIAS:
                target = (gx, gy)
            else:
                target = _random_free_point(scene, rng, clearance)
            m = len(leg_nodes)
            d = (pos[:m, 0] - target[0]) ** 2 + (pos[:m, 1] - target[1]) ** 2
            cur = leg_nodes[int(np.argmin(d))]
            st = tree.states[cur]
            rch = tree.reached[cur]
            ctl = SteeringController(model)
            for _ in range(E_STEPS):
                a = ctl(st, target)
                s2 = simulate(model, st, a)
                if is_state_colliding(scene, model, s2):
                    break
                new = _goals_at(scene, s2[0], s2[1], rch)
                if new:
                    rch = rch + tuple(new)
                cur = tree.add(s2, cur, a, rch)
                if len(leg_nodes) == len(pos):
                    pos = np.vstack([pos, np.empty_like(pos)])
                pos[len(leg_nodes)] = s2[:2]
                leg_nodes.append(cur)
                st = s2
                if goal in rch:
                    finished = cur
                    break
                if (s2[0] - target[0]) ** 2 + (s2[1] - target[1]) ** 2 <= tol2:
                    break
        leaf = finished
        if len(tree.reached[leaf]) == n:
            return done(leaf)


PLANNERS = {
    "memory": plan_memory_guided,
    "dromos": plan_baseline_roadmap,
    "seqrrt": plan_sequential_rrt,
}
