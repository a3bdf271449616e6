"""Experience datasets for the motion memory.

Each problem is one generated scene of a class/layout. For every ordered goal
pair the problem contributes an expert plan and a batch of augmented scenes in
which that plan stays collision-free; the problem index is the cluster label.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from skimage.graph import MCP_Geometric

from .dynamics import RobotModel, SteeringController, Trajectory, make_model, simulate
from .memory import (
    GRID_RESOLUTION,
    MemoryStore,
    PairMemory,
    TrainConfig,
    TrainingError,
    centroids_of,
    retrieve,
    train_encoder,
)
from .planner import plan_baseline_roadmap
from .world import (
    GOAL_KEEP_OUT,
    Obstacle,
    Scene,
    _box_goal_gap,
    _inside,
    _segment_box_dist2_batch,
    generate_scene,
    is_state_colliding,
    rasterize,
    states_colliding,
)

D_CORR = 2.0
J_MAX = 0.5
AUG_RETRIES = 20
PLACE_TRIES = 50
TRAIN_SEED_BASE = 100_000

EXPERT_CELL = 0.25
EXPERT_HARD_CLEARANCE = 0.45
EXPERT_SOFT_CLEARANCE = 1.5
EXPERT_LOOKAHEAD = 4
EXPERT_CRUISES = (1.5, 1.0, 0.6)
EXPERT_FALLBACK_BUDGET = 5.0


class AugmentationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# expert pair plans


def _cost_grid(scene: Scene):
    xmin, ymin, xmax, ymax = scene.bounds
    res = int(round((xmax - xmin) / EXPERT_CELL))
    occ = rasterize(scene, res).cells.astype(bool)
    # the border counts as an obstacle
    padded = np.pad(~occ, 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded)[1:-1, 1:-1] * EXPERT_CELL
    cost = 1.0 + 3.0 * np.maximum(0.0, EXPERT_SOFT_CLEARANCE - dist)
    cost[dist < EXPERT_HARD_CLEARANCE] = np.inf
    return cost, res


def _cell(scene, res, x, y):
    xmin, ymin, xmax, ymax = scene.bounds
    c = min(res - 1, max(0, int((x - xmin) / (xmax - xmin) * res)))
    r = min(res - 1, max(0, int((y - ymin) / (ymax - ymin) * res)))
    return r, c


def grid_paths(scene: Scene, start: int, targets) -> dict:
    """Clearance-weighted grid shortest paths from goal `start` to each target goal.

    Returns {goal: (m, 2) array of cell centres} for reachable targets.
    """
    cost, res = _cost_grid(scene)
    xmin, ymin, xmax, ymax = scene.bounds
    cw = (xmax - xmin) / res
    g0 = scene.goals[start]
    src = _cell(scene, res, g0.cx, g0.cy)
    mcp = MCP_Geometric(cost)
    cum, _ = mcp.find_costs([src])
    out = {}
    for j in targets:
        g = scene.goals[j]
        dst = _cell(scene, res, g.cx, g.cy)
        if not math.isfinite(cum[dst]):
            continue
        cells = np.asarray(mcp.traceback(dst), dtype=float)
        xy = np.column_stack([xmin + cw * (cells[:, 1] + 0.5), ymin + cw * (cells[:, 0] + 0.5)])
        xy[0] = (g0.cx, g0.cy)
        xy[-1] = (g.cx, g.cy)
        out[j] = xy
    return out


def track_path(scene: Scene, model: RobotModel, path, goal: int, cruise: float | None = None):
    """Follow a planar path from its first point until the goal region is entered.

    Returns the trajectory, or None on collision or when the step budget runs out.
    """
    path = np.asarray(path, dtype=float)
    region = scene.goals[goal]
    ahead = path[min(len(path) - 1, EXPERT_LOOKAHEAD)]
    s = model.initial_state(path[0, 0], path[0, 1], math.atan2(ahead[1] - path[0, 1], ahead[0] - path[0, 0]))
    if is_state_colliding(scene, model, s):
        return None
    ctl_model = model if cruise is None else replace(model, cruise=cruise)
    ctl = SteeringController(ctl_model)
    length = float(np.sum(np.hypot(*np.diff(path, axis=0).T)))
    max_steps = int(4 * length / (ctl_model.cruise * model.dt)) + 200
    states, actions = [s], []
    idx = 0
    for _ in range(max_steps):
        window = path[idx:idx + 3 * EXPERT_LOOKAHEAD]
        idx += int(np.argmin(np.hypot(window[:, 0] - s[0], window[:, 1] - s[1])))
        target = path[min(len(path) - 1, idx + EXPERT_LOOKAHEAD)]
        a = ctl(s, target)
        s = simulate(model, s, a)
        if is_state_colliding(scene, model, s):
            return None
        states.append(s)
        actions.append(a)
        if region.contains(s[0], s[1]):
            return Trajectory(states, actions, model.dt)
    return None


def expert_pair_plans(scene: Scene, model: RobotModel, start: int, targets, seed: int = 0) -> dict:
    """Plans from goal `start` to each target goal; {goal: Trajectory}, failures omitted."""
    targets = [j for j in targets if j != start]
    paths = grid_paths(scene, start, targets)
    plans = {}
    for j in targets:
        plan = None
        if j in paths:
            for cruise in EXPERT_CRUISES:
                plan = track_path(scene, model, paths[j], j, cruise)
                if plan is not None:
                    break
        if plan is None:
            g = scene.goals[start]
            res = plan_baseline_roadmap(scene, model, model.initial_state(g.cx, g.cy, 0.0),
                                        budget=EXPERT_FALLBACK_BUDGET, seed=seed, required={j})
            plan = res.trajectory if res.solved else None
        if plan is not None:
            plans[j] = plan
    return plans


# ---------------------------------------------------------------------------
# augmentation


def _corridor_distance(obstacles: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Distance from each box to the plan polyline."""
    if len(positions) == 1:
        positions = np.vstack([positions, positions])
    px, py = positions[:-1, 0], positions[:-1, 1]
    qx, qy = positions[1:, 0], positions[1:, 1]
    out = np.empty(len(obstacles))
    for k, (ox, oy, hw, hh) in enumerate(obstacles):
        out[k] = math.sqrt(float(np.min(_segment_box_dist2_batch(px, py, qx, qy, ox, oy, hw, hh))))
    return out


def _hits_plan(scene, model, states, o: Obstacle) -> bool:
    reach = model.L * (1 + model.N * model.H if model.kind == "snake" else 1.5) + o.hw + o.hh
    near = (np.abs(states[:, 0] - o.cx) <= reach) & (np.abs(states[:, 1] - o.cy) <= reach)
    if not near.any():
        return False
    box = np.array([[o.cx, o.cy, o.hw, o.hh]])
    return bool(states_colliding(scene, model, states[near], obstacles=box, check_bounds=False).any())


def augment(scene: Scene, plan: Trajectory, count: int, rng=None, model: RobotModel | None = None,
            d_corr: float = D_CORR, j_max: float = J_MAX, retries: int = AUG_RETRIES) -> list:
    """Scenes that keep `plan` collision-free.

    Obstacles within `d_corr` of the plan move by at most `j_max`; the rest are
    re-placed uniformly, clear of the plan footprint and of the goals.
    """
    model = model or make_model("car")
    rng = np.random.default_rng(rng)
    states = np.asarray(plan.states, dtype=float)
    if states.shape[1] != model.state_dim:
        raise ValueError("plan states do not match the robot model")
    if states_colliding(scene, model, states).any():
        raise ValueError("plan is not collision-free in the source scene")
    obs = scene.obstacle_array
    if len(obs) == 0:
        return [scene.with_obstacles((), id=f"{scene.id}-aug{k}") for k in range(count)]
    near = _corridor_distance(obs, states[:, :2]) <= d_corr
    xmin, ymin, xmax, ymax = scene.bounds
    out = []
    for k in range(count):
        for _ in range(retries):
            placed = []
            for o, close in zip(scene.obstacles, near):
                if close:
                    gap = min(_box_goal_gap(o, scene.goals), GOAL_KEEP_OUT)
                    new = o
                    for _ in range(PLACE_TRIES):
                        r = j_max * math.sqrt(rng.random())
                        a = 2 * math.pi * rng.random()
                        cand = Obstacle(o.cx + r * math.cos(a), o.cy + r * math.sin(a), o.hw, o.hh)
                        if (_inside(cand, scene.bounds) and _box_goal_gap(cand, scene.goals) >= gap
                                and not _hits_plan(scene, model, states, cand)):
                            new = cand
                            break
                    placed.append(new)
                else:
                    new = None
                    for _ in range(PLACE_TRIES):
                        cand = Obstacle(rng.uniform(xmin + o.hw, xmax - o.hw), rng.uniform(ymin + o.hh, ymax - o.hh),
                                        o.hw, o.hh)
                        if _box_goal_gap(cand, scene.goals) > GOAL_KEEP_OUT and not _hits_plan(scene, model, states, cand):
                            new = cand
                            break
                    if new is None:
                        break
                    placed.append(new)
            if len(placed) != len(scene.obstacles):
                continue
            aug = scene.with_obstacles(placed, id=f"{scene.id}-aug{k}")
            if not states_colliding(aug, model, states).any():
                out.append(aug)
                break
        else:
            raise AugmentationError(f"could not augment {scene.id or 'scene'} after {retries} retries")
    return out


# ---------------------------------------------------------------------------
# datasets


@dataclass
class ExperienceRecord:
    problem: int
    scene: Scene
    plan: Trajectory
    train_scenes: list
    heldout_scenes: list


@dataclass
class ExperienceDataset:
    scene_class: str
    layout: str
    n_goals: int
    pairs: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.pairs)


def build_dataset(scene_class: str, layout: str, problems: int = 20, augmentations: int = 25,
                  holdout: float = 0.2, seed: int = 0, model: RobotModel | None = None,
                  pairs=None, progress=None, scenes=None) -> ExperienceDataset:
    """Expert plans and augmentations for every ordered goal pair.

    Problem p uses the scene generated with seed ``TRAIN_SEED_BASE + 1000 * seed + p``
    so training scenes never coincide with benchmark seeds below that base, unless
    explicit `scenes` are given (then `problems` is ignored).
    Each problem's last ``round(holdout * augmentations)`` augmentations are held out.
    """
    if not 0 <= holdout < 1:
        raise ValueError("holdout must be in [0, 1)")
    model = model or make_model("car")
    n_hold = int(round(holdout * augmentations))
    if scenes is None:
        scenes = [generate_scene(scene_class, layout, TRAIN_SEED_BASE + 1000 * seed + p) for p in range(problems)]
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no training scenes")
    problems = len(scenes)
    data = None
    for p, scene in enumerate(scenes):
        n = len(scene.goals)
        if data is not None and n != data.n_goals:
            raise ValueError(f"scene {p} has {n} goals, expected {data.n_goals}")
        if data is None:
            data = ExperienceDataset(scene_class, layout, n)
            wanted = [(i, j) for i in range(n) for j in range(n) if i != j] if pairs is None else list(pairs)
            data.pairs = {k: [] for k in wanted}
        for i in sorted({i for i, _ in wanted}):
            plans = expert_pair_plans(scene, model, i, [j for a, j in wanted if a == i], seed=p)
            for j in [j for a, j in wanted if a == i]:
                if j not in plans:
                    data.skipped.append((i, j, p, "no expert plan"))
                    continue
                rng = np.random.default_rng([seed, p, i, j])
                try:
                    augs = augment(scene, plans[j], augmentations, rng, model)
                except AugmentationError as exc:
                    data.skipped.append((i, j, p, str(exc)))
                    continue
                cut = augmentations - n_hold
                data.pairs[(i, j)].append(ExperienceRecord(p, scene, plans[j], augs[:cut], augs[cut:]))
        if progress:
            progress(p + 1, problems)
    return data


def train_store(data: ExperienceDataset, config: TrainConfig | None = None, resolution: int = GRID_RESOLUTION,
                robot: str = "car", dt: float = 0.05) -> MemoryStore:
    """One encoder per goal pair; cluster i is problem record i (original plus training augmentations)."""
    cfg = config or TrainConfig()
    pairs = {}
    for (i, j), records in sorted(data.pairs.items()):
        if len(records) < 2:
            raise TrainingError(f"goal pair ({i}, {j}) has {len(records)} usable problems, need 2")
        X, labels = [], []
        for c, rec in enumerate(records):
            for sc in [rec.scene, *rec.train_scenes]:
                X.append(rasterize(sc, resolution).flat())
                labels.append(c)
        X = np.asarray(X)
        labels = np.asarray(labels, dtype=np.int64)
        pair_cfg = replace(cfg, seed=cfg.seed * 1_000_003 + 1000 * (i + 1) + (j + 1))
        enc, losses = train_encoder(X, labels, pair_cfg)
        E = enc(X)
        pairs[(i, j)] = PairMemory(enc, centroids_of(E, labels, len(records)), [r.plan for r in records],
                                   E, labels, losses)
    meta = {
        "resolution": resolution,
        "layout": data.layout,
        "scene_class": data.scene_class,
        "robot": robot,
        "dt": dt,
        "n_goals": data.n_goals,
        "margin": cfg.margin,
        "embed_dim": cfg.dim,
    }
    return MemoryStore(meta, pairs)


@dataclass
class RetrievalReport:
    queries: int
    own_cluster: int
    collision_free: int

    @property
    def accuracy(self) -> float:
        return self.own_cluster / self.queries if self.queries else math.nan

    @property
    def free_rate(self) -> float:
        return self.collision_free / self.queries if self.queries else math.nan


def evaluate_retrieval(store: MemoryStore, data: ExperienceDataset, model: RobotModel | None = None) -> RetrievalReport:
    """Query every held-out augmentation; count own-cluster hits and collision-free retrieved plans."""
    model = model or make_model("car")
    q = hit = free = 0
    for pair, records in sorted(data.pairs.items()):
        pm = store.pair(*pair)
        for c, rec in enumerate(records):
            for sc in rec.heldout_scenes:
                plan, _ = retrieve(store, pair, rasterize(sc, store.resolution))
                q += 1
                hit += plan is pm.plans[c]
                free += not states_colliding(sc, model, plan.states).any()
    return RetrievalReport(q, hit, free)
