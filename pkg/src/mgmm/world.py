"""Scenes, collision checking, occupancy grids and procedural scene generators."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dynamics import RobotModel

WORLD_SIZE = 30.0
GOAL_RADIUS = 0.5
# obstacles keep this distance from every goal centre so the robot can sit on it
GOAL_KEEP_OUT = 1.5
SCENE_CLASSES = ("random", "curve", "maze", "storage")
LAYOUTS = {"2x2": 2, "3x3": 3, "4x4": 4}
EDGE_STEP = 0.1
INDEX_CELL = 1.0


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Obstacle:
    cx: float
    cy: float
    hw: float
    hh: float

    def __post_init__(self):
        if self.hw <= 0 or self.hh <= 0:
            raise ValueError("obstacle half-extents must be positive")

    @property
    def xmin(self):
        return self.cx - self.hw

    @property
    def xmax(self):
        return self.cx + self.hw

    @property
    def ymin(self):
        return self.cy - self.hh

    @property
    def ymax(self):
        return self.cy + self.hh


@dataclass(frozen=True)
class GoalRegion:
    cx: float
    cy: float
    radius: float = GOAL_RADIUS

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("goal radius must be positive")

    def contains(self, x: float, y: float) -> bool:
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.radius ** 2


@dataclass(frozen=True)
class OccupancyGrid:
    """Binary grid; row r spans y, column c spans x, row 0 at the bottom."""

    resolution: int
    cells: np.ndarray

    def flat(self) -> np.ndarray:
        return self.cells.reshape(-1).astype(np.float64)


@dataclass(frozen=True, eq=False)
class Scene:
    bounds: tuple
    obstacles: tuple
    goals: tuple
    id: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "goals", tuple(self.goals))

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.bounds, self.obstacles, self.goals, self.id) == (
            other.bounds, other.obstacles, other.goals, other.id)

    def __hash__(self):
        return hash((self.bounds, self.obstacles, self.goals, self.id))

    @property
    def obstacle_array(self) -> np.ndarray:
        arr = self._cache.get("arr")
        if arr is None:
            arr = np.array([(o.cx, o.cy, o.hw, o.hh) for o in self.obstacles], dtype=float).reshape(-1, 4)
            self._cache["arr"] = arr
        return arr

    def goal_containing(self, x: float, y: float):
        for i, g in enumerate(self.goals):
            if g.contains(x, y):
                return i
        return None

    def index(self, reach: float) -> "_ObstacleIndex":
        key = ("index", round(reach, 9))
        idx = self._cache.get(key)
        if idx is None:
            idx = _ObstacleIndex(self, reach)
            self._cache[key] = idx
        return idx

    def with_obstacles(self, obstacles, id=None) -> "Scene":
        return Scene(self.bounds, tuple(obstacles), self.goals, self.id if id is None else id)

    # serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "bounds": list(self.bounds),
            "obstacles": [[o.cx, o.cy, o.hw, o.hh] for o in self.obstacles],
            "goals": [[g.cx, g.cy, g.radius] for g in self.goals],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            bounds=tuple(d["bounds"]),
            obstacles=tuple(Obstacle(*map(float, o)) for o in d["obstacles"]),
            goals=tuple(GoalRegion(*map(float, g)) for g in d["goals"]),
            id=str(d.get("id", "")),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def load_scene(path) -> Scene:
    return Scene.from_dict(json.loads(Path(path).read_text()))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(scene.to_json() + "\n")


class _ObstacleIndex:
    """Uniform bucket grid: each cell lists obstacles within `reach` of the cell."""

    def __init__(self, scene: Scene, reach: float):
        xmin, ymin, xmax, ymax = scene.bounds
        self.xmin, self.ymin = xmin, ymin
        self.nx = max(1, int(math.ceil((xmax - xmin) / INDEX_CELL)))
        self.ny = max(1, int(math.ceil((ymax - ymin) / INDEX_CELL)))
        self.obs = [(o.cx, o.cy, o.hw, o.hh) for o in scene.obstacles]
        buckets = [[] for _ in range(self.nx * self.ny)]
        for k, (cx, cy, hw, hh) in enumerate(self.obs):
            c0 = max(0, int(math.floor((cx - hw - reach - xmin) / INDEX_CELL)))
            c1 = min(self.nx - 1, int(math.floor((cx + hw + reach - xmin) / INDEX_CELL)))
            r0 = max(0, int(math.floor((cy - hh - reach - ymin) / INDEX_CELL)))
            r1 = min(self.ny - 1, int(math.floor((cy + hh + reach - ymin) / INDEX_CELL)))
            for c in range(c0, c1 + 1):
                for r in range(r0, r1 + 1):
                    buckets[c * self.ny + r].append(self.obs[k])
        self.buckets = [tuple(b) for b in buckets]
        self.empty = ()

    def query(self, x: float, y: float):
        c = int((x - self.xmin) // INDEX_CELL)
        r = int((y - self.ymin) // INDEX_CELL)
        if 0 <= c < self.nx and 0 <= r < self.ny:
            return self.buckets[c * self.ny + r]
        return self.empty


# ---------------------------------------------------------------------------
# robot footprints


def car_body(model: RobotModel, s) -> tuple:
    """(centre x, centre y, cos, sin, half length, half width) of the car rectangle."""
    c, sn = math.cos(s[2]), math.sin(s[2])
    a = model.half_length
    return (s[0] + a * c, s[1] + a * sn, c, sn, a, model.half_width)


def snake_segments(model: RobotModel, s) -> list:
    """Head segment followed by one segment per trailer, as (px, py, qx, qy)."""
    x, y, th = s[0], s[1], s[2]
    segs = [(x, y, x + model.L * math.cos(th), y + model.L * math.sin(th))]
    px, py = x, y
    for t in s[5:5 + model.N]:
        qx, qy = px - model.H * math.cos(t), py - model.H * math.sin(t)
        segs.append((qx, qy, px, py))
        px, py = qx, qy
    return segs


def _obb_hits_box(cx, cy, c, s, a, b, ox, oy, hw, hh) -> bool:
    ac, as_ = abs(c), abs(s)
    dx, dy = ox - cx, oy - cy
    if abs(dx) > hw + a * ac + b * as_:
        return False
    if abs(dy) > hh + a * as_ + b * ac:
        return False
    if abs(dx * c + dy * s) > a + hw * ac + hh * as_:
        return False
    if abs(-dx * s + dy * c) > b + hw * as_ + hh * ac:
        return False
    return True


def _point_box_dist2(px, py, ox, oy, hw, hh) -> float:
    dx = abs(px - ox) - hw
    dy = abs(py - oy) - hh
    dx = dx if dx > 0.0 else 0.0
    dy = dy if dy > 0.0 else 0.0
    return dx * dx + dy * dy


def _point_segment_dist2(px, py, ax, ay, bx, by) -> float:
    ux, uy = bx - ax, by - ay
    den = ux * ux + uy * uy
    t = 0.0 if den == 0.0 else ((px - ax) * ux + (py - ay) * uy) / den
    t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
    ex, ey = ax + t * ux - px, ay + t * uy - py
    return ex * ex + ey * ey


def _segment_crosses_box(px, py, qx, qy, ox, oy, hw, hh) -> bool:
    # Liang-Barsky clipping against the closed box
    t0, t1 = 0.0, 1.0
    dx, dy = qx - px, qy - py
    for p, q in ((-dx, px - (ox - hw)), (dx, (ox + hw) - px), (-dy, py - (oy - hh)), (dy, (oy + hh) - py)):
        if p == 0.0:
            if q < 0.0:
                return False
        else:
            r = q / p
            if p < 0.0:
                if r > t1:
                    return False
                if r > t0:
                    t0 = r
            else:
                if r < t0:
                    return False
                if r < t1:
                    t1 = r
    return True


def segment_box_dist2(px, py, qx, qy, ox, oy, hw, hh) -> float:
    if _segment_crosses_box(px, py, qx, qy, ox, oy, hw, hh):
        return 0.0
    d = min(_point_box_dist2(px, py, ox, oy, hw, hh), _point_box_dist2(qx, qy, ox, oy, hw, hh))
    for cx in (ox - hw, ox + hw):
        for cy in (oy - hh, oy + hh):
            d = min(d, _point_segment_dist2(cx, cy, px, py, qx, qy))
    return d


def is_state_colliding(scene: Scene, model: RobotModel, s) -> bool:
    """True when the robot body at `s` touches an obstacle or leaves the bounds."""
    xmin, ymin, xmax, ymax = scene.bounds
    if model.kind == "car":
        cx, cy, c, sn, a, b = car_body(model, s)
        ex = a * abs(c) + b * abs(sn)
        ey = a * abs(sn) + b * abs(c)
        if cx - ex < xmin or cx + ex > xmax or cy - ey < ymin or cy + ey > ymax:
            return True
        for ox, oy, hw, hh in scene.index(math.hypot(a, b)).query(cx, cy):
            if _obb_hits_box(cx, cy, c, sn, a, b, ox, oy, hw, hh):
                return True
        return False

    r = model.cap_radius
    r2 = r * r
    reach = max(model.L, model.H) / 2.0 + r
    index = scene.index(reach)
    for px, py, qx, qy in snake_segments(model, s):
        if (min(px, qx) - r < xmin or max(px, qx) + r > xmax
                or min(py, qy) - r < ymin or max(py, qy) + r > ymax):
            return True
        for ox, oy, hw, hh in index.query(0.5 * (px + qx), 0.5 * (py + qy)):
            if segment_box_dist2(px, py, qx, qy, ox, oy, hw, hh) <= r2:
                return True
    return False


def states_colliding(scene: Scene, model: RobotModel, states, obstacles=None, check_bounds=True) -> np.ndarray:
    """Vectorized collision flags for many states (optionally against a subset of obstacles)."""
    S = np.asarray(states, dtype=float).reshape(-1, model.state_dim)
    obs = scene.obstacle_array if obstacles is None else np.asarray(obstacles, dtype=float).reshape(-1, 4)
    hit = np.zeros(len(S), dtype=bool)
    xmin, ymin, xmax, ymax = scene.bounds
    if model.kind == "car":
        c, sn = np.cos(S[:, 2]), np.sin(S[:, 2])
        a, b = model.half_length, model.half_width
        cx, cy = S[:, 0] + a * c, S[:, 1] + a * sn
        ac, as_ = np.abs(c), np.abs(sn)
        ex, ey = a * ac + b * as_, a * as_ + b * ac
        if check_bounds:
            hit |= (cx - ex < xmin) | (cx + ex > xmax) | (cy - ey < ymin) | (cy + ey > ymax)
        for ox, oy, hw, hh in obs:
            dx, dy = ox - cx, oy - cy
            sep = (np.abs(dx) > hw + ex) | (np.abs(dy) > hh + ey)
            sep |= np.abs(dx * c + dy * sn) > a + hw * ac + hh * as_
            sep |= np.abs(-dx * sn + dy * c) > b + hw * as_ + hh * ac
            hit |= ~sep
        return hit

    r = model.cap_radius
    segs = _snake_segments_batch(model, S)
    for px, py, qx, qy in segs:
        if check_bounds:
            hit |= (np.minimum(px, qx) - r < xmin) | (np.maximum(px, qx) + r > xmax)
            hit |= (np.minimum(py, qy) - r < ymin) | (np.maximum(py, qy) + r > ymax)
        for ox, oy, hw, hh in obs:
            hit |= _segment_box_dist2_batch(px, py, qx, qy, ox, oy, hw, hh) <= r * r
    return hit


def _snake_segments_batch(model, S):
    x, y, th = S[:, 0], S[:, 1], S[:, 2]
    segs = [(x, y, x + model.L * np.cos(th), y + model.L * np.sin(th))]
    px, py = x, y
    for i in range(model.N):
        t = S[:, 5 + i]
        qx, qy = px - model.H * np.cos(t), py - model.H * np.sin(t)
        segs.append((qx, qy, px, py))
        px, py = qx, qy
    return segs


def _segment_box_dist2_batch(px, py, qx, qy, ox, oy, hw, hh):
    # crossing test by Liang-Barsky on arrays
    dx, dy = qx - px, qy - py
    t0 = np.zeros_like(px)
    t1 = np.ones_like(px)
    ok = np.ones(px.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for p, q in ((-dx, px - (ox - hw)), (dx, (ox + hw) - px), (-dy, py - (oy - hh)), (dy, (oy + hh) - py)):
            zero = p == 0.0
            ok &= ~(zero & (q < 0.0))
            r = np.where(zero, 0.0, q / np.where(zero, 1.0, p))
            neg = (p < 0.0) & ~zero
            pos = (p > 0.0) & ~zero
            t0 = np.where(neg, np.maximum(t0, r), t0)
            t1 = np.where(pos, np.minimum(t1, r), t1)
    crosses = ok & (t0 <= t1)

    def pbox(x, y):
        ddx = np.maximum(np.abs(x - ox) - hw, 0.0)
        ddy = np.maximum(np.abs(y - oy) - hh, 0.0)
        return ddx * ddx + ddy * ddy

    d = np.minimum(pbox(px, py), pbox(qx, qy))
    den = dx * dx + dy * dy
    for cx in (ox - hw, ox + hw):
        for cy in (oy - hh, oy + hh):
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(den > 0, ((cx - px) * dx + (cy - py) * dy) / np.where(den > 0, den, 1.0), 0.0)
            t = np.clip(t, 0.0, 1.0)
            ex, ey = px + t * dx - cx, py + t * dy - cy
            d = np.minimum(d, ex * ex + ey * ey)
    return np.where(crosses, 0.0, d)


# ---------------------------------------------------------------------------
# point / segment checks used by the motion map


def point_free(scene: Scene, x: float, y: float, clearance: float = 0.0) -> bool:
    xmin, ymin, xmax, ymax = scene.bounds
    if x - clearance < xmin or x + clearance > xmax or y - clearance < ymin or y + clearance > ymax:
        return False
    c2 = clearance * clearance
    for ox, oy, hw, hh in scene.index(clearance).query(x, y):
        if _point_box_dist2(x, y, ox, oy, hw, hh) <= c2:
            return False
    return True


def points_free(scene: Scene, pts, clearance: float = 0.0) -> np.ndarray:
    P = np.asarray(pts, dtype=float).reshape(-1, 2)
    xmin, ymin, xmax, ymax = scene.bounds
    x, y = P[:, 0], P[:, 1]
    free = (x - clearance >= xmin) & (x + clearance <= xmax) & (y - clearance >= ymin) & (y + clearance <= ymax)
    c2 = clearance * clearance
    for ox, oy, hw, hh in scene.obstacle_array:
        near = (np.abs(x - ox) <= hw + clearance) & (np.abs(y - oy) <= hh + clearance)
        if not near.any():
            continue
        dx = np.maximum(np.abs(x[near] - ox) - hw, 0.0)
        dy = np.maximum(np.abs(y[near] - oy) - hh, 0.0)
        blocked = np.zeros_like(free)
        blocked[near] = dx * dx + dy * dy <= c2
        free &= ~blocked
    return free


def subdivide(p, q, step: float = EDGE_STEP) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = max(1, int(math.ceil(float(np.hypot(*(q - p))) / step)))
    t = np.arange(n + 1) / n
    return p[None, :] + t[:, None] * (q - p)[None, :]


def segment_free(scene: Scene, p, q, clearance: float = 0.0, step: float = EDGE_STEP) -> bool:
    return bool(points_free(scene, subdivide(p, q, step), clearance).all())


def segments_free(scene: Scene, P, Q, clearance: float = 0.0, step: float = EDGE_STEP) -> np.ndarray:
    """Subdivision collision check for many segments at once."""
    P = np.asarray(P, dtype=float).reshape(-1, 2)
    Q = np.asarray(Q, dtype=float).reshape(-1, 2)
    if len(P) == 0:
        return np.zeros(0, dtype=bool)
    lengths = np.hypot(*(Q - P).T)
    counts = np.maximum(1, np.ceil(lengths / step).astype(int))
    owner = np.repeat(np.arange(len(P)), counts + 1)
    starts = np.concatenate(([0], np.cumsum(counts + 1)[:-1]))
    k = np.arange(len(owner)) - starts[owner]
    t = k / counts[owner]
    pts = P[owner] + t[:, None] * (Q - P)[owner]
    ok = points_free(scene, pts, clearance)
    bad = np.zeros(len(P), dtype=bool)
    np.logical_or.at(bad, owner, ~ok)
    return ~bad


# ---------------------------------------------------------------------------
# rasterization


def rasterize(scene: Scene, resolution: int) -> OccupancyGrid:
    """Cell (r, c) is 1 iff its rectangle overlaps an obstacle with positive area."""
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    xmin, ymin, xmax, ymax = scene.bounds
    xs = xmin + (xmax - xmin) * np.arange(resolution + 1) / resolution
    ys = ymin + (ymax - ymin) * np.arange(resolution + 1) / resolution
    cells = np.zeros((resolution, resolution), dtype=np.uint8)
    for ox, oy, hw, hh in scene.obstacle_array:
        cols = (xs[:-1] < ox + hw) & (ox - hw < xs[1:])
        rows = (ys[:-1] < oy + hh) & (oy - hh < ys[1:])
        if cols.any() and rows.any():
            cells[np.ix_(rows, cols)] = 1
    return OccupancyGrid(resolution, cells)


def inflated_free_grid(scene: Scene, resolution: int, clearance: float) -> np.ndarray:
    """Boolean grid of cell centres that are at least `clearance` away from obstacles."""
    xmin, ymin, xmax, ymax = scene.bounds
    cw = (xmax - xmin) / resolution
    ch = (ymax - ymin) / resolution
    gx = xmin + cw * (np.arange(resolution) + 0.5)
    gy = ymin + ch * (np.arange(resolution) + 0.5)
    X, Y = np.meshgrid(gx, gy)
    free = points_free(scene, np.column_stack([X.ravel(), Y.ravel()]), clearance)
    return free.reshape(resolution, resolution)


def cell_of(scene: Scene, resolution: int, x: float, y: float) -> tuple:
    xmin, ymin, xmax, ymax = scene.bounds
    c = min(resolution - 1, max(0, int((x - xmin) / (xmax - xmin) * resolution)))
    r = min(resolution - 1, max(0, int((y - ymin) / (ymax - ymin) * resolution)))
    return r, c


def goals_connected(scene: Scene, resolution: int = 64, clearance: float = 0.0) -> bool:
    if clearance > 0:
        free = inflated_free_grid(scene, resolution, clearance)
    else:
        free = rasterize(scene, resolution).cells == 0
    labels, _ = ndimage.label(free)
    ids = {labels[cell_of(scene, resolution, g.cx, g.cy)] for g in scene.goals}
    return len(ids) == 1 and 0 not in ids


# ---------------------------------------------------------------------------
# procedural generation


def goal_positions(layout: str, size: float = WORLD_SIZE) -> list:
    n = LAYOUTS[layout]
    step = size / n
    return [((c + 0.5) * step, (r + 0.5) * step) for r in range(n) for c in range(n)]


def _box_goal_gap(o: Obstacle, goals) -> float:
    return min(math.sqrt(_point_box_dist2(g.cx, g.cy, o.cx, o.cy, o.hw, o.hh)) for g in goals)


def _clear_of_goals(o: Obstacle, goals, keep_out: float = GOAL_KEEP_OUT) -> bool:
    return _box_goal_gap(o, goals) > keep_out


def _inside(o: Obstacle, bounds) -> bool:
    xmin, ymin, xmax, ymax = bounds
    return o.xmin >= xmin and o.xmax <= xmax and o.ymin >= ymin and o.ymax <= ymax


def _random_obstacles(rng, goals, bounds, count=45, side=(0.8, 2.5)):
    xmin, ymin, xmax, ymax = bounds
    obs = []
    tries = 0
    while len(obs) < count:
        tries += 1
        if tries > 200 * count:
            raise SceneGenerationError("could not place random obstacles clear of goals")
        w, h = rng.uniform(*side, size=2)
        cx = rng.uniform(xmin + w / 2, xmax - w / 2)
        cy = rng.uniform(ymin + h / 2, ymax - h / 2)
        o = Obstacle(float(cx), float(cy), float(w / 2), float(h / 2))
        if _clear_of_goals(o, goals):
            obs.append(o)
    return obs


def _curve_obstacles(rng, goals, bounds, n):
    xmin, ymin, xmax, ymax = bounds
    size = xmax - xmin
    step = size / n
    obs = []
    bands = [ymin + k * step for k in range(1, n)] + [ymin + 0.5 * step * rng.uniform(0.6, 1.0)]
    for band in bands:
        for _ in range(2):
            radius = rng.uniform(6.0, 10.0)
            span = rng.uniform(1.0, 1.8)
            xc = rng.uniform(xmin + 4.0, xmax - 4.0)
            bulge = rng.choice([-1.0, 1.0])
            yc = band - bulge * radius * math.cos(span / 2) + rng.uniform(-1.0, 1.0)
            n_blocks = int(radius * span / 0.9) + 1
            gap_at = rng.integers(0, n_blocks)
            for b in range(n_blocks):
                if abs(b - gap_at) <= 1:
                    continue
                ang = math.pi / 2 - span / 2 + span * b / max(1, n_blocks - 1)
                bx = xc + radius * math.cos(ang)
                by = yc + bulge * radius * math.sin(ang)
                half = rng.uniform(0.4, 0.6)
                o = Obstacle(float(bx), float(by), float(half), float(half))
                if _inside(o, bounds) and _clear_of_goals(o, goals):
                    obs.append(o)
    obs += _random_obstacles(rng, goals, bounds, count=8, side=(0.8, 1.5))
    return obs


def _split_wall(o: Obstacle, goals, keep_out=GOAL_KEEP_OUT, horizontal=True):
    """Cut holes in a wall wherever it would come too close to a goal."""
    if _clear_of_goals(o, goals, keep_out):
        return [o]
    lo, hi = (o.xmin, o.xmax) if horizontal else (o.ymin, o.ymax)
    cuts = []
    for g in goals:
        across = abs((g.cy - o.cy) if horizontal else (g.cx - o.cx))
        thick = o.hh if horizontal else o.hw
        if across - thick > keep_out:
            continue
        half = math.sqrt(max(0.0, keep_out ** 2 - max(0.0, across - thick) ** 2)) + 1e-6
        along = g.cx if horizontal else g.cy
        cuts.append((along - half, along + half))
    pieces = [(lo, hi)]
    for a, b in cuts:
        nxt = []
        for p, q in pieces:
            if b <= p or a >= q:
                nxt.append((p, q))
                continue
            if a > p:
                nxt.append((p, a))
            if b < q:
                nxt.append((b, q))
        pieces = nxt
    out = []
    for p, q in pieces:
        if q - p < 0.3:
            continue
        if horizontal:
            out.append(Obstacle((p + q) / 2, o.cy, (q - p) / 2, o.hh))
        else:
            out.append(Obstacle(o.cx, (p + q) / 2, o.hw, (q - p) / 2))
    return out


def _maze_obstacles(rng, goals, bounds, n, wall=0.3):
    # walls on a (3n x 3n) lattice so every goal sits in a cell centre
    xmin, ymin, xmax, ymax = bounds
    cells = 3 * n
    cw = (xmax - xmin) / cells
    half_t = wall / 2
    walls = []  # (horizontal, line index, from cell, to cell, door cells)

    def divide(c0, c1, r0, r1):
        w, h = c1 - c0, r1 - r0
        if w < 3 and h < 3:
            return
        if w > h:
            horizontal = False
        elif h > w:
            horizontal = True
        else:
            horizontal = bool(rng.integers(0, 2))
        if horizontal:
            line = int(rng.integers(r0 + 1, r1))
            length = w
            doors = {int(rng.integers(c0, c1))}
            if length >= 4:
                doors.add(int(rng.integers(c0, c1)))
            walls.append((True, line, c0, c1, doors))
            divide(c0, c1, r0, line)
            divide(c0, c1, line, r1)
        else:
            line = int(rng.integers(c0 + 1, c1))
            doors = {int(rng.integers(r0, r1))}
            if h >= 4:
                doors.add(int(rng.integers(r0, r1)))
            walls.append((False, line, r0, r1, doors))
            divide(c0, line, r0, r1)
            divide(line, c1, r0, r1)

    divide(0, cells, 0, cells)
    obs = []
    for horizontal, line, a, b, doors in walls:
        run = []
        for k in range(a, b + 1):
            if k < b and k not in doors:
                run.append(k)
                continue
            if run:
                lo, hi = run[0] * cw, (run[-1] + 1) * cw
                lo = lo - half_t if run[0] > 0 else lo
                hi = hi + half_t if run[-1] + 1 < cells else hi
                if horizontal:
                    o = Obstacle(xmin + (lo + hi) / 2, ymin + line * cw, (hi - lo) / 2, half_t)
                else:
                    o = Obstacle(xmin + line * cw, ymin + (lo + hi) / 2, half_t, (hi - lo) / 2)
                obs.extend(_split_wall(o, goals, horizontal=horizontal))
                run = []
    return obs


def _storage_obstacles(rng, goals, bounds, n):
    xmin, ymin, xmax, ymax = bounds
    obs = []
    shelf_h = 0.8
    pitch = 3.6
    y = ymin + rng.uniform(2.0, 3.0)
    while y < ymax - 2.0:
        x = xmin + rng.uniform(1.5, 3.0)
        while x < xmax - 2.5:
            length = rng.uniform(3.0, 6.0)
            length = min(length, xmax - 1.5 - x)
            if length > 1.0:
                o = Obstacle(x + length / 2, y, length / 2, shelf_h / 2)
                obs.extend(_split_wall(o, goals, horizontal=True))
            x += length + rng.uniform(2.5, 3.5)
        y += pitch
    return obs


def generate_scene(scene_class: str, goal_layout: str, seed: int, max_retries: int = 50) -> Scene:
    """Procedurally generate a scene; goals are fixed by the layout, obstacles by seed."""
    if scene_class not in SCENE_CLASSES:
        raise ValueError(f"unknown scene class {scene_class!r}")
    if goal_layout not in LAYOUTS:
        raise ValueError(f"unknown goal layout {goal_layout!r}")
    bounds = (0.0, 0.0, WORLD_SIZE, WORLD_SIZE)
    goals = tuple(GoalRegion(x, y, GOAL_RADIUS) for x, y in goal_positions(goal_layout))
    n = LAYOUTS[goal_layout]
    for attempt in range(max_retries):
        rng = np.random.default_rng([int(seed), attempt, SCENE_CLASSES.index(scene_class), n])
        if scene_class == "random":
            obs = _random_obstacles(rng, goals, bounds)
        elif scene_class == "curve":
            obs = _curve_obstacles(rng, goals, bounds, n)
        elif scene_class == "maze":
            obs = _maze_obstacles(rng, goals, bounds, n)
        else:
            obs = _storage_obstacles(rng, goals, bounds, n)
        scene = Scene(bounds, tuple(obs), goals, f"{scene_class}-{goal_layout}-{seed}")
        # connectivity at robot clearance implies connectivity of the raw free cells
        if goals_connected(scene, 64, clearance=0.45):
            return scene
    raise SceneGenerationError(
        f"no connected {scene_class} scene for layout {goal_layout} after {max_retries} attempts")
