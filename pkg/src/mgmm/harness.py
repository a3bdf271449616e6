"""Benchmark orchestration: instances, planner runs, trimmed statistics, CSV and SVG output."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .dynamics import make_model
from .planner import PLANNERS, PlanResult
from .world import LAYOUTS, SCENE_CLASSES, Scene, generate_scene

CSV_COLUMNS = ("scene_class", "layout", "planner", "instance_id", "seed", "status",
               "runtime_s", "distance_m", "tree_nodes")
STATUS_MISSING_STORE = "missing_store"
STORE_PATTERN = "{scene_class}_{layout}_{robot}.mm"


class BenchmarkError(ValueError):
    pass


def trimmed_mean(values, fraction: float) -> float:
    """Sort, drop floor(fraction * n) values from each end, average the rest."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if not 0.0 <= fraction < 0.5:
        raise BenchmarkError(f"trim fraction must lie in [0, 0.5), got {fraction}")
    n = len(v)
    if n == 0:
        raise BenchmarkError("trimmed_mean of no values")
    k = int(math.floor(fraction * n))
    if n - 2 * k < 1:
        raise BenchmarkError(f"trimming {k} from each end of {n} values leaves nothing")
    return float(v[k:n - k].mean())


@dataclass
class BenchmarkConfig:
    scene_classes: tuple = ("maze", "random")
    layouts: tuple = ("2x2", "3x3")
    instances: int = 50
    budget: float = 10.0
    trim: float = 0.25
    seed_base: int = 0
    planners: tuple = ("memory", "dromos", "seqrrt")
    robot: str = "car"
    store_dir: str = "stores"
    dynamics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scene_classes = tuple(self.scene_classes)
        self.layouts = tuple(self.layouts)
        self.planners = tuple(self.planners)
        if not 0.0 <= self.trim < 0.5:
            raise BenchmarkError(f"trim fraction must lie in [0, 0.5), got {self.trim}")
        if self.instances < 4:
            raise BenchmarkError(f"need at least 4 instances per cell, got {self.instances}")
        if self.budget <= 0:
            raise BenchmarkError("budget must be positive")
        for c in self.scene_classes:
            if c not in SCENE_CLASSES:
                raise BenchmarkError(f"unknown scene class {c!r}")
        for lay in self.layouts:
            if lay not in LAYOUTS:
                raise BenchmarkError(f"unknown layout {lay!r}")
        for p in self.planners:
            if p not in PLANNERS:
                raise BenchmarkError(f"unknown planner {p!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise BenchmarkError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "BenchmarkConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def store_path(self, scene_class: str, layout: str) -> Path:
        return Path(self.store_dir) / STORE_PATTERN.format(scene_class=scene_class, layout=layout,
                                                           robot=self.robot)


@dataclass(frozen=True)
class Instance:
    scene_class: str
    layout: str
    instance_id: int
    seed: int
    scene: Scene
    s_init: tuple


def seeded_start(scene: Scene, model, seed: int) -> tuple:
    """Rest state at the center of a seeded goal with a seeded heading."""
    rng = np.random.default_rng(seed)
    g = scene.goals[int(rng.integers(len(scene.goals)))]
    return model.initial_state(g.cx, g.cy, float(rng.uniform(-math.pi, math.pi)))


def make_instances(scene_class: str, layout: str, count: int, seed_base: int = 0, model=None) -> list:
    """Instances seeded seed_base, seed_base + 1, ...; each starts at rest in a seeded goal."""
    model = model or make_model("car")
    out = []
    for i in range(count):
        seed = seed_base + i
        scene = generate_scene(scene_class, layout, seed)
        out.append(Instance(scene_class, layout, i, seed, scene, seeded_start(scene, model, seed)))
    return out


@dataclass
class BenchmarkRow:
    scene_class: str
    layout: str
    planner: str
    instance_id: int
    seed: int
    status: str
    runtime_s: float
    distance_m: float
    tree_nodes: int

    @property
    def solved(self) -> bool:
        return self.status == "solved"


@dataclass
class CellStats:
    scene_class: str
    layout: str
    planner: str
    instances: int
    success_rate: float
    runtime_s: float
    distance_m: float


def summarize(rows, trim: float) -> list:
    """Per (class, layout, planner) statistics; warning rows are ignored.

    Runtime is trimmed over all instances (failures count at their measured
    runtime); distance is trimmed over solved instances only.
    """
    cells = {}
    for r in rows:
        if r.status == STATUS_MISSING_STORE:
            continue
        cells.setdefault((r.scene_class, r.layout, r.planner), []).append(r)
    out = []
    for (c, lay, p), rs in sorted(cells.items()):
        solved = [r.distance_m for r in rs if r.solved]
        out.append(CellStats(
            c, lay, p, len(rs),
            len(solved) / len(rs),
            trimmed_mean([r.runtime_s for r in rs], trim),
            trimmed_mean(solved, trim) if solved else math.nan,
        ))
    return out


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    rows: list

    @property
    def cells(self) -> list:
        return summarize(self.rows, self.config.trim)

    def cell(self, scene_class: str, layout: str, planner: str) -> CellStats:
        for c in self.cells:
            if (c.scene_class, c.layout, c.planner) == (scene_class, layout, planner):
                return c
        raise KeyError((scene_class, layout, planner))

    def to_csv(self, timestamp: str | None = None) -> str:
        return rows_to_csv(self.rows, timestamp)

    def write_csv(self, path, timestamp: str | None = None) -> None:
        Path(path).write_text(self.to_csv(timestamp))


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def rows_to_csv(rows, timestamp: str | None = None) -> str:
    """CSV text: one '# generated <timestamp>' line, the header, then one line per row."""
    if timestamp is None:
        timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    buf = io.StringIO()
    buf.write(f"# generated {timestamp}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def rows_from_csv(text: str) -> list:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = []
    for d in csv.DictReader(lines):
        rows.append(BenchmarkRow(
            d["scene_class"], d["layout"], d["planner"], int(d["instance_id"]), int(d["seed"]),
            d["status"],
            float(d["runtime_s"]) if d["runtime_s"] else math.nan,
            float(d["distance_m"]) if d["distance_m"] else math.nan,
            int(d["tree_nodes"]),
        ))
    return rows


def read_csv(path) -> list:
    return rows_from_csv(Path(path).read_text())


# ---------------------------------------------------------------------------
# execution

_STORES = {}


def _load_store(path):
    """Stores are loaded once per worker process and reused across instances."""
    from .memory import MemoryStore

    key = str(path)
    if key not in _STORES:
        _STORES[key] = MemoryStore.load(path)
    return _STORES[key]


def run_instance(instance: Instance, planner: str, budget: float, robot: str = "car",
                 store_path=None, dynamics: dict | None = None, clock=time.perf_counter) -> BenchmarkRow:
    model = make_model(robot, **(dynamics or {}))
    s_init = instance.s_init
    if robot != "car":
        s_init = model.initial_state(s_init[0], s_init[1], s_init[2])
    store = _load_store(store_path) if planner == "memory" else None
    t0 = clock()
    kwargs = {"budget": budget, "seed": instance.seed, "clock": clock, "t0": t0}
    if planner == "memory":
        result = PLANNERS[planner](instance.scene, model, s_init, store, **kwargs)
    else:
        result = PLANNERS[planner](instance.scene, model, s_init, **kwargs)
    return row_from_result(instance, result)


def row_from_result(instance: Instance, result: PlanResult) -> BenchmarkRow:
    return BenchmarkRow(instance.scene_class, instance.layout, result.planner, instance.instance_id,
                        instance.seed, result.status, float(result.runtime),
                        float(result.distance) if result.solved else math.nan, int(result.tree_size))


def _task(args):
    return run_instance(*args)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("MGMM_WORKERS", "1")))
    except ValueError:
        return 1


def run_benchmark(config: BenchmarkConfig, out=None, workers: int | None = None,
                  clock=time.perf_counter, timestamp: str | None = None, progress=None) -> BenchmarkReport:
    """Run every (planner, instance) pair of every cell; optionally write the CSV report.

    A missing store for the guided planner yields one warning row for that cell.
    Passing a custom `clock` forces serial execution.
    """
    workers = worker_count() if workers is None else max(1, workers)
    if clock is not time.perf_counter:
        workers = 1
    tasks, slots, rows = [], [], []
    model = make_model(config.robot, **config.dynamics)
    for c in config.scene_classes:
        for lay in config.layouts:
            instances = make_instances(c, lay, config.instances, config.seed_base, model)
            for p in config.planners:
                store = None
                if p == "memory":
                    store = config.store_path(c, lay)
                    if not store.exists():
                        rows.append(BenchmarkRow(c, lay, p, -1, -1, STATUS_MISSING_STORE, math.nan,
                                                 math.nan, 0))
                        continue
                for inst in instances:
                    slots.append(len(rows))
                    rows.append(None)
                    tasks.append((inst, p, config.budget, config.robot, store, config.dynamics, clock))
    if workers == 1:
        results = []
        for k, t in enumerate(tasks):
            results.append(_task(t))
            if progress:
                progress(k + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_task, tasks))
    for slot, r in zip(slots, results):
        rows[slot] = r
    report = BenchmarkReport(config, rows)
    if out is not None:
        report.write_csv(out, timestamp)
    return report


# ---------------------------------------------------------------------------
# plotting

SVG_PX_PER_M = 20


def plot_trajectory(scene: Scene, result: PlanResult, s_init=None, mmap=None) -> str:
    """SVG of obstacles, numbered goals, the trajectory polyline and the start marker.

    Output bytes depend only on the inputs.
    """
    if not result.solved or result.trajectory is None:
        raise BenchmarkError(f"cannot plot an unsolved result (status {result.status!r})")
    xmin, ymin, xmax, ymax = scene.bounds
    k = SVG_PX_PER_M
    W, H = (xmax - xmin) * k, (ymax - ymin) * k

    def px(x, y):
        return f"{(x - xmin) * k:.2f}", f"{(ymax - y) * k:.2f}"

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" '
        f'viewBox="0 0 {W:.2f} {H:.2f}">',
        f'<rect x="0" y="0" width="{W:.2f}" height="{H:.2f}" fill="white" stroke="black"/>',
    ]
    for o in scene.obstacles:
        x, y = px(o.cx - o.hw, o.cy + o.hh)
        out.append(f'<rect x="{x}" y="{y}" width="{2 * o.hw * k:.2f}" height="{2 * o.hh * k:.2f}" '
                   f'fill="#555555"/>')
    if mmap is not None:
        for a, b in mmap.edges:
            x1, y1 = px(*mmap.nodes[a])
            x2, y2 = px(*mmap.nodes[b])
            out.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="#cccccc" '
                       f'stroke-width="0.5"/>')
    for i, g in enumerate(scene.goals):
        x, y = px(g.cx, g.cy)
        out.append(f'<circle cx="{x}" cy="{y}" r="{g.radius * k:.2f}" fill="#7fbf7f" stroke="#2f6f2f"/>')
        out.append(f'<text x="{x}" y="{y}" font-size="{0.8 * k:.1f}" text-anchor="middle" '
                   f'dominant-baseline="central">{i}</text>')
    pts = " ".join(",".join(px(s[0], s[1])) for s in result.trajectory.states)
    out.append(f'<polyline points="{pts}" fill="none" stroke="#1f4fbf" stroke-width="1.5"/>')
    s0 = result.trajectory.states[0] if s_init is None else s_init
    x, y = px(s0[0], s0[1])
    out.append(f'<circle cx="{x}" cy="{y}" r="{0.3 * k:.2f}" fill="#d03030"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def config_as_dict(config: BenchmarkConfig) -> dict:
    d = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def ensure_store(scene_class: str, layout: str, store_dir="stores", robot: str = "car",
                 problems: int = 20, augmentations: int = 25, seed: int = 0, progress=None) -> Path:
    """Path of the cached store for a cell, training it first when absent."""
    from .dataset import build_dataset, train_store
    from .memory import TrainConfig

    path = Path(store_dir) / STORE_PATTERN.format(scene_class=scene_class, layout=layout, robot=robot)
    if path.exists():
        return path
    path.parent.mkdir(parents=True, exist_ok=True)
    model = make_model(robot)
    data = build_dataset(scene_class, layout, problems=problems, augmentations=augmentations, seed=seed,
                         model=model, progress=progress)
    store = train_store(data, TrainConfig(seed=seed), robot=robot, dt=model.dt)
    tmp = path.with_suffix(".tmp")
    store.save(tmp)
    tmp.replace(path)
    return path
