"""Command-line entry point: gen-scenes, train, plan, bench."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .world import LAYOUTS, SCENE_CLASSES

log = logging.getLogger("mgmm")

DYNAMICS_KEYS = {"L": float, "H": float, "N": int, "dt": float}


def load_config(path) -> dict:
    """JSON config; nested objects are flattened to dotted keys such as ``dynamics.L``."""
    if path is None:
        return {}
    raw = json.loads(Path(path).read_text())
    flat = {}

    def walk(prefix, obj):
        for k, v in obj.items():
            key = f"{prefix}.{k}" if prefix else k
            if isinstance(v, dict):
                walk(key, v)
            else:
                flat[key] = v

    walk("", raw)
    return flat


def dynamics_overrides(config: dict) -> dict:
    out = {}
    for key, cast in DYNAMICS_KEYS.items():
        if f"dynamics.{key}" in config:
            out[key] = cast(config[f"dynamics.{key}"])
    return out


def _parse_pairs(text: str):
    if text == "all":
        return None
    pairs = []
    for item in text.split(","):
        i, j = item.split("-")
        pairs.append((int(i), int(j)))
    return pairs


def cmd_gen_scenes(args) -> int:
    from .world import generate_scene, save_scene

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        seed = args.seed_base + k
        scene = generate_scene(args.scene_class, args.layout, seed)
        save_scene(scene, out / f"{args.scene_class}_{args.layout}_{seed:06d}.json")
    log.info("wrote %d scenes to %s", args.count, out)
    return 0


def cmd_train(args) -> int:
    from .dataset import build_dataset, evaluate_retrieval, train_store
    from .dynamics import make_model
    from .memory import TrainConfig
    from .world import load_scene

    config = load_config(args.config)
    model = make_model(args.robot, **dynamics_overrides(config))
    scenes = None
    scene_class, layout = args.scene_class, args.layout
    if args.scenes:
        files = sorted(Path(args.scenes).glob("*.json"))
        if not files:
            log.error("no scene files in %s", args.scenes)
            return 2
        scenes = [load_scene(f) for f in files]
        n = len(scenes[0].goals)
        layout = layout or next((k for k, v in LAYOUTS.items() if v * v == n), f"{n}goals")
        scene_class = scene_class or "custom"
    elif not (scene_class and layout):
        log.error("train needs --scenes or both --class and --layout")
        return 2

    def progress(done, total):
        log.info("problem %d/%d", done, total)

    data = build_dataset(scene_class, layout, problems=args.problems, augmentations=args.augmentations,
                         holdout=args.holdout, seed=args.seed, model=model, pairs=_parse_pairs(args.pairs),
                         progress=progress, scenes=scenes)
    if data.skipped:
        log.warning("%d (pair, problem) entries skipped", len(data.skipped))
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    store = train_store(data, cfg, robot=args.robot, dt=model.dt)
    store.save(args.out)
    report = evaluate_retrieval(store, data, model)
    log.info("held-out retrieval accuracy %.3f, collision-free %.3f", report.accuracy, report.free_rate)
    return 0


def cmd_plan(args) -> int:
    from .dynamics import make_model
    from .harness import plot_trajectory, seeded_start
    from .memory import MemoryStore
    from .planner import PLANNERS
    from .world import load_scene

    t0 = time.perf_counter()
    config = load_config(args.config)
    model = make_model(args.robot, **dynamics_overrides(config))
    scene = load_scene(args.scene)
    if args.start is not None:
        g = scene.goals[args.start]
        s_init = model.initial_state(g.cx, g.cy, args.heading)
    else:
        s_init = seeded_start(scene, model, args.seed)
    kwargs = {"budget": args.budget, "seed": args.seed, "t0": t0}
    if args.planner == "memory":
        if not args.store:
            log.error("--planner memory needs --store")
            return 2
        result = PLANNERS["memory"](scene, model, s_init, MemoryStore.load(args.store), **kwargs)
    else:
        result = PLANNERS[args.planner](scene, model, s_init, **kwargs)
    text = result.to_json(include_runtime=not args.no_runtime)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if args.svg:
        if result.solved:
            Path(args.svg).write_text(plot_trajectory(scene, result))
        else:
            log.warning("no SVG written: planner status %s", result.status)
    log.info("%s: %s in %.3f s", args.planner, result.status, result.runtime)
    return 0 if result.solved else 1


def cmd_bench(args) -> int:
    from .harness import BenchmarkConfig, run_benchmark

    raw = json.loads(Path(args.config).read_text())
    dyn = {k.split(".", 1)[1]: v for k, v in raw.items() if k.startswith("dynamics.")}
    raw = {k: v for k, v in raw.items() if not k.startswith("dynamics.")}
    if dyn:
        raw["dynamics"] = {**raw.get("dynamics", {}), **dyn}
    config = BenchmarkConfig.from_dict(raw)

    def progress(done, total):
        if done % 10 == 0 or done == total:
            log.info("%d/%d runs", done, total)

    report = run_benchmark(config, out=args.out, progress=progress)
    for c in report.cells:
        log.info("%s %s %s: success %.2f runtime %.3f s distance %.1f m", c.scene_class, c.layout,
                 c.planner, c.success_rate, c.runtime_s, c.distance_m)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgmm", description="Multi-goal motion planning with a motion memory.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenes", help="write generated scenes as JSON files")
    g.add_argument("--class", dest="scene_class", required=True, choices=SCENE_CLASSES)
    g.add_argument("--layout", required=True, choices=sorted(LAYOUTS))
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed-base", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_scenes)

    t = sub.add_parser("train", help="build an experience dataset and train a memory store")
    t.add_argument("--scenes", help="directory of scene JSON files (one problem each)")
    t.add_argument("--class", dest="scene_class", choices=SCENE_CLASSES)
    t.add_argument("--layout", choices=sorted(LAYOUTS))
    t.add_argument("--pairs", default="all", help="'all' or a list like 0-1,1-0")
    t.add_argument("--problems", type=int, default=20)
    t.add_argument("--augmentations", type=int, default=25)
    t.add_argument("--holdout", type=float, default=0.2)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--robot", default="car", choices=("car", "snake"))
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    pl = sub.add_parser("plan", help="solve one multi-goal problem")
    pl.add_argument("--scene", required=True)
    pl.add_argument("--robot", default="car", choices=("car", "snake"))
    pl.add_argument("--planner", default="memory", choices=("memory", "dromos", "seqrrt"))
    pl.add_argument("--store")
    pl.add_argument("--budget", type=float, default=10.0)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--start", type=int, help="start goal index (default: chosen from the seed)")
    pl.add_argument("--heading", type=float, default=0.0, help="start heading in radians, with --start")
    pl.add_argument("--config")
    pl.add_argument("--no-runtime", action="store_true", help="omit runtime_s from the result JSON")
    pl.add_argument("--out")
    pl.add_argument("--svg")
    pl.set_defaults(func=cmd_plan)

    b = sub.add_parser("bench", help="run a benchmark described by a JSON config")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
