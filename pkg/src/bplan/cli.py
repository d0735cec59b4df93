"""Command-line frontend: ``bplan <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .errors import BPlanError

log = logging.getLogger("bplan")

DESK_N, DESK_GRID = 50, 16


def _point(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from None
    if len(vals) != 3 or not np.all(np.isfinite(vals)):
        raise argparse.ArgumentTypeError(f"expected three finite numbers, got {text!r}")
    return tuple(vals)


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("BPLAN_SEED")
    return int(env) if env else 0


def _families(text):
    from .scene import FAMILIES
    if text == "all":
        return list(FAMILIES)
    names = [f for f in text.split(",") if f]
    bad = [f for f in names if f not in FAMILIES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown families {bad}; choose from {FAMILIES} or 'all'")
    return names


def _modes(text):
    from .bench import MODES
    names = [m for m in text.split(",") if m]
    bad = [m for m in names if m not in MODES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown modes {bad}; choose from {MODES}")
    return names


# -- subcommands ---------------------------------------------------------

def cmd_scene_gen(args):
    from .scene import make_scene, save_scene
    scene = make_scene(args.family, _seed(args), with_robot=args.with_robot)
    save_scene(scene, args.out)
    print(f"{args.family}: {len(scene.obstacles)} obstacles -> {args.out}")


def cmd_cloud_sim(args):
    from .perception import (PointCloud, default_sensor_poses, render_point_cloud, save_cloud,
                             transform_cloud, voxel_downsample)
    from .scene import load_scene
    scene = load_scene(args.scene)
    poses = default_sensor_poses(scene.bounds)
    chosen = range(len(poses)) if args.pose is None else [args.pose]
    parts = []
    for i in chosen:
        cloud = render_point_cloud(scene, poses[i], args.angular_resolution, include_robot=True)
        parts.append(transform_cloud(cloud, poses[i].rotation, poses[i].position))
    merged = PointCloud(np.concatenate([c.xyz for c in parts]), np.concatenate([c.rgb for c in parts]),
                        "world", np.concatenate([c.source for c in parts]))
    if args.leaf > 0:
        merged = voxel_downsample(merged, args.leaf)
    save_cloud(merged, args.out)
    print(f"{len(merged)} points -> {args.out}")


def cmd_segment(args):
    from .perception import load_cloud, region_grow_segment, remove_robot_regions, save_cloud
    cloud = load_cloud(args.cloud)
    regions = region_grow_segment(cloud, args.k, args.threshold_1, args.threshold_2)
    kept = remove_robot_regions(cloud, regions)
    save_cloud(kept, args.out)
    print(f"{len(regions)} regions; kept {len(kept)} of {len(cloud)} points -> {args.out}")


def cmd_map_build(args):
    from .occupancy import build_map, dump_map, save_voxel_grid, to_voxel_descriptor
    from .scene import load_scene
    scene = load_scene(args.scene)
    omap = build_map(scene, angular_resolution=args.angular_resolution, leaf_resolution=args.leaf)
    dump_map(omap, args.out)
    msg = f"{len(omap.occupied_keys())} occupied leaves -> {args.out}"
    if args.descriptor:
        side = args.voxel_side or float(np.max(scene.bounds.size)) / args.grid
        save_voxel_grid(to_voxel_descriptor(omap, scene.bounds.lo_arr, (args.grid,) * 3, side), args.descriptor)
        msg += f"; descriptor -> {args.descriptor}"
    print(msg)


def _weights(text):
    from .scene import FAMILIES
    if not text:
        return {f: 1.0 for f in FAMILIES}
    out = {}
    for item in text.split(","):
        name, _, w = item.partition("=")
        if name not in FAMILIES:
            raise argparse.ArgumentTypeError(f"unknown family {name!r}")
        out[name] = float(w or 1.0)
    return out


def cmd_dataset_gen(args):
    from .labeling import build_dataset, save_dataset
    n = DESK_N if args.desk and args.n is None else (args.n or 200)
    grid = DESK_GRID if args.desk and args.grid is None else (args.grid or 32)
    side = args.voxel_side or 3.2 / grid
    ds = build_dataset(n, args.families, seed=_seed(args), dims=(grid,) * 3, voxel_side=side, jobs=args.jobs)
    save_dataset(ds, args.out)
    print(f"{len(ds.samples)} samples ({len(ds.train_idx)} train / {len(ds.test_idx)} test), "
          f"{len(ds.log)} regenerated -> {args.out}")


def cmd_pretrain(args):
    from .neuralnet import ArchConfig, pretrain_pretext, save_weights
    net, acc, _ = pretrain_pretext(ArchConfig(grid=args.grid), _seed(args), args.n_train, args.n_test,
                                   args.epochs, args.batch_size)
    save_weights(net, args.out)
    print(f"pretext held-out accuracy {acc:.4f} -> {args.out}")


def cmd_train(args):
    from .labeling import load_dataset
    from .neuralnet import ArchConfig, TrainConfig, build_network, load_weights, save_weights, train, transfer
    ds = load_dataset(args.dataset)
    seed = _seed(args)
    if args.pretrained:
        net = transfer(load_weights(args.pretrained), seed)
    else:
        net = build_network(ArchConfig(grid=ds.dims[0]), seed)
    cfg = TrainConfig(learning_rate=args.learning_rate, batch_size=args.batch_size, epochs=args.epochs, seed=seed)
    history = train(net, ds.arrays(ds.train_idx), ds.arrays(ds.test_idx), cfg)
    save_weights(net, args.out)
    if args.history:
        with open(args.history, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_mse,test_mse\n")
            for e, (a, b) in enumerate(zip(history["train"], history["test"])):
                fh.write(f"{e},{a:.9g},{b:.9g}\n")
    print(f"train mse {history['train'][0]:.4g} -> {history['train'][-1]:.4g}, "
          f"test mse {history['test'][-1]:.4g} -> {args.out}")


def _load_map(args, scene):
    from .occupancy import build_map, load_map_dump
    if args.map:
        return load_map_dump(args.map, scene.bounds if scene else None)
    if scene is None:
        raise argparse.ArgumentTypeError("need --scene or --map")
    return build_map(scene)


def cmd_predict(args):
    from .neuralnet import load_weights, predict_bottlenecks
    from .scene import PlanningQuery, load_scene
    scene = load_scene(args.scene) if args.scene else None
    omap = _load_map(args, scene)
    pts = predict_bottlenecks(load_weights(args.weights), omap, PlanningQuery(args.start, args.goal), omap.bounds)
    text = "".join(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n" for p in pts)
    _write(args.out, text)


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_plan(args):
    from .labeling import select_bottleneck_labels
    from .planner import BASELINE, BOTTLENECK, plan, save_result
    from .rng import child_seed
    from .scene import PlanningQuery, load_scene, sample_query
    scene = load_scene(args.scene) if args.scene else None
    if not args.map_from_scene and not args.map:
        raise argparse.ArgumentTypeError("need --map-from-scene or --map")
    omap = _load_map(args, scene)
    seed = _seed(args)
    if args.start and args.goal:
        query = PlanningQuery(args.start, args.goal)
    elif scene is not None:
        query = sample_query(scene, omap, seed)
    else:
        raise argparse.ArgumentTypeError("need --start and --goal (or --scene to sample a query)")
    labels, cfg = (), BASELINE
    if args.mode == "bottleneck_oracle":
        ref = plan(omap, query, (), BASELINE.with_(seed=child_seed(seed, 2)))
        labels, cfg = select_bottleneck_labels(ref.path, omap), BOTTLENECK
    elif args.mode == "bottleneck_learned":
        from .neuralnet import load_weights, predict_bottlenecks
        if not args.weights:
            raise argparse.ArgumentTypeError("bottleneck_learned needs --weights")
        labels, cfg = list(predict_bottlenecks(load_weights(args.weights), omap, query, omap.bounds)), BOTTLENECK
    cfg = cfg.with_(seed=seed, max_iterations=args.max_iterations)
    result = plan(omap, query, labels, cfg)
    save_result(result, args.out, with_time=not args.no_time)
    print(f"success={result.success} tree_size={result.tree_size} iterations={result.iterations} -> {args.out}")
    if not result.success:
        return 1
    return 0


def cmd_smooth(args):
    from .occupancy import load_map_dump
    from .planner import load_result
    from .scene import EE_RADIUS, load_scene
    from .smoothing import TENSION, save_smooth, smooth_or_fallback
    from .errors import TooFewWaypoints
    res = load_result(args.path)
    if len(res.path) < 2:
        raise TooFewWaypoints("path file holds fewer than two waypoints")
    scene = load_scene(args.scene) if args.scene else None
    if args.map:
        omap = load_map_dump(args.map, scene.bounds if scene else None)
    else:
        from .occupancy import build_map
        if scene is None:
            raise argparse.ArgumentTypeError("need --scene or --map for collision validation")
        omap = build_map(scene)
    pts, smoothed = smooth_or_fallback(res.path, omap, args.delta, EE_RADIUS, args.tension, args.samples)
    save_smooth(pts, len(res.path) - 1 if smoothed else 0, args.tension, args.out)
    print(f"{'smoothed' if smoothed else 'fallback to polyline'}: {len(pts)} points -> {args.out}")


def cmd_bench(args):
    from .bench import emit_csv, emit_svg_bars, run_benchmark, summarize, summary_table
    net = None
    if "bottleneck_learned" in args.mode:
        from .neuralnet import load_weights
        if not args.weights:
            raise argparse.ArgumentTypeError("bottleneck_learned needs --weights")
        net = load_weights(args.weights)
    records = run_benchmark(args.families, args.cycles, args.mode, net, _seed(args), args.fixed_scene, args.jobs)
    summary = summarize(records)
    _write(args.out_csv, emit_csv(records))
    with open(args.out_svg, "w", encoding="utf-8") as fh:
        fh.write(emit_svg_bars(summary))
    if args.summary:
        _write(args.summary, summary_table(summary))
    for key, imp in summary.improvements.items():
        med = summary.median_improvements[key]
        print(f"{key[0]:>16} {key[1]:<19} tree {imp['tree_size']:6.1f}% (median {med['tree_size']:6.1f}%)  "
              f"time {imp['planning_time']:6.1f}% (median {med['planning_time']:6.1f}%)")


# -- parser --------------------------------------------------------------

def build_parser():
    from .scene import FAMILIES
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: $BPLAN_SEED, then 0)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (dataset-gen, bench)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bplan", description="Bottleneck-guided RRT* pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("scene-gen", cmd_scene_gen, "generate a scene file")
    sp.add_argument("--family", choices=FAMILIES, required=True)
    sp.add_argument("--with-robot", action="store_true", help="include the orange robot body")
    sp.add_argument("--out", required=True)

    sp = add("cloud-sim", cmd_cloud_sim, "render a coloured point cloud (world frame)")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--pose", type=int, default=None, help="single sensor pose index (default: all)")
    sp.add_argument("--angular-resolution", type=float, default=0.01)
    sp.add_argument("--leaf", type=float, default=0.0, help="voxel downsampling leaf (0: off)")
    sp.add_argument("--out", required=True)

    sp = add("segment", cmd_segment, "remove robot-coloured regions from a cloud")
    sp.add_argument("--cloud", required=True)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--threshold-1", type=float, default=30.0)
    sp.add_argument("--threshold-2", type=float, default=20.0)
    sp.add_argument("--out", required=True)

    sp = add("map-build", cmd_map_build, "build the occupancy map of a scene")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--angular-resolution", type=float, default=0.01)
    sp.add_argument("--leaf", type=float, default=0.05)
    sp.add_argument("--descriptor", default=None, help="also write the dense voxel grid here")
    sp.add_argument("--grid", type=int, default=32)
    sp.add_argument("--voxel-side", type=float, default=None)
    sp.add_argument("--out", required=True)

    sp = add("dataset-gen", cmd_dataset_gen, "generate the labelled dataset")
    sp.add_argument("--n", type=int, default=None, help="number of problems (default 200, desk 50)")
    sp.add_argument("--desk", action="store_true", help="laptop preset: 50 problems, 16^3 grids")
    sp.add_argument("--grid", type=int, default=None)
    sp.add_argument("--voxel-side", type=float, default=None, help="default: workspace side / grid")
    sp.add_argument("--families", type=_weights, default=_weights(""), help="e.g. elongated=1,cluttered=2")
    sp.add_argument("--out", required=True)

    sp = add("pretrain", cmd_pretrain, "pretrain the conv stack on the shape task")
    sp.add_argument("--grid", type=int, default=32)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--n-train", type=int, default=640)
    sp.add_argument("--n-test", type=int, default=200)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train the bottleneck regressor")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--pretrained", default=None, help="pretext weights to transfer (frozen conv)")
    sp.add_argument("--epochs", type=int, default=170)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--learning-rate", type=float, default=1e-3)
    sp.add_argument("--history", default=None, help="per-epoch loss CSV")
    sp.add_argument("--out", required=True)

    sp = add("predict", cmd_predict, "predict three bottleneck points")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--scene", default=None)
    sp.add_argument("--map", default=None, help="map dump (default: build from --scene)")
    sp.add_argument("--start", type=_point, required=True)
    sp.add_argument("--goal", type=_point, required=True)
    sp.add_argument("--out", default="-")

    sp = add("plan", cmd_plan, "plan a path with RRT*")
    sp.add_argument("--scene", default=None)
    sp.add_argument("--map", default=None)
    sp.add_argument("--map-from-scene", action="store_true")
    sp.add_argument("--start", type=_point, default=None)
    sp.add_argument("--goal", type=_point, default=None)
    sp.add_argument("--mode", choices=("baseline", "bottleneck_oracle", "bottleneck_learned"), default="baseline")
    sp.add_argument("--weights", default=None)
    sp.add_argument("--max-iterations", type=int, default=100_000)
    sp.add_argument("--no-time", action="store_true", help="omit wall time (byte-stable output)")
    sp.add_argument("--out", required=True)

    sp = add("smooth", cmd_smooth, "smooth a planned path with a cubic Bezier chain")
    sp.add_argument("--path", required=True)
    sp.add_argument("--scene", default=None)
    sp.add_argument("--map", default=None)
    sp.add_argument("--tension", type=float, default=1.0 / 3.0)
    sp.add_argument("--delta", type=float, default=0.05)
    sp.add_argument("--samples", type=int, default=10, help="samples per segment")
    sp.add_argument("--out", required=True)

    sp = add("bench", cmd_bench, "benchmark baseline against bottleneck-guided RRT*")
    sp.add_argument("--families", type=_families, default=list(FAMILIES))
    sp.add_argument("--cycles", type=int, default=20)
    sp.add_argument("--mode", type=_modes, default=["baseline", "bottleneck_oracle"])
    sp.add_argument("--weights", default=None)
    sp.add_argument("--fixed-scene", action="store_true", help="reuse one scene per family")
    sp.add_argument("--out-csv", default="bench.csv")
    sp.add_argument("--out-svg", default="bench.svg")
    sp.add_argument("--summary", default=None)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except argparse.ArgumentTypeError as e:
        parser.print_usage(sys.stderr)
        print(f"bplan {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (BPlanError, ValueError, OSError) as e:
        print(f"bplan {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
