"""Command line entry point: ``shapefocus <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .bvh import Bvh
from .camera import CameraPose
from .cost import CostTable
from .em import baseline_average, baseline_closest, evaluate_focus, optimize
from .evaluation import Navigator, compute_metrics, plan_focus, plan_to_json, point_table, \
    write_focus_csv, write_points_csv
from .exceptions import ConfigError, ShapeFocusError, StageError
from .mesh import save_ply
from .pipeline import load_scene_mesh, run_pipeline
from .recon import reconstruct, render_depth, ring_views, save_depth
from .robustness import Scenario, noise_trials, summarize, sway_trials, write_report
from .sampling import chamfer, sample_surface

logger = logging.getLogger("shapefocus")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _parsers():
    scene = argparse.ArgumentParser(add_help=False)
    g = scene.add_argument_group("scene")
    g.add_argument("--config", help="JSON config file (defaults fill the gaps)")
    g.add_argument("--mesh", help="OBJ or PLY surface mesh")
    g.add_argument("--phantom", choices=("humanoid", "sphere"))
    g.add_argument("--unit-scale", type=float, help="multiply mesh coordinates (e.g. 1000 for m)")
    g.add_argument("-n", "--samples", type=int, help="surface sample count")
    g.add_argument("--seed", type=int)
    g.add_argument("-o", "--out", help="output directory")
    g.add_argument("-v", "--verbose", action="count", default=0)

    em = argparse.ArgumentParser(add_help=False)
    g = em.add_argument_group("optimiser")
    g.add_argument("--init", choices=("average", "closest", "hyperfocal"))
    g.add_argument("--em-eps", type=float, help="relative cost decrease to keep iterating")
    g.add_argument("--max-iters", type=int)
    g.add_argument("--dump-points", action="store_true", help="write the per-point cost CSV")

    p = argparse.ArgumentParser(prog="shapefocus", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("defaults", help="print the default configuration")
    sub.add_parser("sample", parents=[scene], help="draw surface samples to CSV")
    sub.add_parser("plan", parents=[scene, em], help="shape-aware focus plan")
    s = sub.add_parser("evaluate", parents=[scene, em], help="score a saved plan")
    s.add_argument("--plan", required=True)
    sub.add_parser("compare", parents=[scene, em], help="closest, average and shape-aware side by side")
    s = sub.add_parser("tsdf", parents=[scene], help="fuse rendered depth views into a mesh")
    s.add_argument("--views", type=int)
    s.add_argument("--voxel", type=float)
    s.add_argument("--radius", type=float)
    s = sub.add_parser("robustness", parents=[scene, em], help="calibration-noise and sway trials")
    s.add_argument("--trials", type=int)
    s.add_argument("--sway-trials", type=int)
    s = sub.add_parser("navigate", parents=[scene], help="camera showing a surface point")
    s.add_argument("--plan", required=True)
    s.add_argument("--point", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    s = sub.add_parser("render-depth", parents=[scene], help="ray-cast one depth image")
    s.add_argument("--position", type=float, nargs=3, required=True)
    s.add_argument("--target", type=float, nargs=3, required=True)
    s.add_argument("--name", default="depth")
    sub.add_parser("run", parents=[scene, em], help="full pipeline from --config")
    return p


def _config(args) -> dict:
    cfg = cfgmod.load_config(args.config)
    m = cfg["mesh"]
    if args.mesh:
        m["path"] = args.mesh
    if args.phantom:
        m["path"], m["phantom"] = None, args.phantom
    for key, attr in (("unit_scale", "unit_scale"), ("n_samples", "samples"), ("seed", "seed")):
        if getattr(args, attr, None) is not None:
            m[key] = getattr(args, attr)
    e = cfg["em"]
    for key in ("init", "em_eps", "max_iters"):
        if getattr(args, key, None) is not None:
            e[key] = getattr(args, key)
    if getattr(args, "dump_points", False):
        cfg["output"]["dump_points"] = True
    if args.out:
        cfg["output"]["dir"] = args.out
    t = cfg["tsdf"]
    for key, attr in (("n_views", "views"), ("voxel_size", "voxel"), ("radius", "radius")):
        if getattr(args, attr, None) is not None:
            t[key] = getattr(args, attr)
    r = cfg["robustness"]
    for key, attr in (("trials", "trials"), ("sway_trials", "sway_trials")):
        if getattr(args, attr, None) is not None:
            r[key] = getattr(args, attr)
    return cfgmod.load_config(cfg)


def _out(cfg) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scene(cfg):
    mesh = load_scene_mesh(cfg)
    bvh = Bvh(mesh)
    m = cfg["mesh"]
    samples = sample_surface(mesh, m["n_samples"], m["seed"], m["orient"], bvh)
    return mesh, bvh, samples


def _read_plan(path, n_cameras) -> dict:
    try:
        data = json.loads(Path(path).read_text())
        focus = plan_focus(data)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"cannot read plan {path}: {exc}") from exc
    if len(focus) != n_cameras:
        raise ConfigError(f"plan has {len(focus)} focus distances for {n_cameras} cameras")
    data["focus"] = focus
    return data


def _print_json(obj):
    print(json.dumps(obj, indent=2, default=lambda x: x.item() if hasattr(x, "item") else str(x)))


# -- commands -----------------------------------------------------------------------------

def cmd_defaults(args):
    _print_json(cfgmod.defaults())


def cmd_sample(args):
    cfg = _config(args)
    _, _, s = _scene(cfg)
    path = _out(cfg) / "samples.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "nx", "ny", "nz", "triangle"])
        for p, n, t in zip(s.positions, s.normals, s.triangle_ids):
            w.writerow([*map(repr, p.tolist()), *map(repr, n.tolist()), int(t)])
    print(f"{len(s)} samples -> {path}")


def cmd_plan(args):
    cfg = _config(args)
    _, bvh, samples = _scene(cfg)
    rig = cfgmod.rig_of(cfg)
    params = cfgmod.cost_params_of(cfg)
    t0 = time.perf_counter()
    table = CostTable.build(rig, samples, params, bvh)
    plan = optimize(rig, samples, params, bvh, cfg["em"]["init"], cfg["em"]["max_iters"], table)
    dt = time.perf_counter() - t0
    out = _out(cfg)
    (out / "plan.json").write_text(json.dumps(plan_to_json(rig, plan)))
    if cfg["output"]["dump_points"]:
        write_points_csv(point_table(rig, table, plan.focus, samples.positions), out / "points.csv")
    print(f"K = {plan.K:.3f} after {plan.iterations} loop(s) in {dt:.2f} s -> {out / 'plan.json'}")


def cmd_evaluate(args):
    cfg = _config(args)
    _, bvh, samples = _scene(cfg)
    rig = cfgmod.rig_of(cfg)
    plan = _read_plan(args.plan, len(rig))
    table = CostTable.build(rig, samples, cfgmod.cost_params_of(cfg), bvh)
    report = compute_metrics(rig, plan["focus"], table=table)
    out = _out(cfg)
    (out / "metrics.json").write_text(json.dumps(report.summary(), indent=2))
    write_focus_csv(report, out / "focus.csv")
    if cfg["output"]["dump_points"]:
        write_points_csv(point_table(rig, table, plan["focus"], samples.positions), out / "points.csv")
    _print_json(report.summary())


def cmd_compare(args):
    cfg = _config(args)
    _, bvh, samples = _scene(cfg)
    rig = cfgmod.rig_of(cfg)
    params = cfgmod.cost_params_of(cfg)
    table = CostTable.build(rig, samples, params, bvh)
    plans = {
        "closest": evaluate_focus(table, baseline_closest(rig, samples, bvh, table)),
        "average": evaluate_focus(table, baseline_average(rig, samples, bvh, table)),
        "shape-aware": optimize(rig, samples, params, bvh, cfg["em"]["init"],
                                cfg["em"]["max_iters"], table),
    }
    rows = []
    for name, plan in plans.items():
        r = compute_metrics(rig, plan, table=table)
        rows.append({"protocol": name, "K": r.K_total, "infocus_pct": r.infocus_pct,
                     "visibility_pct": r.visibility_pct,
                     "resolution_mean": r.resolution_mean,
                     "resolution_assigned_mean": r.resolution_assigned_mean})
    path = _out(cfg) / "compare.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"{'protocol':<12} {'K':>10} {'in-focus %':>11} {'visible %':>10}")
    for r in rows:
        print(f"{r['protocol']:<12} {r['K']:>10.1f} {r['infocus_pct']:>11.2f} {r['visibility_pct']:>10.2f}")


def cmd_tsdf(args):
    cfg = _config(args)
    mesh = load_scene_mesh(cfg)
    t = cfg["tsdf"]
    poses = ring_views(t["n_views"], t["radius"], mesh.bounds.mean(axis=0), t["heights"])
    recon, _ = reconstruct(mesh, poses, t["voxel_size"], noise_sigma=t["noise_sigma"],
                           seed=cfg["mesh"]["seed"])
    path = _out(cfg) / "reconstruction.ply"
    save_ply(recon, path)
    print(f"chamfer {chamfer(mesh, recon):.3f} mm, {len(recon.vertices)} vertices -> {path}")


def cmd_robustness(args):
    cfg = _config(args)
    mesh, bvh, samples = _scene(cfg)
    rig = cfgmod.rig_of(cfg)
    params = cfgmod.cost_params_of(cfg)
    r, e = cfg["robustness"], cfg["em"]
    out = _out(cfg)
    reps = noise_trials(Scenario(rig, samples, bvh, params), cfgmod.noise_of(cfg), r["trials"],
                        params, e["init"], e["max_iters"])
    write_report(reps, out / "robustness_noise.csv")
    result = {"noise": summarize(reps)}
    if r["sway_trials"] > 0:
        reps = sway_trials(rig, mesh, samples, cfgmod.sway_of(cfg), r["sway_trials"], params, bvh,
                           e["init"], e["max_iters"])
        write_report(reps, out / "robustness_sway.csv")
        result["sway (rigid translation)"] = summarize(reps)
    _print_json(result)


def cmd_navigate(args):
    cfg = _config(args)
    _, bvh, samples = _scene(cfg)
    rig = cfgmod.rig_of(cfg)
    plan = _read_plan(args.plan, len(rig))
    assignment = plan.get("assignment")
    if assignment is None or len(assignment) != len(samples):
        table = CostTable.build(rig, samples, cfgmod.cost_params_of(cfg), bvh)
        assignment, _ = table.assign(plan["focus"])
    res = Navigator(samples, np.asarray(assignment))(args.point)
    if res.covered:
        print(f"camera {res.camera} (nearest sample {res.sample}, {res.distance:.2f} mm away)")
    else:
        print(f"no camera covers the nearest sample {res.sample} ({res.distance:.2f} mm away)")


def cmd_render_depth(args):
    cfg = _config(args)
    mesh = load_scene_mesh(cfg)
    pose = CameraPose.look_at(args.position, args.target)
    img = render_depth(mesh, None, pose)
    path = _out(cfg) / f"{args.name}.pgm"
    save_depth(img, path)
    print(f"{int(img.valid.sum())} valid pixels -> {path}")


def cmd_run(args):
    cfg = _config(args)
    res = run_pipeline(cfg)
    for stage, t in res.timings.items():
        print(f"{stage:<12} {t:7.2f} s")
    print(f"summary -> {res.artifacts.get('summary')}")


COMMANDS = {
    "defaults": cmd_defaults, "sample": cmd_sample, "plan": cmd_plan, "evaluate": cmd_evaluate,
    "compare": cmd_compare, "tsdf": cmd_tsdf, "robustness": cmd_robustness,
    "navigate": cmd_navigate, "render-depth": cmd_render_depth, "run": cmd_run,
}


def main(argv=None) -> int:
    args = _parsers().parse_args(argv)
    # numba probes for TBB on first parallel call; the fallback layer is fine
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    level = logging.WARNING - 10 * getattr(args, "verbose", 0)
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ShapeFocusError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
