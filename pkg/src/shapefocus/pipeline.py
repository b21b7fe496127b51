"""End-to-end run: sample, optional reconstruction, optimise, score, report."""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bvh import Bvh
from .config import cost_params_of, load_config, noise_of, rig_of, sway_of
from .cost import CostTable
from .em import optimize
from .evaluation import compute_metrics, plan_to_json, point_table, write_focus_csv, \
    write_points_csv
from .exceptions import ConfigError, StageError
from .mesh import Mesh, load_mesh, save_ply
from .phantoms import humanoid, icosphere
from .recon import reconstruct, ring_views
from .robustness import Scenario, noise_trials, summarize, sway_trials, write_report
from .sampling import chamfer, sample_surface

logger = logging.getLogger(__name__)

# wall-clock budget for focus computation on a full rig
OPTIMIZE_BUDGET_S = 5.0


def load_scene_mesh(cfg: dict) -> Mesh:
    m = cfg["mesh"]
    if m["path"]:
        return load_mesh(m["path"], unit_scale=m["unit_scale"])
    if m["phantom"] == "sphere":
        spec = cfg["rig_spec"]
        return icosphere(150.0, 5, center=(0.0, 0.0, spec["vertical_center"]))
    return humanoid()


@dataclass
class PipelineResult:
    config: dict
    timings: dict[str, float] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


@contextmanager
def _stage(name: str, result: PipelineResult):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
        raise StageError(name, exc) from exc
    finally:
        result.timings[name] = time.perf_counter() - t0
        logger.info("stage %-10s %.2f s", name, result.timings[name])


def run_pipeline(config=None, out_dir=None) -> PipelineResult:
    """Run every stage not listed in ``stages.skip``.

    Raises:
        ConfigError: the configuration is invalid (before any stage runs).
        StageError: a stage failed; carries the stage name and cause.
    """
    cfg = load_config(config)
    out = Path(out_dir or cfg["output"]["dir"])
    skip = set(cfg["stages"]["skip"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    params = cost_params_of(cfg)
    rig = rig_of(cfg)
    res = PipelineResult(cfg)
    em = cfg["em"]
    mcfg = cfg["mesh"]

    if "sample" in skip:
        raise ConfigError("the sample stage cannot be skipped")
    with _stage("sample", res):
        mesh = load_scene_mesh(cfg)
        bvh = Bvh(mesh)
        samples = sample_surface(mesh, mcfg["n_samples"], mcfg["seed"], mcfg["orient"], bvh)
        res.summary["mesh"] = {"vertices": len(mesh.vertices), "triangles": len(mesh.triangles),
                               "area_mm2": mesh.area, "samples": len(samples)}

    plan_samples, plan_bvh = samples, bvh
    t = cfg["tsdf"]
    if t["enabled"] and "tsdf" not in skip:
        with _stage("tsdf", res):
            center = mesh.bounds.mean(axis=0)
            poses = ring_views(t["n_views"], t["radius"], center, t["heights"])
            recon, _ = reconstruct(mesh, poses, t["voxel_size"], bvh, noise_sigma=t["noise_sigma"],
                                   seed=mcfg["seed"])
            path = out / "reconstruction.ply"
            save_ply(recon, path)
            res.artifacts["reconstruction"] = str(path)
            res.summary["tsdf"] = {"chamfer_mm": chamfer(mesh, recon),
                                   "vertices": len(recon.vertices)}
            if t["plan_on_reconstruction"]:
                plan_bvh = Bvh(recon)
                plan_samples = sample_surface(recon, mcfg["n_samples"], mcfg["seed"], "winding")

    if "optimize" in skip:
        logger.info("optimize skipped; nothing further to do")
        _write_summary(res, out)
        return res
    with _stage("optimize", res):
        table = CostTable.build(rig, plan_samples, params, plan_bvh)
        plan = optimize(rig, plan_samples, params, plan_bvh, em["init"], em["max_iters"], table)
        path = out / "plan.json"
        path.write_text(json.dumps(plan_to_json(rig, plan)))
        res.artifacts["plan"] = str(path)
    elapsed = res.timings["optimize"]
    res.summary["optimize"] = {"seconds": elapsed, "budget_s": OPTIMIZE_BUDGET_S,
                               "within_budget": elapsed <= OPTIMIZE_BUDGET_S,
                               "iterations": plan.iterations, "K": plan.K}
    if elapsed > OPTIMIZE_BUDGET_S:
        logger.warning("focus computation took %.2f s (budget %.1f s)", elapsed, OPTIMIZE_BUDGET_S)

    truth_table = table if plan_samples is samples else None
    if "metrics" not in skip:
        with _stage("metrics", res):
            truth_table = truth_table or CostTable.build(rig, samples, params, bvh)
            report = compute_metrics(rig, plan.focus, table=truth_table)
            res.summary["metrics"] = report.summary()
            write_focus_csv(report, out / "focus.csv")
            res.artifacts["focus_table"] = str(out / "focus.csv")
            if cfg["output"]["dump_points"]:
                cols = point_table(rig, truth_table, plan.focus, samples.positions)
                write_points_csv(cols, out / "points.csv")
                res.artifacts["points"] = str(out / "points.csv")

    r = cfg["robustness"]
    if r["enabled"] and "robustness" not in skip:
        with _stage("robustness", res):
            truth = Scenario(rig, samples, bvh, params, truth_table)
            reps = noise_trials(truth, noise_of(cfg), r["trials"], params, em["init"],
                                em["max_iters"])
            write_report(reps, out / "robustness_noise.csv")
            res.artifacts["robustness_noise"] = str(out / "robustness_noise.csv")
            res.summary["robustness_noise"] = summarize(reps)
            if r["sway_trials"] > 0:
                reps = sway_trials(rig, mesh, samples, sway_of(cfg), r["sway_trials"], params, bvh,
                                   em["init"], em["max_iters"])
                write_report(reps, out / "robustness_sway.csv")
                res.artifacts["robustness_sway"] = str(out / "robustness_sway.csv")
                # rigid translation stands in for articulated sway
                res.summary["robustness_sway"] = {**summarize(reps), "model": "rigid translation"}

    if "report" not in skip:
        _write_summary(res, out)
    return res


def _write_summary(res: PipelineResult, out: Path) -> None:
    path = out / "summary.json"
    res.artifacts["summary"] = str(path)
    path.write_text(json.dumps({"timings_s": res.timings, "artifacts": res.artifacts,
                                **res.summary}, indent=2, default=_jsonable))


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")
