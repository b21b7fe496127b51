"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line; the full list is repeated in the
terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from acceptance_log import criterion
from oracles import brute_occluded
from shapefocus.bvh import Bvh
from shapefocus.calib import axis_angle, fit_similarity, pose_repeatability
from shapefocus.camera import CameraIntrinsics, CameraPose, CameraRig, LensConfig, angular_speed, \
    dof_limits, in_frustum, motion_blur
from shapefocus.cost import UNASSIGNED, CostParams, CostTable, point_cost
from shapefocus.em import baseline_average, baseline_closest, evaluate_focus, focus_intervals, \
    minimization_step, optimize
from shapefocus.evaluation import infocus_mask
from shapefocus.phantoms import icosphere, merge, uv_capsule
from shapefocus.recon import reconstruct, ring_views
from shapefocus.robustness import NoiseSpec, Scenario, eval_cross, noise_trials, summarize
from shapefocus.sampling import SurfaceSamples, chamfer, sample_surface

PARAMS = CostParams()


def test_criterion_01_hyperfocal():
    with criterion(1, "hyperfocal 2860 mm and effective 5720 mm") as c:
        lens = LensConfig()
        h, h_eff = lens.hyperfocal, lens.effective_hyperfocal
        c["detail"] = f"H={h:.2f}, H_eff={h_eff:.2f}"
        c["ok"] = abs(h - 2860.0) <= 1.0 and abs(h_eff - 5720.0) <= 2.0


def test_criterion_02_motion_blur():
    with criterion(2, "motion blur 2.32 px rotation, 0.44 px sway") as c:
        rot = motion_blur(6144, 47.66, 9.0, 1 / 500)
        sway = motion_blur(6144, 47.66, angular_speed(13.42, 450.0), 1 / 500)
        c["detail"] = f"{rot:.4f} px, {sway:.4f} px"
        c["ok"] = abs(rot - 2.32) <= 0.01 and abs(sway - 0.44) <= 0.01


def _random_scene(seed):
    rng = np.random.default_rng(seed)
    if seed % 2:
        a = rng.uniform(-100, 100, 3)
        b = a + rng.normal(size=3) * 150
        mesh = merge(uv_capsule(a, b, rng.uniform(40, 90)),
                     icosphere(rng.uniform(50, 100), 3, center=rng.uniform(-150, 150, 3)))
    else:
        mesh = icosphere(rng.uniform(80, 200), 3, center=rng.uniform(-30, 30, 3))
    bvh = Bvh(mesh)
    samples = sample_surface(mesh, 1500, seed=seed, bvh=bvh)
    n_cam = int(rng.integers(20, 337))
    theta = rng.uniform(0, 2 * np.pi, n_cam)
    radius = rng.uniform(350, 700, n_cam)
    z = rng.uniform(-400, 400, n_cam)
    center = mesh.bounds.mean(axis=0)
    poses = [CameraPose.look_at(center + [r * np.cos(t), r * np.sin(t), h],
                                center + rng.normal(0, 40, 3))
             for t, r, h in zip(theta, radius, z)]
    return CameraRig.from_poses(poses), samples, bvh


def test_criterion_03_em_monotone():
    with criterion(3, "EM cost trace non-increasing on 50 random scenes") as c:
        worst = -np.inf
        loops = []
        for seed in range(50):
            rig, samples, bvh = _random_scene(seed)
            plan = optimize(rig, samples, PARAMS, bvh, init=("average", "closest", "hyperfocal")[seed % 3])
            worst = max(worst, float(np.max(np.diff(plan.cost_trace), initial=-np.inf)))
            loops.append(plan.iterations)
        c["detail"] = f"largest step {worst:.3g}, loops {min(loops)}-{max(loops)}"
        c["ok"] = worst <= 1e-9


def test_criterion_04_minimization_grid():
    with criterion(4, "sweep count equals 0.1 mm grid maximum on 100 instances") as c:
        rng = np.random.default_rng(2024)
        lens = LensConfig()
        intr = CameraIntrinsics()
        mismatches = 0
        for _ in range(100):
            pose = CameraPose.look_at(rng.normal(size=3) * 500, rng.normal(size=3) * 50)
            n = int(rng.integers(1, 201))
            depth = rng.uniform(150.0, 1500.0, n)
            # points inside the lateral pyramid: small image-plane offsets
            xy = rng.uniform(-0.3, 0.3, (n, 2)) * depth[:, None]
            pts = pose.position + depth[:, None] * pose.view_dir + xy[:, :1] * pose.right \
                + xy[:, 1:] * pose.up
            rig = CameraRig.from_poses([pose])
            s = minimization_step(rig, np.zeros(n, int), SurfaceSamples.from_points(pts, -np.tile(
                pose.view_dir, (n, 1))))[0]
            got = sum(in_frustum(pose, intr, lens, s, p) for p in pts)
            lo, hi = focus_intervals(depth, lens)
            grid = np.arange(np.floor(lo.min() * 10) / 10, hi.max() + 0.05, 0.1)
            near, far = dof_limits(lens, grid)
            want = int(((near[:, None] <= depth) & (depth <= far[:, None])).sum(axis=1).max())
            mismatches += got != want
        c["detail"] = f"{mismatches} mismatches"
        c["ok"] = mismatches == 0


@pytest.fixture(scope="module")
def protocols(phantom):
    rig, samples, bvh, table = phantom["rig"], phantom["samples"], phantom["bvh"], phantom["table"]
    out = {
        "closest": evaluate_focus(table, baseline_closest(rig, samples, bvh, table)),
        "average": evaluate_focus(table, baseline_average(rig, samples, bvh, table)),
        "shape": optimize(rig, samples, PARAMS, bvh, table=table),
    }
    return {k: (p.K, 100.0 * infocus_mask(table, p.focus).mean(), p) for k, p in out.items()}


def test_criterion_05_protocol_ordering(protocols):
    with criterion(5, "shape-aware < average < closest in K, reversed in in-focus %") as c:
        (kc, ic, _), (ka, ia, _), (ks, is_, _) = (protocols[k] for k in ("closest", "average", "shape"))
        c["detail"] = (f"K {ks:.0f}/{ka:.0f}/{kc:.0f}, in-focus {is_:.1f}/{ia:.1f}/{ic:.1f}%")
        c["ok"] = ks < ka < kc and is_ > ia > ic and is_ >= 80.0


def test_criterion_06_calibration_noise(phantom):
    with criterion(6, "30 noise trials, mean affected area <= 1%") as c:
        truth = Scenario(phantom["rig"], phantom["samples"], phantom["bvh"], PARAMS, phantom["table"])
        reps = noise_trials(truth, NoiseSpec(2.5, 1.0, 0.3, 0.1, seed=0), n_trials=30)
        s = summarize(reps)
        c["detail"] = f"mean {s['affected_mean_pct']:.3f}%, sd {s['affected_std_pct']:.3f}%"
        c["ok"] = s["affected_mean_pct"] <= 1.0


def test_criterion_07_cross_mesh(phantom):
    with criterion(7, "plan on TSDF reconstruction loses <= 2% in-focus area") as c:
        mesh = phantom["mesh"]
        poses = ring_views(36, 1000.0, mesh.bounds.mean(axis=0), heights=(-600.0, 0.0, 600.0))
        recon, _ = reconstruct(mesh, poses, 5.0, phantom["bvh"])
        rbvh = Bvh(recon)
        rsamples = sample_surface(recon, 10_000, seed=0, bvh=rbvh)
        source = Scenario(phantom["rig"], rsamples, rbvh, PARAMS)
        target = Scenario(phantom["rig"], phantom["samples"], phantom["bvh"], PARAMS, phantom["table"])
        rep = eval_cross(source, target, PARAMS, reference="target")
        loss = -rep.delta_infocus_pct
        c["detail"] = (f"true-mesh plan {rep.infocus_self_pct:.2f}%, reconstruction plan "
                       f"{rep.infocus_cross_pct:.2f}%, loss {loss:.2f} pp, "
                       f"chamfer {chamfer(mesh, recon):.2f} mm")
        c["ok"] = loss <= 2.0


def test_criterion_08_tsdf_sphere():
    with criterion(8, "sphere r=100 from 36 views at 5 mm voxels, chamfer < 10 mm") as c:
        mesh = icosphere(100.0, 5)
        recon, _ = reconstruct(mesh, ring_views(36, 450.0), 5.0)
        d = chamfer(mesh, recon)
        c["detail"] = f"chamfer {d:.3f} mm"
        c["ok"] = d < 10.0


def test_criterion_09_similarity_and_repeatability():
    with criterion(9, "similarity recovery RMS < 1e-9, repeatability (2.16 mm, 0.21 deg)") as c:
        rng = np.random.default_rng(9)
        x = rng.uniform(-300, 300, (100, 3))
        s0, r0, t0 = rng.uniform(0.5, 3.0), Rotation.random(random_state=9).as_matrix(), rng.normal(size=3) * 100
        fit = fit_similarity(x, s0 * x @ r0.T + t0)
        r1 = Rotation.random(random_state=10).as_matrix()
        t1 = rng.normal(size=3) * 100
        d = rng.normal(size=3)
        trans, rot = pose_repeatability((t1, r1), (t1 + 2.16 * d / np.linalg.norm(d),
                                                   r1 @ axis_angle(rng.normal(size=3), 0.21)))
        c["detail"] = f"rms {fit.rms:.2e}, repeatability ({trans:.9f} mm, {rot:.9f} deg)"
        c["ok"] = (fit.rms < 1e-9 and abs(fit.scale - s0) < 1e-9 and abs(trans - 2.16) < 1e-9
                   and abs(rot - 0.21) < 1e-9)


def test_criterion_10_runtime(phantom):
    with criterion(10, "shape-aware focus on 10k samples x 336 cameras within 5 s") as c:
        rig, samples, bvh = phantom["rig"], phantom["samples"], phantom["bvh"]
        t0 = time.perf_counter()
        table = CostTable.build(rig, samples, PARAMS, bvh)
        plan = optimize(rig, samples, PARAMS, bvh, table=table)
        dt = time.perf_counter() - t0
        c["detail"] = f"{dt:.2f} s including visibility, {plan.iterations} loops"
        c["ok"] = dt <= 5.0


def test_criterion_11_oracles(phantom):
    with criterion(11, "occlusion, assignment and frustum-boundary oracles") as c:
        rng = np.random.default_rng(11)
        # occlusion against brute force on the phantom
        mesh, bvh = phantom["mesh"], phantom["bvh"]
        corners = mesh.corners
        eps = bvh.default_eps
        idx = rng.choice(len(phantom["samples"]), 300, replace=False)
        targets = phantom["samples"].positions[idx]
        origins = phantom["rig"].positions[rng.integers(0, len(phantom["rig"]), 300)]
        got = bvh.occluded(origins, targets, eps)
        want = np.array([brute_occluded(o, t, corners, eps) for o, t in zip(origins, targets)])
        occ_bad = int(np.sum(got != want))
        # assignment is the argmin of the per-camera scalar cost
        rig = phantom["rig"]
        focus = rng.uniform(300, 600, len(rig))
        assign, _ = phantom["table"].assign(focus)
        samples = phantom["samples"]
        asg_bad = 0
        cams = rng.choice(len(rig), 40, replace=False)
        for i in rng.choice(len(samples), 40, replace=False):
            costs = {cam: point_cost(rig.pose(cam), rig.intrinsics, rig.lens, focus[cam], samples[i],
                                     PARAMS, bvh).value for cam in cams}
            if assign[i] == UNASSIGNED:
                asg_bad += min(costs.values()) < 1.0
            else:
                own = point_cost(rig.pose(assign[i]), rig.intrinsics, rig.lens, focus[assign[i]],
                                 samples[i], PARAMS, bvh).value
                asg_bad += own > min(costs.values()) + 1e-12
        # in_frustum flips exactly at the depth-of-field limits
        lens, intr = LensConfig(), CameraIntrinsics()
        pose = CameraPose([0, 0, 0], [0, 1, 0], [0, 0, 1])
        flip_bad = 0
        for s in rng.uniform(100, 5000, 500):
            near, far = dof_limits(lens, s)
            flip_bad += not in_frustum(pose, intr, lens, s, [0, near * (1 + 1e-9), 0])
            flip_bad += in_frustum(pose, intr, lens, s, [0, near * (1 - 1e-9), 0])
            if math.isfinite(far):
                flip_bad += not in_frustum(pose, intr, lens, s, [0, far * (1 - 1e-9), 0])
                flip_bad += in_frustum(pose, intr, lens, s, [0, far * (1 + 1e-9), 0])
        c["detail"] = f"mismatches: occlusion {occ_bad}, assignment {asg_bad}, boundary {flip_bad}"
        c["ok"] = occ_bad == 0 and asg_bad == 0 and flip_bad == 0
