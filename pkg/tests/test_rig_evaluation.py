import csv
import json
import logging

import numpy as np
import pytest

from shapefocus.bvh import Bvh
from shapefocus.camera import CameraPose, CameraRig, LensConfig, visible
from shapefocus.cost import UNASSIGNED, CostParams, CostTable
from shapefocus.em import optimize
from shapefocus.evaluation import POINT_COLUMNS, Navigator, compute_metrics, navigate, \
    plan_focus, plan_to_json, point_table, write_points_csv
from shapefocus.exceptions import ValidationError
from shapefocus.phantoms import icosphere
from shapefocus.rig import RigSpec, angular_positions, generate_rig, vertical_overlap
from shapefocus.sampling import SurfaceSamples, sample_surface


# -- rig ---------------------------------------------------------------------------------------

def test_default_rig_has_336_inward_cameras():
    rig = generate_rig()
    assert len(rig) == 336
    radial = rig.positions.copy()
    radial[:, 2] = 0.0
    radial /= np.linalg.norm(radial, axis=1, keepdims=True)
    np.testing.assert_allclose(np.einsum("ij,ij->i", rig.view_dirs, radial), -1.0, atol=1e-9)
    # the optical axis meets the cylinder axis: no tangential component
    p, v = rig.positions, rig.view_dirs
    assert np.allclose(p[:, 0] * v[:, 1] - p[:, 1] * v[:, 0], 0.0, atol=1e-9)
    assert np.allclose(np.linalg.norm(rig.positions[:, :2], axis=1), 450.0)


def test_uniform_four_cameras():
    spec = RigSpec(n_vertical=1, n_angular=4, angular_layout="uniform")
    np.testing.assert_allclose(angular_positions(spec), [0, 90, 180, 270])
    rig = generate_rig(spec)
    np.testing.assert_allclose(rig.positions[:, :2], [[450, 0], [0, 450], [-450, 0], [0, -450]],
                               atol=1e-9)


def test_lateral_spacing_three_times_denser():
    ang = angular_positions(RigSpec())
    assert len(ang) == 48
    gaps = np.diff(np.r_[ang, ang[0] + 360.0])
    mids = np.mod(ang + gaps / 2, 360.0)
    lateral = (np.abs(((mids + 45) % 180) - 45) < 45)  # within 45 deg of 0 or 180
    lat_gap = np.median(gaps[lateral])
    fr_gap = np.median(gaps[~lateral])
    assert fr_gap / lat_gap == pytest.approx(3.0)


def test_vertical_overlap_in_band():
    rig = generate_rig()
    assert 0.3 <= vertical_overlap(RigSpec(), rig.lens, rig.intrinsics) <= 0.5


def test_overlap_warning(caplog):
    with caplog.at_level(logging.WARNING):
        generate_rig(RigSpec(n_vertical=2))
    assert "overlap" in caplog.text


def test_rig_spec_validation():
    with pytest.raises(ValidationError):
        RigSpec(n_angular=0)
    with pytest.raises(ValidationError):
        RigSpec(angular_layout="spiral")


# -- metrics -------------------------------------------------------------------------------------

def axis_samples(depths):
    d = np.asarray(depths, float)
    pos = np.c_[np.zeros_like(d), d, np.zeros_like(d)]
    return SurfaceSamples(pos, np.tile([0, 1.0, 0], (len(d), 1)), np.full(len(d), -1), 1.0)


def test_everything_in_focus_gives_100():
    rig = CameraRig.from_poses([CameraPose([0, 0, 0], [0, 1, 0], [0, 0, 1])])
    rep = compute_metrics(rig, [450.0], axis_samples([445.0, 450.0, 455.0]))
    assert rep.infocus_pct == 100.0 and rep.visibility_pct == 100.0
    assert rep.resolution_mean == pytest.approx(450.0 * rig.intrinsics.pixel_pitch / 6.0)


@pytest.fixture(scope="module")
def ring():
    mesh = icosphere(150.0, 4)
    bvh = Bvh(mesh)
    samples = sample_surface(mesh, 1500, seed=8, bvh=bvh)
    spec = RigSpec(n_vertical=1, n_angular=12, vertical_center=0.0, angular_layout="uniform")
    rig = generate_rig(spec)
    return mesh, bvh, samples, rig


def test_visibility_matches_brute_force(ring):
    _, bvh, samples, rig = ring
    rep = compute_metrics(rig, np.full(len(rig), 400.0), samples, bvh=bvh)
    seen = [any(visible(rig.pose(c), rig.intrinsics, bvh, samples[i], 6.0) for c in range(len(rig)))
            for i in range(len(samples))]
    assert rep.visibility_pct == pytest.approx(100.0 * np.mean(seen))
    band = np.abs(samples.positions[:, 2]) < 60
    assert np.mean(np.array(seen)[band]) == 1.0


def test_metrics_bounds_and_reproducible(ring):
    _, bvh, samples, rig = ring
    plan = optimize(rig, samples, CostParams(), bvh)
    a = compute_metrics(rig, plan, samples, bvh=bvh)
    b = compute_metrics(rig, plan, samples, bvh=bvh)
    assert a.summary() == b.summary()
    for k in ("infocus_pct", "visibility_pct", "pct_meeting_0075", "pct_meeting_0075_assigned"):
        assert 0.0 <= getattr(a, k) <= 100.0
    assert a.K_total <= a.n_samples
    assert a.K_total == pytest.approx(plan.K)
    assert len(a.focus_table) == len(rig)
    assert a.infocus_pct <= a.visibility_pct


def test_wider_dof_never_lowers_infocus(ring):
    _, bvh, samples, rig = ring
    focus = np.linspace(320, 420, len(rig))
    prev = -1.0
    for scale in (3.0, 2.0, 1.5, 1.0):
        r = rig.with_lens(LensConfig(hyperfocal_scale=scale))
        pct = compute_metrics(r, focus, samples, bvh=bvh).infocus_pct
        assert pct >= prev
        prev = pct


# -- plan I/O and point dump ----------------------------------------------------------------------

def test_plan_json_round_trip(ring, tmp_path):
    _, bvh, samples, rig = ring
    plan = optimize(rig, samples, CostParams(), bvh)
    data = json.loads(json.dumps(plan_to_json(rig, plan)))
    np.testing.assert_array_equal(plan_focus(data), plan.focus)
    assert data["K_final"] == pytest.approx(plan.K)
    cam = data["cameras"][0]
    assert {"index", "position", "view_dir", "up", "focus_mm", "d_near_mm", "d_far_mm",
            "assigned_count"} <= set(cam)
    assert sum(c["assigned_count"] for c in data["cameras"]) == int(np.sum(plan.assignment >= 0))
    with pytest.raises(ValidationError):
        plan_focus({"cams": []})


def test_points_csv(ring, tmp_path):
    _, bvh, samples, rig = ring
    table = CostTable.build(rig, samples, CostParams(), bvh)
    focus = np.full(len(rig), 400.0)
    cols = point_table(rig, table, focus, samples.positions)
    write_points_csv(cols, tmp_path / "p.csv")
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert tuple(rows[0]) == POINT_COLUMNS and len(rows) == len(samples)
    total = sum(float(r["value"]) for r in rows)
    assert total == pytest.approx(table.total(focus), abs=1e-6)


# -- navigation --------------------------------------------------------------------------------------

def test_navigate_exact_sample(ring):
    _, bvh, samples, rig = ring
    plan = optimize(rig, samples, CostParams(), bvh)
    i = int(np.flatnonzero(plan.assignment >= 0)[5])
    res = navigate(samples, plan.assignment, samples.positions[i])
    assert res.camera == plan.assignment[i] and res.sample == i and res.distance == 0.0
    assert res.covered


def test_navigate_far_query_warns(ring, caplog):
    _, bvh, samples, rig = ring
    plan = optimize(rig, samples, CostParams(), bvh)
    with caplog.at_level(logging.WARNING):
        res = navigate(samples, plan.assignment, [1e5, 0, 0])
    assert "diagonal" in caplog.text
    assert res.distance > 1e4 and res.sample >= 0


def test_navigate_uncovered_sample():
    nav = Navigator(np.zeros((1, 3)), np.array([UNASSIGNED]))
    assert not nav([0, 0, 0]).covered


def test_navigate_consistent_with_assignment(ring):
    mesh, bvh, samples, rig = ring
    table = CostTable.build(rig, samples, CostParams(), bvh)
    plan = optimize(rig, samples, CostParams(), bvh, table=table)
    m = table.cost_matrix(plan.focus)
    queries = sample_surface(mesh, 100, seed=99).positions
    nav = Navigator(samples, plan.assignment)
    for q in queries:
        res = nav(q)
        if res.covered:
            assert m[res.sample, res.camera] == m[res.sample].min()
        else:
            assert m[res.sample].min() == 1.0


def test_navigator_validation():
    with pytest.raises(ValidationError):
        Navigator(np.zeros((0, 3)), np.zeros(0, int))
    with pytest.raises(ValidationError):
        Navigator(np.zeros((2, 3)), np.zeros(3, int))
