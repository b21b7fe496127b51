import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from oracles import blur_circle, brute_occluded
from shapefocus.bvh import Bvh
from shapefocus.camera import (LESION_RESOLUTION, DEFAULT_COC, CameraIntrinsics, CameraPose,
                               CameraRig, LensConfig, angular_speed, blur_diameter, dof_limits,
                               hyperfocal, in_frustum, meets_lesion_criterion, motion_blur,
                               project, resolution_at, rig_visibility, visible)
from shapefocus.exceptions import DomainError, UndefinedResultError, ValidationError
from shapefocus.phantoms import icosphere, merge
from shapefocus.sampling import SurfaceSample, sample_surface

LENS = LensConfig()
INTR = CameraIntrinsics()


def on_axis_pose():
    return CameraPose([0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0])


def pt(p, n=(0.0, 1.0, 0.0)):
    return SurfaceSample(np.asarray(p, dtype=float), np.asarray(n, dtype=float), -1, 1.0)


# -- lens ---------------------------------------------------------------------------------

def test_hyperfocal_values():
    lens = LensConfig(6.0, 1.8, 0.007007)
    assert hyperfocal(lens) == pytest.approx(2860.0, abs=1.0)
    assert lens.effective_hyperfocal == pytest.approx(5720.0, abs=2.0)
    assert DEFAULT_COC == pytest.approx(0.007007, abs=1e-6)


def test_hyperfocal_limit_large_coc():
    assert hyperfocal(LensConfig(6.0, 1.8, 1e12)) == pytest.approx(6.0, abs=1e-9)


def test_lens_validation():
    with pytest.raises(ValidationError):
        LensConfig(focal_length=-1.0)
    with pytest.raises(ValidationError):
        LensConfig(hyperfocal_scale=0.5)


def test_dof_at_hyperfocal():
    h = LENS.effective_hyperfocal
    near, far = dof_limits(LENS, h)
    assert far == math.inf
    assert near == pytest.approx(h / 2.0, rel=2e-3)


def test_dof_domain_error():
    with pytest.raises(DomainError):
        dof_limits(LENS, 6.0)
    with pytest.raises(DomainError):
        dof_limits(LENS, np.array([100.0, 3.0]))


def test_dof_against_blur_circle_oracle():
    # the scaled hyperfocal distance is what the limits use, so the matching
    # acceptable blur for an f/N stop is f^2 / (N (H_eff - f))
    f, n = LENS.focal_length, LENS.f_number
    c_eff = f * f / (n * (LENS.effective_hyperfocal - f))
    s = 450.0
    near, far = dof_limits(LENS, s)
    assert near < s < far
    depths = np.linspace(near - 30.0, far + 30.0, 4001)
    sharp = np.array([blur_circle(f, n, s, d) <= c_eff * (1 + 1e-12) for d in depths])
    inside = (depths >= near) & (depths <= far)
    np.testing.assert_array_equal(sharp, inside)
    # just inside and just outside each limit
    for d, want in ((near + 1e-6, True), (near - 1e-6, False), (far - 1e-6, True), (far + 1e-6, False)):
        assert (blur_circle(f, n, s, d) <= c_eff) == want
    # the package normalises against its own coc; the blur-to-threshold ratio must agree
    for d in (400.0, near, 700.0):
        ratio = blur_diameter(LENS, s, d) / LENS.coc
        assert ratio == pytest.approx(blur_circle(f, n, s, d) / c_eff, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(s1=st.floats(6.01, 5719.0), s2=st.floats(6.01, 5719.0))
def test_dof_monotone(s1, s2):
    assume(s2 - s1 > 1e-6)
    n1, f1 = dof_limits(LENS, s1)
    n2, f2 = dof_limits(LENS, s2)
    assert n1 < n2 and f1 < f2
    assert n1 < s1 < f1


def test_dof_vectorised_matches_scalar():
    s = np.array([100.0, 450.0, 5720.0, 9000.0])
    near, far = dof_limits(LENS, s)
    for i, si in enumerate(s):
        assert (near[i], far[i]) == dof_limits(LENS, float(si))


# -- intrinsics / projection -------------------------------------------------------------

def test_default_fov():
    hfov, vfov = INTR.fov_deg(6.0)
    assert hfov == pytest.approx(47.66, abs=0.1)
    assert vfov > hfov


def test_projection_conventions():
    pose = on_axis_pose()
    u, v, d = project(pose, INTR, 6.0, [[0.0, 450.0, 0.0], [10.0, 450.0, 10.0], [0, -5, 0]])
    assert (u[0], v[0], d[0]) == (INTR.cx, INTR.cy, 450.0)
    # +x is image right (u grows), +z (up) is image top (v shrinks)
    assert u[1] > INTR.cx and v[1] < INTR.cy
    assert np.isnan(u[2]) and d[2] < 0


def test_pose_validation_and_rotation():
    with pytest.raises(ValidationError):
        CameraPose([0, 0, 0], [0, 1, 0], [0, 1, 0])
    p = CameraPose.look_at([100, -300, 50], [0, 0, 40])
    r = p.rotation
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)
    q = CameraPose.from_rotation(p.position, r)
    np.testing.assert_allclose(q.view_dir, p.view_dir, atol=1e-12)
    np.testing.assert_allclose(q.up, p.up, atol=1e-12)


# -- visibility ----------------------------------------------------------------------------

def test_point_behind_camera_invisible():
    assert not visible(on_axis_pose(), INTR, None, pt([0, -450, 0]))


def test_on_axis_point_empty_scene_visible():
    assert visible(on_axis_pose(), INTR, None, pt([0, 450, 0], n=[0, 1, 0]))


def test_back_facing_invisible():
    assert not visible(on_axis_pose(), INTR, None, pt([0, 450, 0], n=[0, -1, 0]))


def _brute_visible(pose, intr, f, corners, eps, p, n):
    # world to camera with the rotation matrix, independent of project()
    c = pose.rotation.T @ (p - pose.position)
    if c[2] <= 0:
        return False
    fpx = f / intr.pixel_pitch
    u = intr.cx + fpx * c[0] / c[2]
    v = intr.cy + fpx * c[1] / c[2]
    if not (0 <= u <= intr.width and 0 <= v <= intr.height):
        return False
    if pose.view_dir @ n <= 0:
        return False
    return not brute_occluded(pose.position, p, corners, eps)


def test_visibility_two_spheres_brute_force():
    mesh = merge(icosphere(80.0, 3), icosphere(60.0, 3, center=(120.0, -160.0, 30.0)))
    bvh = Bvh(mesh)
    samples = sample_surface(mesh, 1000, seed=5, bvh=bvh)
    rng = np.random.default_rng(8)
    corners = mesh.corners
    eps = bvh.default_eps
    mismatches = 0
    n_vis = 0
    poses = []
    for _ in range(5):
        a = rng.uniform(0, 2 * np.pi)
        pos = np.array([450 * np.cos(a), 450 * np.sin(a), rng.uniform(-100, 100)])
        poses.append(CameraPose.look_at(pos, rng.uniform(-50, 50, 3)))
    for pose in poses:
        for i in range(len(samples)):
            s = samples[i]
            got = visible(pose, INTR, bvh, s, 6.0, eps)
            want = _brute_visible(pose, INTR, 6.0, corners, eps, s.position, s.normal)
            mismatches += got != want
            n_vis += want
    assert mismatches == 0
    assert n_vis > 500
    # the batched path agrees with the scalar path
    rig = CameraRig.from_poses(poses)
    vis = rig_visibility(rig, samples, bvh, eps).dense()
    for c, pose in enumerate(poses):
        for i in range(0, len(samples), 7):
            assert vis[i, c] == visible(pose, INTR, bvh, samples[i], 6.0, eps)


# -- frustum / resolution / blur -----------------------------------------------------------

def test_in_frustum_on_axis():
    pose = on_axis_pose()
    s = 450.0
    assert in_frustum(pose, INTR, LENS, s, [0, s, 0])
    _, far = dof_limits(LENS, s)
    assert not in_frustum(pose, INTR, LENS, s, [0, far + 1.0, 0])


def test_in_frustum_matches_brute_force():
    rng = np.random.default_rng(3)
    pose = CameraPose.look_at([0, -450, 900], [0, 0, 900])
    pts = rng.uniform([-400, -450, 500], [400, 600, 1300], (10_000, 3))
    s_all = rng.uniform(100, 7000, len(pts))
    fpx = 6.0 / INTR.pixel_pitch
    for p, s in zip(pts, s_all):
        rel = p - pose.position
        d = rel @ pose.view_dir
        near, far = dof_limits(LENS, s)
        lateral = d > 0 and abs(rel @ pose.right) * fpx / d <= INTR.width / 2 \
            and abs(rel @ pose.up) * fpx / d <= INTR.height / 2
        assert in_frustum(pose, INTR, LENS, s, p) == bool(lateral and near <= d <= far)


@settings(max_examples=100, deadline=None)
@given(s=st.floats(50.0, 5000.0), frac=st.floats(0.0, 1.0))
def test_boundary_flips(s, frac):
    pose = on_axis_pose()
    near, far = dof_limits(LENS, s)
    d = near + frac * (far - near)
    assert in_frustum(pose, INTR, LENS, s, [0, d, 0])
    step = 1e-6 * far
    assert not in_frustum(pose, INTR, LENS, s, [0, near - 1e-6 * near, 0])
    assert not in_frustum(pose, INTR, LENS, s, [0, far + step, 0])


def test_resolution_formula():
    intr = CameraIntrinsics(6144, 8192, 0.00075)
    pose = on_axis_pose()
    r = resolution_at(pose, intr, LENS, pt([0, 450, 0]))
    assert r == pytest.approx(0.05625, abs=1e-12)
    assert resolution_at(pose, intr, LENS, pt([0, 900, 0])) == pytest.approx(2 * r)
    assert meets_lesion_criterion(r)
    assert meets_lesion_criterion(LESION_RESOLUTION)
    assert not meets_lesion_criterion(0.0751)


def test_resolution_undefined_when_invisible():
    with pytest.raises(UndefinedResultError):
        resolution_at(on_axis_pose(), INTR, LENS, pt([0, -450, 0]))


@settings(max_examples=50, deadline=None)
@given(roll=st.floats(0.0, 2 * np.pi))
def test_resolution_roll_invariant(roll):
    base = on_axis_pose()
    up = np.array([np.sin(roll), 0.0, np.cos(roll)])
    rolled = CameraPose(base.position, base.view_dir, up)
    s = pt([5.0, 420.0, -3.0])
    assert resolution_at(rolled, INTR, LENS, s) == pytest.approx(resolution_at(base, INTR, LENS, s))


def test_motion_blur_values():
    assert motion_blur(6144, 47.66, 9.0, 1 / 500) == pytest.approx(2.32, abs=0.01)
    omega = angular_speed(13.42, 450.0)
    assert omega == pytest.approx(1.7087, abs=1e-3)
    assert motion_blur(6144, 47.66, omega, 1 / 500) == pytest.approx(0.44, abs=0.01)
    assert motion_blur(6144, 47.66, 0.0, 1 / 500) == 0.0
