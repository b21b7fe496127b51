"""Pinhole projection with thin-lens depth of field.

Conventions: a pose is (position, view direction, up). The image x axis is
``cross(view_dir, up)`` and image rows grow opposite to ``up``. Depth is the
axial distance ``<p - position, view_dir>``, never the Euclidean range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bvh import Bvh
from .exceptions import DomainError, UndefinedResultError, ValidationError

DEFAULT_FOCAL_LENGTH = 6.0
DEFAULT_F_NUMBER = 1.8
DEFAULT_HYPERFOCAL = 2860.0
# circle of confusion that reproduces the 2860 mm hyperfocal distance
DEFAULT_COC = DEFAULT_FOCAL_LENGTH ** 2 / (
    DEFAULT_F_NUMBER * (DEFAULT_HYPERFOCAL - DEFAULT_FOCAL_LENGTH))
DEFAULT_HFOV_DEG = 47.66
DEFAULT_WIDTH_PX = 6144
DEFAULT_HEIGHT_PX = 8192
DEFAULT_PIXEL_PITCH = (2.0 * DEFAULT_FOCAL_LENGTH * math.tan(math.radians(DEFAULT_HFOV_DEG / 2))
                       / DEFAULT_WIDTH_PX)
LESION_RESOLUTION = 0.075


@dataclass(frozen=True)
class LensConfig:
    """Thin-lens parameters (millimetres)."""

    focal_length: float = DEFAULT_FOCAL_LENGTH
    f_number: float = DEFAULT_F_NUMBER
    coc: float = DEFAULT_COC
    hyperfocal_scale: float = 2.0

    def __post_init__(self):
        if not (self.focal_length > 0 and self.f_number > 0 and self.coc > 0):
            raise ValidationError("focal_length, f_number and coc must be positive")
        if not self.hyperfocal_scale >= 1:
            raise ValidationError("hyperfocal_scale must be >= 1")

    @property
    def hyperfocal(self) -> float:
        return hyperfocal(self)

    @property
    def effective_hyperfocal(self) -> float:
        return self.hyperfocal_scale * hyperfocal(self)


def hyperfocal(lens: LensConfig) -> float:
    """H = f^2 / (N c) + f."""
    f = lens.focal_length
    return f * f / (lens.f_number * lens.coc) + f


def dof_limits(lens: LensConfig, s):
    """Near and far depth-of-field limits for focus distance ``s``.

    Uses the scaled hyperfocal distance ``H = hyperfocal_scale * H0``::

        D_N = s (H - f) / (H + s - 2 f)
        D_F = s (H - f) / (H - s)   for s < H, otherwise inf

    Accepts scalars or arrays.

    Raises:
        DomainError: if any ``s <= focal_length``.
    """
    f = lens.focal_length
    h = lens.effective_hyperfocal
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(~(s_arr > f)):
        raise DomainError(f"focus distance must exceed the focal length ({f} mm)")
    near = s_arr * (h - f) / (h + s_arr - 2.0 * f)
    with np.errstate(divide="ignore"):
        far = np.where(s_arr < h, s_arr * (h - f) / np.where(s_arr < h, h - s_arr, 1.0), np.inf)
    if np.ndim(s) == 0:
        return float(near), float(far)
    return near, far


def blur_diameter(lens: LensConfig, s: float, d):
    """Thin-lens blur-circle diameter on the sensor for an object at depth d.

    Computed with the aperture implied by the scaled hyperfocal distance, so
    ``blur <= coc`` exactly on [D_N(s), D_F(s)].
    """
    f = lens.focal_length
    h = lens.effective_hyperfocal
    aperture = lens.coc * (h - f) / f          # entrance pupil diameter
    d = np.asarray(d, dtype=np.float64)
    return aperture * f * np.abs(d - s) / (d * (s - f))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Sensor geometry. The focal length lives in :class:`LensConfig`."""

    width: int = DEFAULT_WIDTH_PX
    height: int = DEFAULT_HEIGHT_PX
    pixel_pitch: float = DEFAULT_PIXEL_PITCH
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or not self.pixel_pitch > 0:
            raise ValidationError("image size and pixel pitch must be positive")
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)

    @property
    def sensor_size(self) -> tuple[float, float]:
        return self.width * self.pixel_pitch, self.height * self.pixel_pitch

    def fov_deg(self, focal_length: float) -> tuple[float, float]:
        """Horizontal and vertical field of view."""
        sw, sh = self.sensor_size
        return field_of_view(sw, focal_length), field_of_view(sh, focal_length)


def field_of_view(sensor_dimension: float, focal_length: float) -> float:
    """2 atan(d / 2f), degrees."""
    return math.degrees(2.0 * math.atan(sensor_dimension / (2.0 * focal_length)))


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True)
class CameraPose:
    position: np.ndarray
    view_dir: np.ndarray
    up: np.ndarray

    def __post_init__(self):
        for name in ("position", "view_dir", "up"):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(3)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if abs(np.linalg.norm(self.view_dir) - 1) > 1e-9 or abs(np.linalg.norm(self.up) - 1) > 1e-9:
            raise ValidationError("view_dir and up must be unit vectors")
        if abs(self.view_dir @ self.up) > 1e-9:
            raise ValidationError("view_dir and up must be orthogonal")

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0)) -> "CameraPose":
        """Pose at ``position`` looking at ``target``; ``up`` is re-orthogonalised."""
        position = np.asarray(position, dtype=np.float64)
        n = _unit(np.asarray(target, dtype=np.float64) - position)
        u = np.asarray(up, dtype=np.float64)
        u = _unit(u - (u @ n) * n)
        return cls(position, n, u)

    @classmethod
    def from_rotation(cls, position, rotation) -> "CameraPose":
        """Inverse of :attr:`rotation`."""
        r = np.asarray(rotation, dtype=np.float64)
        return cls(position, _unit(r[:, 2]), _unit(-r[:, 1]))

    @property
    def right(self) -> np.ndarray:
        return np.cross(self.view_dir, self.up)

    @property
    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation with columns (right, down, forward)."""
        return np.stack([self.right, -self.up, self.view_dir], axis=1)


@dataclass(frozen=True)
class CameraRig:
    """A set of poses sharing one lens and sensor."""

    positions: np.ndarray
    view_dirs: np.ndarray
    ups: np.ndarray
    lens: LensConfig = field(default_factory=LensConfig)
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)

    def __post_init__(self):
        for name in ("positions", "view_dirs", "ups"):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1, 3)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.positions) == len(self.view_dirs) == len(self.ups)):
            raise ValidationError("positions, view_dirs and ups must have equal length")
        if len(self.positions) == 0:
            raise ValidationError("rig has no cameras")
        if np.any(np.abs(np.linalg.norm(self.view_dirs, axis=1) - 1) > 1e-9) or \
                np.any(np.abs(np.linalg.norm(self.ups, axis=1) - 1) > 1e-9):
            raise ValidationError("view_dirs and ups must be unit vectors")
        if np.any(np.abs(np.einsum("ij,ij->i", self.view_dirs, self.ups)) > 1e-9):
            raise ValidationError("view_dirs and ups must be orthogonal")

    @classmethod
    def from_poses(cls, poses, lens=None, intrinsics=None) -> "CameraRig":
        poses = list(poses)
        return cls(np.array([p.position for p in poses]), np.array([p.view_dir for p in poses]),
                   np.array([p.up for p in poses]), lens or LensConfig(), intrinsics or CameraIntrinsics())

    def __len__(self):
        return len(self.positions)

    def pose(self, i: int) -> CameraPose:
        return CameraPose(self.positions[i], self.view_dirs[i], self.ups[i])

    @property
    def poses(self) -> list[CameraPose]:
        return [self.pose(i) for i in range(len(self))]

    @property
    def rights(self) -> np.ndarray:
        return np.cross(self.view_dirs, self.ups)

    def subset(self, idx) -> "CameraRig":
        return CameraRig(self.positions[idx], self.view_dirs[idx], self.ups[idx], self.lens, self.intrinsics)

    def with_poses(self, positions, view_dirs, ups) -> "CameraRig":
        return CameraRig(positions, view_dirs, ups, self.lens, self.intrinsics)

    def with_lens(self, lens: LensConfig) -> "CameraRig":
        return CameraRig(self.positions, self.view_dirs, self.ups, lens, self.intrinsics)


# -- projection -----------------------------------------------------------------

def project(pose: CameraPose, intr: CameraIntrinsics, focal_length: float, points):
    """Pixel coordinates and axial depth of ``points`` (N, 3).

    Returns:
        (u, v, depth); u, v are NaN where depth <= 0.
    """
    rel = np.atleast_2d(np.asarray(points, dtype=np.float64)) - pose.position
    depth = rel @ pose.view_dir
    x = rel @ pose.right
    y = rel @ pose.up
    fpx = focal_length / intr.pixel_pitch
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(depth > 0, depth, np.nan)
        u = intr.cx + fpx * x / safe
        v = intr.cy - fpx * y / safe
    return u, v, depth


def in_image(intr: CameraIntrinsics, u, v) -> np.ndarray:
    """Inside the closed image rectangle [0, W] x [0, H] (NaN counts as outside)."""
    return (u >= 0) & (u <= intr.width) & (v >= 0) & (v <= intr.height)


def _lateral_mask(positions, view_dirs, rights, ups, intr, focal_length, points):
    """(n_points, n_cams) mask of 'inside the image pyramid with positive depth'."""
    rel = points[:, None, :] - positions[None, :, :]
    depth = np.einsum("nmk,mk->nm", rel, view_dirs)
    x = np.einsum("nmk,mk->nm", rel, rights)
    y = np.einsum("nmk,mk->nm", rel, ups)
    fpx = focal_length / intr.pixel_pitch
    ok = depth > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.cx + fpx * x / depth
        v = intr.cy - fpx * y / depth
    return ok & in_image(intr, u, v), depth


def visible(pose: CameraPose, intr: CameraIntrinsics, bvh: Bvh | None, sample,
            focal_length: float = DEFAULT_FOCAL_LENGTH, eps: float | None = None) -> bool:
    """Visibility of one surface sample.

    True iff the point projects inside the image with positive depth, its
    inward normal faces away from the camera (``<view_dir, normal> > 0``) and
    nothing on the mesh blocks the line of sight. ``bvh=None`` means an empty
    scene.
    """
    p = np.asarray(sample.position, dtype=np.float64)
    n = np.asarray(sample.normal, dtype=np.float64)
    u, v, d = project(pose, intr, focal_length, p[None])
    if not (d[0] > 0 and in_image(intr, u, v)[0]):
        return False
    if not pose.view_dir @ n > 0:
        return False
    if bvh is None:
        return True
    return not bvh.is_occluded(pose.position, p, eps)


@dataclass(frozen=True)
class VisibilityPairs:
    """Sparse (sample, camera) visibility with the axial depth of each pair.

    Pairs are sorted by sample, then camera.
    """

    sample: np.ndarray
    camera: np.ndarray
    depth: np.ndarray
    cos_incidence: np.ndarray
    lateral: np.ndarray
    n_samples: int
    n_cameras: int

    def __len__(self):
        return len(self.sample)

    def dense(self) -> np.ndarray:
        m = np.zeros((self.n_samples, self.n_cameras), dtype=bool)
        m[self.sample, self.camera] = True
        return m

    def visible_any(self) -> np.ndarray:
        out = np.zeros(self.n_samples, dtype=bool)
        out[self.sample] = True
        return out


def rig_visibility(rig: CameraRig, samples, bvh: Bvh | None, eps: float | None = None,
                   chunk: int = 64) -> VisibilityPairs:
    """All visible (sample, camera) pairs for a rig.

    Image-bounds and front-facing tests run vectorised per camera block;
    the surviving pairs are then checked for occlusion in one BVH batch.
    """
    pts = np.asarray(samples.positions, dtype=np.float64)
    nrm = np.asarray(samples.normals, dtype=np.float64)
    f = rig.lens.focal_length
    rights = rig.rights
    s_idx, c_idx, dep, cos_i, lat = [], [], [], [], []
    for c0 in range(0, len(rig), chunk):
        sl = slice(c0, min(c0 + chunk, len(rig)))
        mask, depth = _lateral_mask(rig.positions[sl], rig.view_dirs[sl], rights[sl], rig.ups[sl],
                                    rig.intrinsics, f, pts)
        cosang = nrm @ rig.view_dirs[sl].T
        keep = mask & (cosang > 0)
        si, ci = np.nonzero(keep)
        s_idx.append(si)
        c_idx.append(ci + c0)
        dep.append(depth[si, ci])
        cos_i.append(cosang[si, ci])
    si = np.concatenate(s_idx)
    ci = np.concatenate(c_idx)
    depth = np.concatenate(dep)
    cosang = np.concatenate(cos_i)
    if bvh is not None and len(si):
        occ = bvh.occluded(rig.positions[ci], pts[si], eps)
        keep = ~occ
        si, ci, depth, cosang = si[keep], ci[keep], depth[keep], cosang[keep]
    order = np.lexsort((ci, si))
    rel = pts[si[order]] - rig.positions[ci[order]]
    lateral = np.linalg.norm(rel - depth[order, None] * rig.view_dirs[ci[order]], axis=1)
    return VisibilityPairs(si[order], ci[order], depth[order], cosang[order], lateral,
                           len(pts), len(rig))


def in_frustum(pose: CameraPose, intr: CameraIntrinsics, lens: LensConfig, s: float, p) -> bool:
    """Membership in the view frustum clipped at the depth-of-field limits."""
    near, far = dof_limits(lens, s)
    u, v, d = project(pose, intr, lens.focal_length, np.asarray(p, dtype=np.float64)[None])
    return bool(d[0] > 0 and in_image(intr, u, v)[0] and near <= d[0] <= far)


def resolution_at(pose: CameraPose, intr: CameraIntrinsics, lens: LensConfig, sample,
                  bvh: Bvh | None = None) -> float:
    """Object-space size of one pixel at the sample's axial depth (mm/pixel).

    Raises:
        UndefinedResultError: if the sample is not visible from ``pose``.
    """
    if not visible(pose, intr, bvh, sample, lens.focal_length):
        raise UndefinedResultError("resolution is undefined for an invisible sample")
    depth = (np.asarray(sample.position) - pose.position) @ pose.view_dir
    return float(depth * intr.pixel_pitch / lens.focal_length)


def meets_lesion_criterion(resolution) -> np.ndarray | bool:
    """Resolution at or below 0.075 mm/pixel."""
    return np.asarray(resolution) <= LESION_RESOLUTION


def motion_blur(pixels: float, fov_deg: float, omega_deg_s: float, exposure_s: float) -> float:
    """Blur length in pixels: pixels / FOV * angular speed * exposure."""
    if pixels <= 0 or fov_deg <= 0 or omega_deg_s < 0 or exposure_s <= 0:
        raise ValidationError("motion_blur arguments must be positive")
    return pixels / fov_deg * omega_deg_s * exposure_s


def angular_speed(linear_speed: float, radius: float) -> float:
    """deg/s swept at ``radius`` by a point moving at ``linear_speed``."""
    return math.degrees(linear_speed / radius)
