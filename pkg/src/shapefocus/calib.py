"""Similarity alignment and calibration-quality metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, CameraPose, project
from .exceptions import RankDeficiencyError, ValidationError


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * R @ x + t."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    rms: float = 0.0

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not self.scale > 0:
            raise ValidationError("scale must be positive")

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    @property
    def matrix(self) -> np.ndarray:
        h = np.eye(4)
        h[:3, :3] = self.scale * self.rotation
        h[:3, 3] = self.translation
        return h

    def to_json(self) -> dict:
        return {
            "scale": self.scale,
            "rotation": self.rotation.reshape(-1).tolist(),
            "translation": self.translation.tolist(),
            "rms": self.rms,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SimilarityTransform":
        return cls(float(data["scale"]), np.reshape(data["rotation"], (3, 3)),
                   data["translation"], float(data.get("rms", 0.0)))


def fit_similarity(source, target, rank_tol: float = 1e-9) -> SimilarityTransform:
    """Least-squares scale, rotation and translation mapping source onto target.

    Closed form: centre both sets, take the SVD of the cross-covariance,
    fix a reflection with the sign of the determinant, and read the scale
    off the singular values over the source variance.

    Raises:
        ValidationError: different lengths or fewer than 3 points.
        RankDeficiencyError: source points collinear or coincident.
    """
    src = np.asarray(source, dtype=np.float64)
    dst = np.asarray(target, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValidationError("source and target must be matching (N, 3) arrays")
    if len(src) < 3:
        raise ValidationError("at least 3 correspondences are required")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] == 0 or sv[1] <= rank_tol * sv[0]:
        raise RankDeficiencyError("source points are collinear or coincident")
    n = len(src)
    cov = xd.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    r = u @ np.diag(s) @ vt
    var_s = (xs ** 2).sum() / n
    scale = float((d * s).sum() / var_s)
    t = mu_d - scale * r @ mu_s
    resid = dst - (scale * src @ r.T + t)
    rms = float(np.sqrt((resid ** 2).sum(axis=1).mean()))
    return SimilarityTransform(scale, r, t, rms)


def reprojection_error(points3d, observations2d, pose: CameraPose, intr: CameraIntrinsics,
                       focal_length: float, gate_px: float = 4.0):
    """Mean pixel residual over residuals no larger than ``gate_px``.

    Returns:
        (mean_px, inlier_count); mean is NaN when nothing survives the gate.
    """
    pts = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    obs = np.asarray(observations2d, dtype=np.float64).reshape(-1, 2)
    if len(pts) != len(obs):
        raise ValidationError("points and observations must be matched")
    u, v, _ = project(pose, intr, focal_length, pts)
    resid = np.hypot(u - obs[:, 0], v - obs[:, 1])
    keep = resid <= gate_px
    mean = float(resid[keep].mean()) if keep.any() else float("nan")
    return mean, int(keep.sum())


def rotation_angle_deg(r1, r2) -> float:
    """Relative rotation angle acos((trace(R1^T R2) - 1) / 2) in degrees.

    Evaluated as atan2(sin, cos) with the sine taken from the skew part of
    R1^T R2. The value matches the clamped arccosine but keeps full
    precision near 0 and 180 degrees, where acos loses about half the digits.
    """
    m = np.asarray(r1, dtype=np.float64).T @ np.asarray(r2, dtype=np.float64)
    c = (np.trace(m) - 1.0) / 2.0
    skew = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    sin = 0.5 * float(np.linalg.norm(skew))
    return math.degrees(math.atan2(sin, min(1.0, max(-1.0, c))))


def pose_repeatability(a, b):
    """Translation distance (mm) and relative rotation angle (degrees).

    ``a`` and ``b`` are either :class:`CameraPose` objects or
    ``(translation, rotation)`` pairs.
    """
    t1, r1 = _tr(a)
    t2, r2 = _tr(b)
    return float(np.linalg.norm(t1 - t2)), rotation_angle_deg(r1, r2)


def _tr(p):
    if isinstance(p, CameraPose):
        return p.position, p.rotation
    t, r = p
    return np.asarray(t, dtype=np.float64), np.asarray(r, dtype=np.float64)


def axis_angle(axis, angle_deg: float) -> np.ndarray:
    """Rotation matrix about ``axis`` (Rodrigues)."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    a = math.radians(angle_deg)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(a) * kx + (1 - math.cos(a)) * kx @ kx


def read_correspondences(path):
    """CSV with columns x_src,y_src,z_src,x_tgt,y_tgt,z_tgt."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError(f"{path}: no correspondences")
    try:
        src = np.array([[float(r["x_src"]), float(r["y_src"]), float(r["z_src"])] for r in rows])
        dst = np.array([[float(r["x_tgt"]), float(r["y_tgt"]), float(r["z_tgt"])] for r in rows])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: bad correspondence row: {exc}") from exc
    return src, dst


def write_transform(transform: SimilarityTransform, path) -> None:
    Path(path).write_text(json.dumps(transform.to_json(), indent=2))
