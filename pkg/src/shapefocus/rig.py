"""Cylindrical camera-rig layout.

Cameras sit on a vertical cylinder around the z axis and look horizontally
at it. Angle 0 is +x (lateral side), 90 degrees is +y (anterior/posterior).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, CameraRig, LensConfig
from .exceptions import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RigSpec:
    """Layout parameters.

    ``density-weighted`` splits the circle into two lateral arcs (centred on
    0 and 180 degrees) and two frontal/back arcs. Positions inside a lateral
    arc are ``frontal_speed / lateral_speed`` times closer together, which
    mirrors a constant capture rate at two rotation speeds.
    """

    ring_radius: float = 450.0
    n_vertical: int = 7
    vertical_span: float = 1950.0
    vertical_center: float = 925.0
    n_angular: int = 48
    angular_layout: str = "density-weighted"
    frontal_speed: float = 9.0
    lateral_speed: float = 3.0
    lateral_fraction: float = 0.5

    def __post_init__(self):
        if self.n_vertical < 1 or self.n_angular < 1:
            raise ValidationError("camera counts must be >= 1")
        if self.angular_layout not in ("uniform", "density-weighted"):
            raise ValidationError(f"unknown angular layout {self.angular_layout!r}")
        if not (self.ring_radius > 0 and self.frontal_speed > 0 and self.lateral_speed > 0):
            raise ValidationError("radius and speeds must be positive")
        if not 0 < self.lateral_fraction < 1:
            raise ValidationError("lateral_fraction must lie in (0, 1)")

    @property
    def density_ratio(self) -> float:
        return self.frontal_speed / self.lateral_speed


def angular_positions(spec: RigSpec) -> np.ndarray:
    """Camera azimuths in degrees, in [0, 360)."""
    n = spec.n_angular
    if spec.angular_layout == "uniform":
        return np.arange(n) * 360.0 / n
    lat_span = 360.0 * spec.lateral_fraction / 2.0   # per lateral arc
    fr_span = 360.0 * (1.0 - spec.lateral_fraction) / 2.0
    r = spec.density_ratio
    # per-arc counts from the weighted share of the circle
    n_lat = int(round(n / 2.0 * (lat_span * r) / (lat_span * r + fr_span)))
    n_lat = min(max(n_lat, 0), n // 2)
    n_fr = n // 2 - n_lat
    angles = []
    for arc in range(2):
        c_lat = 180.0 * arc
        c_fr = 90.0 + 180.0 * arc
        if n_lat:
            step = lat_span / n_lat
            angles += list(c_lat - lat_span / 2 + step * (np.arange(n_lat) + 0.5))
        if n_fr:
            step = fr_span / n_fr
            angles += list(c_fr - fr_span / 2 + step * (np.arange(n_fr) + 0.5))
    if n % 2:
        angles.append(90.0)
    return np.sort(np.mod(angles, 360.0))


def heights(spec: RigSpec) -> np.ndarray:
    if spec.n_vertical == 1:
        return np.array([spec.vertical_center])
    return spec.vertical_center + np.linspace(-0.5, 0.5, spec.n_vertical) * spec.vertical_span


def vertical_overlap(spec: RigSpec, lens: LensConfig, intr: CameraIntrinsics) -> float:
    """Fractional FOV overlap of vertically adjacent cameras at the cylinder axis."""
    if spec.n_vertical < 2:
        return float("nan")
    vfov = intr.fov_deg(lens.focal_length)[1]
    footprint = 2.0 * spec.ring_radius * math.tan(math.radians(vfov / 2.0))
    spacing = spec.vertical_span / (spec.n_vertical - 1)
    return 1.0 - spacing / footprint


def generate_rig(spec: RigSpec | None = None, lens: LensConfig | None = None,
                 intrinsics: CameraIntrinsics | None = None) -> CameraRig:
    """Inward-facing cameras on a cylinder, ordered by height then azimuth."""
    spec = spec or RigSpec()
    lens = lens or LensConfig()
    intrinsics = intrinsics or CameraIntrinsics()
    overlap = vertical_overlap(spec, lens, intrinsics)
    if spec.n_vertical > 1 and not 0.3 <= overlap <= 0.5:
        logger.warning("vertical FOV overlap %.1f%% is outside 30-50%%", 100 * overlap)
    theta = np.radians(angular_positions(spec))
    radial = np.stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=1)
    positions, views, ups = [], [], []
    for z in heights(spec):
        positions.append(spec.ring_radius * radial + np.array([0.0, 0.0, z]))
        views.append(-radial)
        ups.append(np.tile([0.0, 0.0, 1.0], (len(theta), 1)))
    return CameraRig(np.concatenate(positions), np.concatenate(views), np.concatenate(ups),
                     lens, intrinsics)
