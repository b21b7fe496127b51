"""Per-camera point cost and the integrated plan cost.

A visible point pays ``w1 * area + w2 * deviation + w3 * (1 - in_dof)``;
an invisible one pays 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bvh import Bvh
from .camera import CameraIntrinsics, CameraPose, CameraRig, LensConfig, VisibilityPairs, \
    dof_limits, in_frustum, rig_visibility, visible
from .exceptions import ValidationError

UNASSIGNED = -1


@dataclass(frozen=True)
class CostParams:
    """Weights and thresholds of the point cost.

    ``eps1`` is a coefficient in 1/mm^2: at 450 mm depth and 60 degrees
    incidence, ``eps1 * d^2 / cos`` equals 1.
    """

    w1: float = 1.0 / 3.0
    w2: float = 1.0 / 3.0
    w3: float = 1.0 / 3.0
    eps1: float = 2.47e-6
    eps2: float = 450.0
    em_eps: float = 1e-3

    def __post_init__(self):
        w = (self.w1, self.w2, self.w3)
        if min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
            raise ValidationError("weights must be non-negative and sum to 1")
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise ValidationError("eps1 and eps2 must be positive")
        if not 0 < self.em_eps < 1:
            raise ValidationError("em_eps must lie in (0, 1)")


@dataclass(frozen=True)
class PointCost:
    value: float
    area_term: float
    deviation_term: float
    focus_term: float
    visible: bool


def area_term(depth, cos_incidence, eps1: float):
    with np.errstate(divide="ignore", over="ignore"):
        return np.minimum(eps1 * np.asarray(depth) ** 2 / np.asarray(cos_incidence), 1.0)


def deviation_term(lateral, eps2: float):
    return np.minimum(np.asarray(lateral) / eps2, 1.0)


def point_cost(pose: CameraPose, intr: CameraIntrinsics, lens: LensConfig, s: float, sample,
               params: CostParams, bvh: Bvh | None) -> PointCost:
    """Cost of imaging ``sample`` with camera ``pose`` focused at ``s``."""
    if not s > lens.focal_length:
        dof_limits(lens, s)  # raises DomainError
    if not visible(pose, intr, bvh, sample, lens.focal_length):
        return PointCost(1.0, 1.0, 1.0, 1.0, False)
    rel = np.asarray(sample.position, dtype=np.float64) - pose.position
    depth = rel @ pose.view_dir
    cosang = pose.view_dir @ np.asarray(sample.normal, dtype=np.float64)
    a = float(area_term(depth, cosang, params.eps1))
    dv = float(deviation_term(np.linalg.norm(rel - depth * pose.view_dir), params.eps2))
    fo = 0.0 if in_frustum(pose, intr, lens, s, sample.position) else 1.0
    value = params.w1 * a + params.w2 * dv + params.w3 * fo
    return PointCost(float(min(max(value, 0.0), 1.0)), a, dv, fo, True)


class CostTable:
    """Focus-independent part of the cost for every visible (sample, camera) pair.

    The area and deviation terms do not depend on the focus distance, so
    they are computed once; :meth:`pair_costs` adds the focus term for a
    given plan.
    """

    def __init__(self, vis: VisibilityPairs, lens: LensConfig, params: CostParams):
        self.vis = vis
        self.lens = lens
        self.params = params
        self.area = area_term(vis.depth, vis.cos_incidence, params.eps1)
        self.deviation = deviation_term(vis.lateral, params.eps2)
        self.static = params.w1 * self.area + params.w2 * self.deviation

    @classmethod
    def build(cls, rig: CameraRig, samples, params: CostParams, bvh: Bvh | None,
              eps: float | None = None) -> "CostTable":
        return cls(rig_visibility(rig, samples, bvh, eps), rig.lens, params)

    @property
    def n_samples(self) -> int:
        return self.vis.n_samples

    @property
    def n_cameras(self) -> int:
        return self.vis.n_cameras

    def in_dof(self, focus) -> np.ndarray:
        """Per-pair flag: depth inside [D_N, D_F] of the pair's camera."""
        near, far = dof_limits(self.lens, np.asarray(focus, dtype=np.float64))
        c = self.vis.camera
        d = self.vis.depth
        return (near[c] <= d) & (d <= far[c])

    def pair_costs(self, focus) -> np.ndarray:
        fo = ~self.in_dof(focus)
        return np.minimum(self.static + self.params.w3 * fo, 1.0)

    def cost_matrix(self, focus) -> np.ndarray:
        """Dense (n_samples, n_cameras) cost, 1 where invisible."""
        m = np.ones((self.n_samples, self.n_cameras))
        m[self.vis.sample, self.vis.camera] = self.pair_costs(focus)
        return m

    def assign(self, focus):
        """Cheapest camera per sample (lowest index on ties).

        Returns:
            (assignment, per-sample minimum cost). Samples whose best cost is
            1 get ``UNASSIGNED``.
        """
        m = self.cost_matrix(focus)
        best = np.argmin(m, axis=1)
        cost = m[np.arange(len(m)), best]
        assignment = np.where(cost < 1.0, best, UNASSIGNED)
        return assignment, cost

    def total(self, focus) -> float:
        return float(self.cost_matrix(focus).min(axis=1).sum())

    def assigned_total(self, assignment, focus) -> float:
        """Sum of each sample's cost under its given camera."""
        m = self.cost_matrix(focus)
        a = np.asarray(assignment)
        cost = np.ones(len(a))
        ok = a != UNASSIGNED
        cost[ok] = m[np.flatnonzero(ok), a[ok]]
        return float(cost.sum())

    def breakdown(self, focus, assignment=None) -> dict[str, np.ndarray]:
        """Per-sample cost terms under ``assignment`` (default: cheapest camera).

        Unassigned samples report value 1 and all terms 1.
        """
        focus = np.asarray(focus, dtype=np.float64)
        if assignment is None:
            assignment, _ = self.assign(focus)
        assignment = np.asarray(assignment)
        n = self.n_samples
        out = {
            "camera": assignment.copy(),
            "value": np.ones(n),
            "area_term": np.ones(n),
            "deviation_term": np.ones(n),
            "focus_term": np.ones(n),
            "visible": self.vis.visible_any(),
        }
        sel = np.flatnonzero(assignment[self.vis.sample] == self.vis.camera)
        s = self.vis.sample[sel]
        fo = (~self.in_dof(focus)[sel]).astype(np.float64)
        out["area_term"][s] = self.area[sel]
        out["deviation_term"][s] = self.deviation[sel]
        out["focus_term"][s] = fo
        out["value"][s] = np.minimum(self.static[sel] + self.params.w3 * fo, 1.0)
        return out


def total_cost(rig: CameraRig, focus, samples, params: CostParams, bvh: Bvh | None,
               table: CostTable | None = None):
    """K = sum over samples of the minimum cost across cameras.

    Returns:
        (K, per-point PointCost list for the cheapest camera of each sample).
    """
    focus = np.asarray(focus, dtype=np.float64)
    if len(focus) != len(rig):
        raise ValidationError("one focus distance per camera is required")
    table = table or CostTable.build(rig, samples, params, bvh)
    assignment, cost = table.assign(focus)
    b = table.breakdown(focus, assignment)
    per_point = [PointCost(float(v), float(a), float(d), float(f), bool(vis))
                 for v, a, d, f, vis in zip(b["value"], b["area_term"], b["deviation_term"],
                                            b["focus_term"], b["visible"])]
    return float(cost.sum()), per_point
