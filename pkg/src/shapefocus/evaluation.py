"""Plan metrics, per-point dumps and image navigation."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .camera import LESION_RESOLUTION, CameraRig, dof_limits
from .cost import UNASSIGNED, CostParams, CostTable
from .em import FocusPlan
from .exceptions import ValidationError

logger = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    """Summary of a focus plan on one sample set.

    Resolution figures are object-space mm per pixel, reported two ways:
    the best (smallest) value over all cameras that see a sample, and the
    value under the sample's assigned camera. Statistics run over the
    samples for which each convention is defined.
    """

    K_total: float
    n_samples: int
    infocus_pct: float
    visibility_pct: float
    resolution_mean: float
    resolution_sigma: float
    pct_meeting_0075: float
    resolution_assigned_mean: float
    resolution_assigned_sigma: float
    pct_meeting_0075_assigned: float
    iterations: int = 0
    focus_table: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("focus_table")
        return d


def infocus_mask(table: CostTable, focus) -> np.ndarray:
    """Samples inside the depth-of-field frustum of at least one camera that sees them."""
    ok = table.in_dof(focus)
    out = np.zeros(table.n_samples, dtype=bool)
    out[table.vis.sample[ok]] = True
    return out


def pair_resolution(table: CostTable, pixel_pitch: float) -> np.ndarray:
    return table.vis.depth * pixel_pitch / table.lens.focal_length


def best_resolution(table: CostTable, pixel_pitch: float) -> np.ndarray:
    """Per-sample minimum mm/pixel over visible cameras; NaN when unseen."""
    res = np.full(table.n_samples, np.inf)
    np.minimum.at(res, table.vis.sample, pair_resolution(table, pixel_pitch))
    return np.where(np.isfinite(res), res, np.nan)


def assigned_resolution(table: CostTable, pixel_pitch: float, assignment) -> np.ndarray:
    """Per-sample mm/pixel under the assigned camera; NaN when unassigned."""
    assignment = np.asarray(assignment)
    out = np.full(table.n_samples, np.nan)
    sel = assignment[table.vis.sample] == table.vis.camera
    out[table.vis.sample[sel]] = pair_resolution(table, pixel_pitch)[sel]
    return out


def _stats(x):
    x = x[np.isfinite(x)]
    if len(x) == 0:
        return float("nan"), float("nan"), 0.0
    return float(x.mean()), float(x.std()), float(100.0 * np.mean(x <= LESION_RESOLUTION))


def compute_metrics(rig: CameraRig, plan, samples=None, params: CostParams | None = None,
                    bvh=None, table: CostTable | None = None) -> MetricsReport:
    """Evaluate ``plan`` (a :class:`FocusPlan` or per-camera focus array).

    The cost and assignment are always recomputed from the plan's focus
    distances on ``table`` (built from ``samples`` and ``bvh`` if absent),
    so a plan made on one configuration can be scored on another.
    """
    if table is None:
        if samples is None:
            raise ValidationError("samples or a cost table is required")
        table = CostTable.build(rig, samples, params or CostParams(), bvh)
    if table.n_cameras != len(rig):
        raise ValidationError("cost table and rig disagree on the camera count")
    focus = np.asarray(plan.focus if isinstance(plan, FocusPlan) else plan, dtype=np.float64)
    assignment, cost = table.assign(focus)
    n = table.n_samples
    pitch = rig.intrinsics.pixel_pitch
    r_mean, r_sigma, r_pct = _stats(best_resolution(table, pitch))
    a_mean, a_sigma, a_pct = _stats(assigned_resolution(table, pitch, assignment))
    near, far = dof_limits(rig.lens, focus)
    counts = np.bincount(assignment[assignment != UNASSIGNED], minlength=len(rig))
    focus_table = [{"camera": i, "focus": float(focus[i]), "near": float(near[i]),
                    "far": float(far[i]), "assigned": int(counts[i])} for i in range(len(rig))]
    return MetricsReport(
        K_total=float(cost.sum()),
        n_samples=n,
        infocus_pct=float(100.0 * infocus_mask(table, focus).mean()),
        visibility_pct=float(100.0 * table.vis.visible_any().mean()),
        resolution_mean=r_mean,
        resolution_sigma=r_sigma,
        pct_meeting_0075=r_pct,
        resolution_assigned_mean=a_mean,
        resolution_assigned_sigma=a_sigma,
        pct_meeting_0075_assigned=a_pct,
        iterations=plan.iterations if isinstance(plan, FocusPlan) else 0,
        focus_table=focus_table,
    )


POINT_COLUMNS = ("sample_id", "x", "y", "z", "best_camera", "value", "area_term", "deviation_term",
                 "focus_term", "visible", "in_focus", "resolution_best", "resolution_assigned")


def point_table(rig: CameraRig, table: CostTable, focus, positions) -> dict[str, np.ndarray]:
    """Column arrays for the per-point dump."""
    focus = np.asarray(focus, dtype=np.float64)
    b = table.breakdown(focus)
    pitch = rig.intrinsics.pixel_pitch
    pos = np.asarray(positions)
    return {
        "sample_id": np.arange(table.n_samples),
        "x": pos[:, 0], "y": pos[:, 1], "z": pos[:, 2],
        "best_camera": b["camera"],
        "value": b["value"],
        "area_term": b["area_term"],
        "deviation_term": b["deviation_term"],
        "focus_term": b["focus_term"],
        "visible": b["visible"].astype(int),
        "in_focus": infocus_mask(table, focus).astype(int),
        "resolution_best": best_resolution(table, pitch),
        "resolution_assigned": assigned_resolution(table, pitch, b["camera"]),
    }


def write_points_csv(columns: dict[str, np.ndarray], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POINT_COLUMNS)
        for row in zip(*(columns[c] for c in POINT_COLUMNS)):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v) for v in row])


def write_focus_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["camera", "focus", "near", "far", "assigned"])
        w.writeheader()
        w.writerows(report.focus_table)


def plan_to_json(rig: CameraRig, plan: FocusPlan) -> dict:
    """Serialisable plan: one record per camera plus the loop history."""
    near, far = dof_limits(rig.lens, plan.focus)
    counts = plan.assigned_counts(len(rig))
    cams = [{"index": i, "position": rig.positions[i].tolist(), "view_dir": rig.view_dirs[i].tolist(),
             "up": rig.ups[i].tolist(), "focus_mm": float(plan.focus[i]), "d_near_mm": float(near[i]),
             "d_far_mm": float(far[i]) if np.isfinite(far[i]) else None,
             "assigned_count": int(counts[i])} for i in range(len(rig))]
    return {"cameras": cams, "iterations": plan.iterations, "cost_trace": list(plan.cost_trace),
            "K_final": plan.K, "assignment": plan.assignment.tolist()}


def plan_focus(data: dict) -> np.ndarray:
    """Focus distances from :func:`plan_to_json` output, ordered by camera index."""
    try:
        cams = sorted(data["cameras"], key=lambda c: c["index"])
        return np.array([c["focus_mm"] for c in cams], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed plan: {exc}") from exc


# -- navigation ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NavigationResult:
    """Camera whose image best shows a queried surface point.

    ``camera`` is ``UNASSIGNED`` when the nearest sample has no coverage.
    """

    camera: int
    sample: int
    distance: float

    @property
    def covered(self) -> bool:
        return self.camera != UNASSIGNED


class Navigator:
    """Nearest-sample lookup from 3D points to assigned cameras."""

    def __init__(self, positions, assignment):
        pos = np.asarray(getattr(positions, "positions", positions), dtype=np.float64)
        assignment = np.asarray(assignment)
        if len(pos) == 0:
            raise ValidationError("navigation needs at least one sample")
        if len(assignment) != len(pos):
            raise ValidationError("one assignment per sample is required")
        self.assignment = assignment
        self.tree = cKDTree(pos)
        self.diagonal = float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))

    def query(self, points):
        """Vectorised lookup; returns (camera, sample, distance) arrays."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        dist, idx = self.tree.query(pts)
        far = dist > self.diagonal
        if far.any():
            logger.warning("%d query point(s) lie farther than the sample-cloud diagonal "
                           "(%.1f mm) from every sample", int(far.sum()), self.diagonal)
        return self.assignment[idx], idx, dist

    def __call__(self, point) -> NavigationResult:
        cam, idx, dist = self.query(np.asarray(point, dtype=np.float64).reshape(1, 3))
        if cam[0] == UNASSIGNED:
            logger.info("nearest sample %d has no camera coverage", idx[0])
        return NavigationResult(int(cam[0]), int(idx[0]), float(dist[0]))


def navigate(samples, assignment, query) -> NavigationResult:
    """Camera assigned to the sample nearest ``query``."""
    return Navigator(samples, assignment)(query)
