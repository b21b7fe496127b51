"""Alternating assignment / focus minimisation, plus the baseline protocols.

The minimisation step only needs, per camera, the focus distance at which
the most assigned points sit inside the depth of field. Each point admits a
closed interval of such focus distances, so the step is an interval-stabbing
problem solved by a sweep over sorted endpoints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bvh import Bvh
from .camera import CameraIntrinsics, CameraPose, CameraRig, LensConfig, in_image, project
from .cost import UNASSIGNED, CostParams, CostTable
from .exceptions import ValidationError

logger = logging.getLogger(__name__)

INIT_STRATEGIES = ("average", "closest", "hyperfocal")


@dataclass(frozen=True)
class StabbingInterval:
    """Closed range of focus distances that keep one point in focus."""

    lo: float
    hi: float

    @property
    def empty(self) -> bool:
        return not self.lo <= self.hi

    def __contains__(self, s) -> bool:
        return (not self.empty) and self.lo <= s <= self.hi

    @classmethod
    def none(cls) -> "StabbingInterval":
        return cls(np.inf, -np.inf)


@dataclass
class FocusPlan:
    """Result of a focus optimisation.

    Attributes:
        focus: (n_cameras,) focus distance per camera, mm.
        assignment: (n_samples,) camera per sample or ``UNASSIGNED``.
        iterations: EM loops executed (0 for the baselines).
        cost_trace: total cost after initialisation and after every loop.
        point_costs: (n_samples,) cost of each sample under its camera.
    """

    focus: np.ndarray
    assignment: np.ndarray
    iterations: int = 0
    cost_trace: list[float] = field(default_factory=list)
    point_costs: np.ndarray | None = None

    @property
    def K(self) -> float:
        if self.point_costs is not None:
            return float(self.point_costs.sum())
        return self.cost_trace[-1]

    def assigned_counts(self, n_cameras: int | None = None) -> np.ndarray:
        n = n_cameras or len(self.focus)
        a = self.assignment[self.assignment != UNASSIGNED]
        return np.bincount(a, minlength=n)


# -- focus intervals ----------------------------------------------------------------

def focus_intervals(depth, lens: LensConfig):
    """Vectorised focus-distance intervals for axial depths.

    Inverting the near/far limits gives, with ``H`` the scaled hyperfocal
    distance::

        lo = d H / (H - f + d)
        hi = d (H - 2f) / (H - f - d), capped at H

    Focusing beyond ``H`` only pushes the near limit further out, so the cap
    loses nothing. Depths ``<= f`` get an empty interval (lo=inf, hi=-inf).
    """
    d = np.asarray(depth, dtype=np.float64)
    f = lens.focal_length
    h = lens.effective_hyperfocal
    lo = d * h / (h - f + d)
    with np.errstate(divide="ignore", invalid="ignore"):
        hi = np.where(d < h / 2.0, d * (h - 2.0 * f) / (h - f - d), h)
    hi = np.minimum(hi, h)
    bad = ~(d > f)
    lo = np.where(bad, np.inf, lo)
    hi = np.where(bad, -np.inf, hi)
    return lo, hi


def point_focus_interval(pose: CameraPose, intr: CameraIntrinsics, lens: LensConfig,
                         sample) -> StabbingInterval:
    """Focus distances for which ``sample`` lies in the camera's DoF frustum.

    Empty when the point is outside the image pyramid or no deeper than the
    focal length.
    """
    p = np.asarray(getattr(sample, "position", sample), dtype=np.float64)
    u, v, d = project(pose, intr, lens.focal_length, p[None])
    if not (d[0] > 0 and in_image(intr, u, v)[0]):
        return StabbingInterval.none()
    lo, hi = focus_intervals(d, lens)
    return StabbingInterval(float(lo[0]), float(hi[0]))


def stab(lo, hi):
    """Most-stabbed region of a set of closed intervals.

    Returns:
        (s, count, (left, right)): ``s`` is the midpoint of the winning
        region, ``count`` the number of intervals containing it. Among regions
        with equal count the longest wins, then the leftmost. Returns
        ``(nan, 0, (nan, nan))`` when every interval is empty.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    ok = lo <= hi
    lo, hi = lo[ok], hi[ok]
    if len(lo) == 0:
        return float("nan"), 0, (float("nan"), float("nan"))
    ls = np.sort(lo)
    hs = np.sort(hi)
    x = np.unique(np.concatenate([ls, hs]))
    started = np.searchsorted(ls, x, side="right")
    at_point = started - np.searchsorted(hs, x, side="left")
    open_seg = (started - np.searchsorted(hs, x, side="right"))[:-1]
    # interleave: point x0, segment (x0, x1), point x1, ...
    counts = np.empty(2 * len(x) - 1, dtype=np.int64)
    counts[0::2] = at_point
    counts[1::2] = open_seg
    left = np.repeat(x, 2)[:-1]
    right = np.repeat(x, 2)[1:]
    best = counts.max()
    is_max = np.concatenate([[False], counts == best, [False]])
    edges = np.flatnonzero(np.diff(is_max.astype(np.int8)))
    run_start, run_end = edges[0::2], edges[1::2] - 1
    lengths = right[run_end] - left[run_start]
    # longest run; argmax returns the first (leftmost) among equals
    k = int(np.argmax(lengths))
    a, b = left[run_start[k]], right[run_end[k]]
    return 0.5 * (a + b), int(best), (float(a), float(b))


# -- EM steps -----------------------------------------------------------------------

def _table(rig, samples, params, bvh, table):
    if table is not None:
        return table
    return CostTable.build(rig, samples, params or CostParams(), bvh)


def assignment_step(rig: CameraRig, focus, samples, params: CostParams | None = None,
                    bvh: Bvh | None = None, table: CostTable | None = None) -> np.ndarray:
    """Camera of minimum cost for each sample; ``UNASSIGNED`` when all cost 1."""
    focus = np.asarray(focus, dtype=np.float64)
    if len(focus) != len(rig):
        raise ValidationError("one focus distance per camera is required")
    assignment, _ = _table(rig, samples, params, bvh, table).assign(focus)
    return assignment


def minimization_step(rig: CameraRig, assignment, samples, lens: LensConfig | None = None,
                      previous=None) -> np.ndarray:
    """Per camera, the focus distance keeping most assigned samples in focus.

    Cameras without assigned samples keep their ``previous`` focus distance
    (or the scaled hyperfocal distance when none is given).
    """
    lens = lens or rig.lens
    assignment = np.asarray(assignment)
    pts = np.asarray(samples.positions if hasattr(samples, "positions") else samples)
    if previous is None:
        focus = np.full(len(rig), lens.effective_hyperfocal)
    else:
        focus = np.array(previous, dtype=np.float64)
    idx = np.flatnonzero(assignment != UNASSIGNED)
    cams = assignment[idx]
    depth = np.einsum("ij,ij->i", pts[idx] - rig.positions[cams], rig.view_dirs[cams])
    lo, hi = focus_intervals(depth, lens)
    order = np.argsort(cams, kind="stable")
    cams_sorted = cams[order]
    bounds = np.searchsorted(cams_sorted, np.arange(len(rig) + 1))
    for c in range(len(rig)):
        a, b = bounds[c], bounds[c + 1]
        if a == b:
            continue
        sel = order[a:b]
        s, count, _ = stab(lo[sel], hi[sel])
        if count > 0:
            focus[c] = s
    return focus


# -- baselines ----------------------------------------------------------------------

def _per_camera_depth(rig, samples, bvh, table, reduce):
    vis = table.vis if table is not None else CostTable.build(rig, samples, CostParams(), bvh).vis
    f = rig.lens.focal_length
    focus = np.full(len(rig), rig.lens.effective_hyperfocal)
    order = np.argsort(vis.camera, kind="stable")
    cams = vis.camera[order]
    depth = vis.depth[order]
    bounds = np.searchsorted(cams, np.arange(len(rig) + 1))
    for c in range(len(rig)):
        a, b = bounds[c], bounds[c + 1]
        if a < b:
            focus[c] = reduce(depth[a:b])
    # focus must stay strictly beyond the focal length
    return np.maximum(focus, f * (1.0 + 1e-9) + 1e-9)


def baseline_closest(rig: CameraRig, samples, bvh: Bvh | None = None,
                     table: CostTable | None = None) -> np.ndarray:
    """Focus each camera at the nearest visible sample's axial depth."""
    return _per_camera_depth(rig, samples, bvh, table, np.min)


def baseline_average(rig: CameraRig, samples, bvh: Bvh | None = None,
                     table: CostTable | None = None) -> np.ndarray:
    """Focus each camera at the mean axial depth of its visible samples."""
    return _per_camera_depth(rig, samples, bvh, table, np.mean)


def initial_focus(init, rig, samples, bvh, table) -> np.ndarray:
    if isinstance(init, str):
        if init == "average":
            return baseline_average(rig, samples, bvh, table)
        if init == "closest":
            return baseline_closest(rig, samples, bvh, table)
        if init == "hyperfocal":
            return np.full(len(rig), rig.lens.effective_hyperfocal)
        raise ValidationError(f"unknown init strategy {init!r}; choose from {INIT_STRATEGIES}")
    focus = np.array(init, dtype=np.float64).reshape(-1)
    if len(focus) != len(rig) or np.any(~(focus > rig.lens.focal_length)):
        raise ValidationError("explicit initial focus must give one value > f per camera")
    return focus


def optimize(rig: CameraRig, samples, params: CostParams | None = None, bvh: Bvh | None = None,
             init="average", max_iters: int = 50, table: CostTable | None = None) -> FocusPlan:
    """Shape-aware focus by alternating assignment and focus minimisation.

    Stops when a loop fails to lower the cost by a relative ``params.em_eps``
    or after ``max_iters`` loops. The reference cost for the first test is
    the cost of the initial plan, so an already optimal start exits after
    one loop.
    """
    params = params or CostParams()
    table = _table(rig, samples, params, bvh, table)
    if table.n_samples == 0:
        raise ValidationError("at least one sample is required")
    focus = initial_focus(init, rig, samples, bvh, table)
    assignment, cost = table.assign(focus)
    k_old = float(cost.sum())
    trace = [k_old]
    iterations = 0
    for iterations in range(1, max_iters + 1):
        new_focus = minimization_step(rig, assignment, samples, rig.lens, previous=focus)
        k = table.assigned_total(assignment, new_focus)
        focus = new_focus
        assignment, cost = table.assign(focus)
        trace.append(float(cost.sum()))
        logger.debug("EM loop %d: K(phi, S) = %.6f, K(S) = %.6f", iterations, k, trace[-1])
        if k > k_old * (1.0 - params.em_eps):
            break
        k_old = k
    return FocusPlan(focus, assignment, iterations, trace, cost)


def evaluate_focus(table: CostTable, focus, iterations: int = 0) -> FocusPlan:
    """Wrap a fixed set of focus distances as a plan with its optimal assignment."""
    focus = np.asarray(focus, dtype=np.float64)
    assignment, cost = table.assign(focus)
    return FocusPlan(focus, assignment, iterations, [float(cost.sum())], cost)
