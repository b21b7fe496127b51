"""Focus-plan robustness under calibration noise, shape error and sway.

A plan is computed on one configuration (the *source*) and its focus
distances are frozen and scored on another (the *target*).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .bvh import Bvh
from .calib import axis_angle
from .camera import CameraRig
from .cost import CostParams, CostTable
from .em import FocusPlan, optimize
from .evaluation import infocus_mask
from .exceptions import ValidationError
from .mesh import Mesh

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("trial", "K_self", "K_cross", "infocus_self_pct", "infocus_cross_pct",
                  "affected_pct")


@dataclass(frozen=True)
class NoiseSpec:
    """Per-camera pose noise: magnitudes in mm and degrees."""

    trans_mu: float = 2.5
    trans_sigma: float = 1.0
    rot_mu: float = 0.3
    rot_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.trans_sigma < 0 or self.rot_sigma < 0:
            raise ValidationError("noise sigmas must be non-negative")


@dataclass(frozen=True)
class SwaySpec:
    """Peak-to-peak rigid sway along anterior-posterior (y) and medial-lateral (x)."""

    ap_range: float = 20.0
    ml_range: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.ap_range < 0 or self.ml_range < 0:
            raise ValidationError("sway ranges must be non-negative")


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    # a zero draw has probability 0 but would poison the direction
    v[norm[:, 0] == 0] = [1.0, 0.0, 0.0]
    norm[norm == 0] = 1.0
    return v / norm


def perturb_rig(rig: CameraRig, spec: NoiseSpec) -> CameraRig:
    """Noisy copy of ``rig``.

    Each camera moves by ``max(N(trans_mu, trans_sigma), 0)`` mm in a
    uniformly random direction and turns about its own centre by
    ``max(N(rot_mu, rot_sigma), 0)`` degrees about a uniformly random axis.
    """
    rng = np.random.default_rng(spec.seed)
    n = len(rig)
    t_mag = np.maximum(rng.normal(spec.trans_mu, spec.trans_sigma, n), 0.0)
    t_dir = _unit_vectors(rng, n)
    r_mag = np.maximum(rng.normal(spec.rot_mu, spec.rot_sigma, n), 0.0)
    r_axis = _unit_vectors(rng, n)
    positions = rig.positions + t_mag[:, None] * t_dir
    views = np.empty((n, 3))
    ups = np.empty((n, 3))
    for i in range(n):
        r = axis_angle(r_axis[i], r_mag[i])
        views[i] = r @ rig.view_dirs[i]
        ups[i] = r @ rig.ups[i]
    # renormalise away round-off so the pose validation holds
    views /= np.linalg.norm(views, axis=1, keepdims=True)
    ups -= np.einsum("ij,ij->i", ups, views)[:, None] * views
    ups /= np.linalg.norm(ups, axis=1, keepdims=True)
    return rig.with_poses(positions, views, ups)


def sway_offset(spec: SwaySpec) -> np.ndarray:
    """(ml, ap, 0) drawn uniformly within half the ranges."""
    rng = np.random.default_rng(spec.seed)
    ap = rng.uniform(-spec.ap_range / 2.0, spec.ap_range / 2.0)
    ml = rng.uniform(-spec.ml_range / 2.0, spec.ml_range / 2.0)
    return np.array([ml, ap, 0.0])


def sway_mesh(mesh: Mesh, spec: SwaySpec) -> Mesh:
    """Rigidly translated copy of ``mesh`` (stand-in for postural sway)."""
    return mesh.transformed(translation=sway_offset(spec))


# -- cross evaluation -------------------------------------------------------------------

@dataclass
class Scenario:
    """A rig and sample set, with a lazily built cost table."""

    rig: CameraRig
    samples: object
    bvh: Bvh | None = None
    params: CostParams = field(default_factory=CostParams)
    _table: CostTable | None = field(default=None, repr=False)

    @property
    def table(self) -> CostTable:
        if self._table is None:
            self._table = CostTable.build(self.rig, self.samples, self.params, self.bvh)
        return self._table


@dataclass(frozen=True)
class CrossReport:
    """Self versus cross evaluation of one plan.

    ``affected_pct`` counts samples in focus under the reference evaluation
    but out of focus under the cross evaluation (NaN when the two sample
    sets do not correspond one to one).
    """

    K_self: float
    K_cross: float
    infocus_self_pct: float
    infocus_cross_pct: float
    affected_pct: float
    focus: np.ndarray = field(repr=False)

    @property
    def delta_K(self) -> float:
        return self.K_cross - self.K_self

    @property
    def delta_infocus_pct(self) -> float:
        return self.infocus_cross_pct - self.infocus_self_pct

    def row(self, trial: int) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "focus"}
        return {"trial": trial, **d}


def eval_cross(source: Scenario, target: Scenario, params: CostParams | None = None,
               reference: str = "source", init="average", max_iters: int = 50,
               plan: FocusPlan | None = None) -> CrossReport:
    """Plan on ``source``, freeze the focus distances, score on ``target``.

    Args:
        reference: ``"source"`` compares against the plan scored on its own
            configuration; ``"target"`` compares against a plan optimised
            directly on the target.
        plan: reuse an existing source plan instead of optimising.
    """
    if len(source.rig) != len(target.rig):
        raise ValidationError("source and target rigs must have the same camera count")
    if reference not in ("source", "target"):
        raise ValidationError("reference must be 'source' or 'target'")
    params = params or source.params
    if plan is None:
        plan = optimize(source.rig, source.samples, params, source.bvh, init=init,
                        max_iters=max_iters, table=source.table)
    focus = plan.focus
    t_tab = target.table
    cross_mask = infocus_mask(t_tab, focus)
    k_cross = t_tab.total(focus)
    if reference == "source":
        ref_tab, ref_focus = source.table, focus
    else:
        ref_tab = t_tab
        ref_focus = optimize(target.rig, target.samples, params, target.bvh, init=init,
                             max_iters=max_iters, table=t_tab).focus
    self_mask = infocus_mask(ref_tab, ref_focus)
    k_self = ref_tab.total(ref_focus)
    if len(self_mask) == len(cross_mask):
        affected = float(100.0 * np.mean(self_mask & ~cross_mask))
    else:
        affected = float("nan")
    return CrossReport(k_self, k_cross, float(100.0 * self_mask.mean()),
                       float(100.0 * cross_mask.mean()), affected, focus)


def noise_trials(truth: Scenario, spec: NoiseSpec, n_trials: int = 30,
                 params: CostParams | None = None, init="average",
                 max_iters: int = 50) -> list[CrossReport]:
    """Plan on noisy rigs, score on the true rig; trial ``i`` uses seed ``spec.seed + i``."""
    params = params or truth.params
    out = []
    for i in range(n_trials):
        noisy = perturb_rig(truth.rig, NoiseSpec(spec.trans_mu, spec.trans_sigma, spec.rot_mu,
                                                 spec.rot_sigma, spec.seed + i))
        src = Scenario(noisy, truth.samples, truth.bvh, params)
        rep = eval_cross(src, truth, params, "source", init, max_iters)
        logger.info("noise trial %d: affected %.3f%%", i, rep.affected_pct)
        out.append(rep)
    return out


def sway_trials(rig: CameraRig, mesh: Mesh, samples, spec: SwaySpec, n_trials: int = 30,
                params: CostParams | None = None, bvh: Bvh | None = None, init="average",
                max_iters: int = 50) -> list[CrossReport]:
    """Plan on the neutral pose, score on rigidly swayed copies.

    The swayed samples are the neutral samples shifted by the same offset,
    so the affected area is defined sample by sample.
    """
    params = params or CostParams()
    bvh = bvh if bvh is not None else Bvh(mesh)
    neutral = Scenario(rig, samples, bvh, params)
    plan = optimize(rig, samples, params, bvh, init=init, max_iters=max_iters, table=neutral.table)
    out = []
    for i in range(n_trials):
        s = SwaySpec(spec.ap_range, spec.ml_range, spec.seed + i)
        off = sway_offset(s)
        moved = mesh.transformed(translation=off)
        tgt = Scenario(rig, samples.translated(off), Bvh(moved), params)
        out.append(eval_cross(neutral, tgt, params, "source", plan=plan))
    return out


def write_report(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for i, r in enumerate(reports):
            w.writerow(r.row(i))


def summarize(reports) -> dict:
    aff = np.array([r.affected_pct for r in reports], dtype=np.float64)
    loss = np.array([r.infocus_self_pct - r.infocus_cross_pct for r in reports])
    return {"trials": len(reports), "affected_mean_pct": float(np.nanmean(aff)),
            "affected_std_pct": float(np.nanstd(aff)), "infocus_loss_mean_pct": float(loss.mean())}
