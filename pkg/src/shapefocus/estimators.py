"""scikit-learn style wrappers around the focus planners.

``fit`` takes surface samples (or an (n, 6) array of positions and inward
normals) and learns one focus distance per camera. ``predict`` maps query
points to the camera whose image should be shown for them.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bvh import Bvh
from .camera import CameraRig
from .cost import CostParams, CostTable
from .em import baseline_average, baseline_closest, evaluate_focus, optimize
from .evaluation import Navigator, compute_metrics, infocus_mask
from .rig import generate_rig
from .validation import check_points, check_samples


class _FocusPlanner(BaseEstimator):
    def __init__(self, rig: CameraRig | None = None, w1: float = 1 / 3, w2: float = 1 / 3,
                 w3: float = 1 / 3, eps1: float = 2.47e-6, eps2: float = 450.0,
                 occlusion_eps: float | None = None):
        self.rig = rig
        self.w1 = w1
        self.w2 = w2
        self.w3 = w3
        self.eps1 = eps1
        self.eps2 = eps2
        self.occlusion_eps = occlusion_eps

    def _cost_params(self) -> CostParams:
        return CostParams(self.w1, self.w2, self.w3, self.eps1, self.eps2,
                          getattr(self, "em_eps", 1e-3))

    def fit(self, X, y=None, bvh: Bvh | None = None):
        """Plan focus distances for samples ``X``.

        Args:
            X: :class:`SurfaceSamples` or (n, 6) array.
            y: ignored.
            bvh: occluding geometry; ``None`` means no occlusion.
        """
        samples = check_samples(X)
        rig = self.rig if self.rig is not None else generate_rig()
        self.rig_ = rig
        self.samples_ = samples
        self.table_ = CostTable.build(rig, samples, self._cost_params(), bvh, self.occlusion_eps)
        plan = self._plan(rig, samples, bvh)
        self.plan_ = plan
        self.focus_ = plan.focus
        self.assignment_ = plan.assignment
        self.cost_trace_ = list(plan.cost_trace)
        self.n_iter_ = plan.iterations
        self.K_ = plan.K
        self.navigator_ = Navigator(samples.positions, plan.assignment)
        return self

    def predict(self, X) -> np.ndarray:
        """Camera index for each query point (-1 where the nearest sample is uncovered)."""
        check_is_fitted(self, "focus_")
        cams, _, _ = self.navigator_.query(check_points(X, "X"))
        return cams

    def score(self, X=None, y=None) -> float:
        """Fraction of training samples in focus (``X`` must be omitted or the training set)."""
        check_is_fitted(self, "focus_")
        return float(infocus_mask(self.table_, self.focus_).mean())

    def metrics(self):
        check_is_fitted(self, "focus_")
        return compute_metrics(self.rig_, self.plan_, table=self.table_)


class ShapeAwareFocus(_FocusPlanner):
    """Alternating assignment / focus minimisation.

    Attributes:
        focus_: per-camera focus distance, mm.
        assignment_: per-sample camera (-1 when no camera sees it at cost < 1).
        cost_trace_: total cost after initialisation and after every loop.
        n_iter_: loops run.
    """

    def __init__(self, rig: CameraRig | None = None, w1: float = 1 / 3, w2: float = 1 / 3,
                 w3: float = 1 / 3, eps1: float = 2.47e-6, eps2: float = 450.0,
                 occlusion_eps: float | None = None, em_eps: float = 1e-3, init="average",
                 max_iters: int = 50):
        super().__init__(rig, w1, w2, w3, eps1, eps2, occlusion_eps)
        self.em_eps = em_eps
        self.init = init
        self.max_iters = max_iters

    def _plan(self, rig, samples, bvh):
        return optimize(rig, samples, self._cost_params(), bvh, init=self.init,
                        max_iters=self.max_iters, table=self.table_)


class AverageFocus(_FocusPlanner):
    """Each camera focused at the mean depth of the samples it sees."""

    def _plan(self, rig, samples, bvh):
        return evaluate_focus(self.table_, baseline_average(rig, samples, bvh, self.table_))


class ClosestFocus(_FocusPlanner):
    """Each camera focused at the nearest sample it sees."""

    def _plan(self, rig, samples, bvh):
        return evaluate_focus(self.table_, baseline_closest(rig, samples, bvh, self.table_))
