"""Shape-aware focus planning for multi-camera total-body imaging rigs."""

from .bvh import Bvh
from .calib import SimilarityTransform, fit_similarity, pose_repeatability, reprojection_error
from .camera import (CameraIntrinsics, CameraPose, CameraRig, LensConfig, dof_limits, hyperfocal,
                     in_frustum, motion_blur, project, resolution_at, visible)
from .cost import UNASSIGNED, CostParams, CostTable, point_cost, total_cost
from .em import (FocusPlan, StabbingInterval, assignment_step, baseline_average, baseline_closest,
                 minimization_step, optimize, stab)
from .estimators import AverageFocus, ClosestFocus, ShapeAwareFocus
from .evaluation import MetricsReport, compute_metrics, navigate
from .exceptions import (ConfigError, DomainError, MeshFormatError, RankDeficiencyError,
                         ShapeFocusError, StageError, UndefinedResultError, ValidationError)
from .mesh import Mesh, load_mesh, save_obj, save_ply
from .recon import DepthImage, TsdfVolume, extract_mesh, extract_points, integrate, render_depth
from .rig import RigSpec, generate_rig
from .robustness import NoiseSpec, SwaySpec, eval_cross, perturb_rig, sway_mesh
from .sampling import SurfaceSamples, chamfer, sample_surface

__version__ = "0.1.0"
