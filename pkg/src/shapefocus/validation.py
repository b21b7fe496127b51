"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .camera import CameraRig
from .exceptions import ValidationError
from .sampling import SurfaceSamples


def check_points(points, name: str = "points") -> np.ndarray:
    """Finite (n, 3) float array; a single 3-vector is promoted to (1, 3)."""
    if np.ndim(points) == 1:
        points = np.reshape(points, (1, -1))
    try:
        arr = check_array(points, dtype=np.float64, ensure_min_samples=1, input_name=name)
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from exc
    if arr.shape[1] != 3:
        raise ValidationError(f"{name} must be an (n, 3) array")
    return arr


def check_samples(X) -> SurfaceSamples:
    """Accept :class:`SurfaceSamples` or an (n, 6) array of positions and inward normals."""
    if isinstance(X, SurfaceSamples):
        if len(X) == 0:
            raise ValidationError("at least one sample is required")
        return X
    try:
        arr = check_array(X, dtype=np.float64, ensure_min_samples=1, input_name="X")
    except ValueError as exc:
        raise ValidationError(f"X: {exc}") from exc
    if arr.shape[1] != 6:
        raise ValidationError("X must have 6 columns: x, y, z, nx, ny, nz")
    normals = arr[:, 3:]
    if np.any(np.linalg.norm(normals, axis=1) == 0):
        raise ValidationError("sample normals must be non-zero")
    return SurfaceSamples.from_points(arr[:, :3], normals)


def check_focus(focus, rig: CameraRig) -> np.ndarray:
    """One finite focus distance beyond the focal length per camera."""
    f = np.asarray(focus, dtype=np.float64).reshape(-1)
    if len(f) != len(rig):
        raise ValidationError(f"expected {len(rig)} focus distances, got {len(f)}")
    if np.any(~np.isfinite(f)) or np.any(f <= rig.lens.focal_length):
        raise ValidationError("focus distances must be finite and exceed the focal length")
    return f
