"""Depth rendering and truncated signed distance fusion.

The volume stores ``sdf / truncation`` clamped to [-1, 1], positive in
front of the observed surface (free space) and negative behind it.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numba import njit, prange
from skimage.measure import marching_cubes

from .bvh import Bvh
from .camera import CameraIntrinsics, CameraPose
from .exceptions import MeshFormatError, ValidationError
from .mesh import Mesh

logger = logging.getLogger(__name__)

_JIT = dict(cache=True, error_model="numpy", fastmath=False)

# a small sensor for synthetic depth frames: 240 x 320 px, about 58 x 73 deg at f = 6
DEPTH_INTRINSICS = CameraIntrinsics(width=240, height=320, pixel_pitch=0.046)
DEPTH_FOCAL_LENGTH = 6.0


@dataclass(frozen=True)
class DepthImage:
    """Per-pixel axial depth in mm, 0 where nothing was hit."""

    depth: np.ndarray
    intrinsics: CameraIntrinsics
    pose: CameraPose
    focal_length: float = DEPTH_FOCAL_LENGTH

    def __post_init__(self):
        d = np.array(self.depth, dtype=np.float64)
        if d.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValidationError(f"depth shape {d.shape} does not match the intrinsics")
        if np.any(~np.isfinite(d)) or np.any(d < 0):
            raise ValidationError("depths must be finite and non-negative")
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0

    def pixel_rays(self) -> np.ndarray:
        """(H, W, 3) world-space ray per pixel centre, scaled to unit axial depth."""
        return _pixel_rays(self.pose, self.intrinsics, self.focal_length)

    def points(self) -> np.ndarray:
        """Back-projected 3D points of the valid pixels."""
        rays = self.pixel_rays()[self.valid]
        return self.pose.position + rays * self.depth[self.valid][:, None]

    def normals_cos(self) -> np.ndarray:
        """|cos| of the angle between each pixel ray and the local surface normal.

        Normals come from central differences of the back-projected points
        (one-sided at holes); pixels without usable neighbours get 0.
        """
        rays = self.pixel_rays()
        pts = self.pose.position + rays * self.depth[..., None]
        ok = self.valid
        dx = _diff(pts, ok, axis=1)
        dy = _diff(pts, ok, axis=0)
        n = np.cross(dx, dy)
        nn = np.linalg.norm(n, axis=-1)
        rn = np.linalg.norm(rays, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.abs(np.einsum("ijk,ijk->ij", n, rays)) / (nn * rn)
        return np.where(ok & (nn > 0), np.nan_to_num(c), 0.0)


def _diff(pts, ok, axis):
    """Central difference where both neighbours are valid, else one-sided, else 0."""
    fwd = np.zeros_like(pts)
    bwd = np.zeros_like(pts)
    okf = np.zeros_like(ok)
    okb = np.zeros_like(ok)
    sl_a = [slice(None)] * 2
    sl_b = [slice(None)] * 2
    sl_a[axis] = slice(0, -1)
    sl_b[axis] = slice(1, None)
    a, b = tuple(sl_a), tuple(sl_b)
    fwd[a] = pts[b] - pts[a]
    okf[a] = ok[a] & ok[b]
    bwd[b] = pts[b] - pts[a]
    okb[b] = ok[a] & ok[b]
    both = okf & okb
    out = np.where(both[..., None], 0.5 * (fwd + bwd), 0.0)
    out = np.where((okf & ~okb)[..., None], fwd, out)
    return np.where((okb & ~okf)[..., None], bwd, out)


def _pixel_rays(pose: CameraPose, intr: CameraIntrinsics, focal_length: float) -> np.ndarray:
    fpx = focal_length / intr.pixel_pitch
    u = np.arange(intr.width) + 0.5
    v = np.arange(intr.height) + 0.5
    x = (u - intr.cx) / fpx
    y = -(v - intr.cy) / fpx
    return (pose.view_dir[None, None, :]
            + x[None, :, None] * pose.right[None, None, :]
            + y[:, None, None] * pose.up[None, None, :])


def render_depth(mesh: Mesh | None, bvh: Bvh | None, pose: CameraPose,
                 intr: CameraIntrinsics = DEPTH_INTRINSICS,
                 focal_length: float = DEPTH_FOCAL_LENGTH) -> DepthImage:
    """Ray-cast axial depth through every pixel centre.

    Rays are scaled so their component along the view direction is 1, which
    makes the hit parameter equal to the axial depth. ``mesh=None`` renders
    an empty scene.
    """
    if mesh is None:
        return DepthImage(np.zeros((intr.height, intr.width)), intr, pose, focal_length)
    bvh = bvh if bvh is not None else Bvh(mesh)
    rays = _pixel_rays(pose, intr, focal_length).reshape(-1, 3)
    t, _ = bvh.closest_hits(pose.position[None], rays)
    depth = np.where(np.isfinite(t), t, 0.0).reshape(intr.height, intr.width)
    return DepthImage(depth, intr, pose, focal_length)


def ring_views(n_views: int = 36, radius: float = 450.0, center=(0.0, 0.0, 0.0),
               heights=None, tilt_to_center: bool = True) -> list[CameraPose]:
    """Depth-camera poses on a circle (or stacked circles) looking at ``center``.

    ``heights`` is a sequence of z offsets; ``n_views`` is split evenly
    across them, with the azimuths of successive rings staggered.
    """
    center = np.asarray(center, dtype=np.float64)
    heights = [0.0] if heights is None else list(heights)
    if n_views < len(heights) or n_views % len(heights):
        raise ValidationError("n_views must be a multiple of the number of heights")
    per = n_views // len(heights)
    poses = []
    for k, h in enumerate(heights):
        for i in range(per):
            a = 2.0 * math.pi * (i + 0.5 * (k % 2)) / per
            pos = center + np.array([radius * math.cos(a), radius * math.sin(a), h])
            target = center if tilt_to_center else center + np.array([0.0, 0.0, h])
            poses.append(CameraPose.look_at(pos, target))
    return poses


# -- volume -----------------------------------------------------------------------------

@dataclass
class TsdfVolume:
    """Voxel grid; voxel (i, j, k) is centred at ``origin + (i, j, k) * voxel_size``."""

    origin: np.ndarray
    voxel_size: float
    dims: tuple[int, int, int]
    tsdf: np.ndarray
    weight: np.ndarray
    truncation: float

    def __post_init__(self):
        if not self.voxel_size > 0 or not self.truncation > 0:
            raise ValidationError("voxel_size and truncation must be positive")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)
        if self.tsdf.shape != self.dims or self.weight.shape != self.dims:
            raise ValidationError("tsdf and weight arrays must match dims")

    @classmethod
    def empty(cls, lo, hi, voxel_size: float = 5.0, truncation: float | None = None) -> "TsdfVolume":
        """Unobserved volume covering the box [lo, hi]."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if np.any(hi <= lo):
            raise ValidationError("volume bounds are empty")
        dims = tuple(int(d) for d in np.ceil((hi - lo) / voxel_size).astype(int) + 1)
        trunc = 4.0 * voxel_size if truncation is None else float(truncation)
        return cls(lo, float(voxel_size), dims, np.ones(dims), np.zeros(dims), trunc)

    @classmethod
    def around(cls, mesh: Mesh, voxel_size: float = 5.0, margin: float | None = None,
               truncation: float | None = None) -> "TsdfVolume":
        trunc = 4.0 * voxel_size if truncation is None else truncation
        margin = 2.0 * trunc if margin is None else margin
        b = mesh.bounds
        return cls.empty(b[0] - margin, b[1] + margin, voxel_size, trunc)

    def copy(self) -> "TsdfVolume":
        return replace(self, tsdf=self.tsdf.copy(), weight=self.weight.copy())

    @property
    def observed(self) -> np.ndarray:
        return self.weight > 0

    def integrate(self, img: DepthImage) -> "TsdfVolume":
        """Fuse one frame in place; returns ``self``."""
        pose = img.pose
        cosmap = img.normals_cos()
        _integrate_kernel(self.tsdf, self.weight, self.origin, self.voxel_size, self.truncation,
                          pose.position, pose.right, pose.up, pose.view_dir,
                          img.focal_length / img.intrinsics.pixel_pitch,
                          img.intrinsics.cx, img.intrinsics.cy,
                          np.ascontiguousarray(img.depth), cosmap)
        return self

    def voxel_centers(self, idx) -> np.ndarray:
        return self.origin + np.asarray(idx, dtype=np.float64) * self.voxel_size


@njit(parallel=True, **_JIT)
def _integrate_kernel(tsdf, weight, origin, vs, trunc, pos, right, up, view, fpx, cx, cy,
                      depth, cosmap):
    nx, ny, nz = tsdf.shape
    h, w = depth.shape
    for i in prange(nx):
        px = origin[0] + i * vs - pos[0]
        for j in range(ny):
            py = origin[1] + j * vs - pos[1]
            for k in range(nz):
                pz = origin[2] + k * vs - pos[2]
                d = px * view[0] + py * view[1] + pz * view[2]
                if d <= 0.0:
                    continue
                x = px * right[0] + py * right[1] + pz * right[2]
                y = px * up[0] + py * up[1] + pz * up[2]
                u = cx + fpx * x / d
                v = cy - fpx * y / d
                if not (u >= 0.0 and u < w and v >= 0.0 and v < h):
                    continue
                iu = int(u)
                iv = int(v)
                dp = depth[iv, iu]
                if dp <= 0.0:
                    continue
                sdf = dp - d
                if sdf < -trunc:
                    continue
                if sdf > trunc:
                    val = 1.0
                    wt = 1.0 / (dp * dp)
                else:
                    val = sdf / trunc
                    wt = cosmap[iv, iu] / (dp * dp)
                if wt <= 0.0:
                    continue
                w_old = weight[i, j, k]
                tsdf[i, j, k] = (w_old * tsdf[i, j, k] + wt * val) / (w_old + wt)
                weight[i, j, k] = w_old + wt


def integrate(volume: TsdfVolume, img: DepthImage) -> TsdfVolume:
    """Return a new volume with ``img`` fused in.

    Inside the truncation band each voxel takes the running weighted mean
    of ``clamp(sdf / truncation, -1, 1)`` with weight ``cos / depth^2``,
    where ``sdf = depth_pixel - depth_voxel`` and ``cos`` is measured between
    the pixel ray and the local depth-map normal. Voxels more than one
    truncation in front of the surface are carved towards +1 with weight
    ``1 / depth^2``; voxels more than one truncation behind it are untouched.
    """
    return volume.copy().integrate(img)


def fuse(images, volume: TsdfVolume) -> TsdfVolume:
    """Integrate a sequence of frames into a copy of ``volume``."""
    out = volume.copy()
    for img in images:
        out.integrate(img)
    return out


def _cube_mask(observed: np.ndarray) -> np.ndarray:
    """True at voxel (i, j, k) when all 8 corners of the cube rooted there are observed."""
    m = observed.copy()
    m[:-1] &= observed[1:]
    m[-1] = False
    m2 = m.copy()
    m2[:, :-1] &= m[:, 1:]
    m2[:, -1] = False
    m3 = m2.copy()
    m3[:, :, :-1] &= m2[:, :, 1:]
    m3[:, :, -1] = False
    return m3


def extract_mesh(volume: TsdfVolume) -> Mesh:
    """Zero level set by marching cubes over fully observed cubes.

    Raises:
        ValidationError: no observed zero crossing.
    """
    mask = _cube_mask(volume.observed)
    if not mask.any():
        raise ValidationError("volume has no observed cubes")
    t = volume.tsdf
    if not ((t[mask] < 0).any() and (t[mask] > 0).any()):
        # cube roots alone may miss the sign change; check observed voxels too
        obs = volume.observed
        if not ((t[obs] < 0).any() and (t[obs] > 0).any()):
            raise ValidationError("volume has no zero crossing")
    try:
        verts, faces, _, _ = marching_cubes(t, level=0.0, spacing=(volume.voxel_size,) * 3,
                                            mask=mask)
    except (ValueError, RuntimeError) as exc:
        raise ValidationError(f"surface extraction failed: {exc}") from exc
    if len(faces) == 0:
        raise ValidationError("volume has no zero crossing")
    return Mesh.from_arrays(verts + volume.origin, faces)


def extract_points(volume: TsdfVolume):
    """Zero crossings along voxel edges between observed voxels.

    Returns:
        (points, inward_normals); both empty (0, 3) when nothing crosses zero.
        Normals are the negated, normalised TSDF gradient interpolated to the
        crossing.
    """
    t = volume.tsdf
    obs = volume.observed
    grad = np.stack(np.gradient(t, volume.voxel_size), axis=-1)
    pts, nrm = [], []
    for axis in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(0, -1)
        b[axis] = slice(1, None)
        a, b = tuple(a), tuple(b)
        ta, tb = t[a], t[b]
        cross = obs[a] & obs[b] & ((ta <= 0) != (tb <= 0))
        idx = np.argwhere(cross)
        if len(idx) == 0:
            continue
        va = ta[cross]
        vb = tb[cross]
        frac = va / (va - vb)
        step = np.zeros(3)
        step[axis] = 1.0
        p = volume.voxel_centers(idx) + frac[:, None] * step * volume.voxel_size
        g = (1.0 - frac)[:, None] * grad[a][cross] + frac[:, None] * grad[b][cross]
        pts.append(p)
        nrm.append(-g)
    if not pts:
        logger.warning("TSDF volume has no zero crossing; returning an empty cloud")
        return np.zeros((0, 3)), np.zeros((0, 3))
    p = np.concatenate(pts)
    g = np.concatenate(nrm)
    norm = np.linalg.norm(g, axis=1)
    keep = norm > 0
    return p[keep], g[keep] / norm[keep, None]


def reconstruct(mesh: Mesh, poses, voxel_size: float = 5.0, bvh: Bvh | None = None,
                intr: CameraIntrinsics = DEPTH_INTRINSICS,
                focal_length: float = DEPTH_FOCAL_LENGTH, noise_sigma: float = 0.0,
                seed: int = 0) -> tuple[Mesh, TsdfVolume]:
    """Render ``poses`` against ``mesh``, fuse them and extract a surface.

    ``noise_sigma`` adds Gaussian depth noise (mm) to valid pixels.
    """
    bvh = bvh if bvh is not None else Bvh(mesh)
    vol = TsdfVolume.around(mesh, voxel_size)
    rng = np.random.default_rng(seed)
    for pose in poses:
        img = render_depth(mesh, bvh, pose, intr, focal_length)
        if noise_sigma > 0:
            d = img.depth + rng.normal(0.0, noise_sigma, img.depth.shape) * img.valid
            img = DepthImage(np.maximum(d, 0.0), intr, pose, focal_length)
        vol.integrate(img)
    return extract_mesh(vol), vol


# -- I/O ---------------------------------------------------------------------------------

def save_depth(img: DepthImage, path) -> Path:
    """16-bit binary PGM in whole millimetres plus a ``.json`` sidecar.

    Returns the sidecar path.
    """
    path = Path(path)
    mm = np.rint(img.depth)
    if mm.max(initial=0) > 65535:
        raise ValidationError("depth exceeds the 16-bit millimetre range")
    header = f"P5\n{img.width} {img.height}\n65535\n".encode("ascii")
    path.write_bytes(header + mm.astype(">u2").tobytes())
    side = path.with_suffix(".json")
    intr = img.intrinsics
    side.write_text(json.dumps({
        "intrinsics": {"width": intr.width, "height": intr.height, "pixel_pitch": intr.pixel_pitch,
                       "cx": intr.cx, "cy": intr.cy},
        "focal_length": img.focal_length,
        "pose": {"position": img.pose.position.tolist(), "view_dir": img.pose.view_dir.tolist(),
                 "up": img.pose.up.tolist()},
    }, indent=2))
    return side


def load_depth(path) -> DepthImage:
    path = Path(path)
    data = path.read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval separated by whitespace (comments allowed)
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise MeshFormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(x) for x in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    if len(data) - pos < n:
        raise MeshFormatError(f"{path}: truncated pixel data at byte {pos}")
    depth = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.float64)
    meta = json.loads(path.with_suffix(".json").read_text())
    intr = CameraIntrinsics(**meta["intrinsics"])
    p = meta["pose"]
    return DepthImage(depth, intr, CameraPose(p["position"], p["view_dir"], p["up"]),
                      float(meta["focal_length"]))
