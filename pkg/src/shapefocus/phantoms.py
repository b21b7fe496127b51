"""Synthetic test meshes: spheres, boxes, capsules and a humanoid body.

All meshes are closed and wound counter-clockwise when seen from outside.
Units are millimetres; z is up, x is medial-lateral, y is anterior-posterior.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from skimage.measure import marching_cubes

from .mesh import Mesh


def icosphere(radius: float = 100.0, subdivisions: int = 4, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Geodesic sphere; ``subdivisions=4`` gives 2562 vertices, 5 gives 10242."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    v = np.array(verts, dtype=np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(faces, dtype=np.int64)
    for _ in range(subdivisions):
        v, f = _subdivide(v, f)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    return Mesh.from_arrays(v * radius + np.asarray(center, dtype=np.float64), f)


def _subdivide(v, f):
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mids = 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])
    m = inv.reshape(3, -1).T + len(v)
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
    nf = np.concatenate([np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
                         np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1)])
    return np.concatenate([v, mids]), nf


def box(size=(100.0, 100.0, 100.0), center=(0.0, 0.0, 0.0), divisions: int = 1) -> Mesh:
    """Axis-aligned box with each face split into ``divisions``^2 quads."""
    size = np.asarray(size, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    verts, faces = [], []
    g = np.linspace(-0.5, 0.5, divisions + 1)
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            if sign < 0:
                u_ax, v_ax = v_ax, u_ax
            base = len(verts)
            for i in range(divisions + 1):
                for j in range(divisions + 1):
                    p = np.zeros(3)
                    p[axis] = 0.5 * sign
                    p[u_ax] = g[i]
                    p[v_ax] = g[j]
                    verts.append(p)
            for i in range(divisions):
                for j in range(divisions):
                    a = base + i * (divisions + 1) + j
                    b = a + divisions + 1
                    faces.append((a, b, b + 1))
                    faces.append((a, b + 1, a + 1))
    v = np.array(verts) * size + center
    mesh = Mesh.from_arrays(v, np.array(faces))
    return _fix_winding(mesh, center)


def _fix_winding(mesh: Mesh, center) -> Mesh:
    # star-shaped meshes: make facet normals point away from the center
    c = mesh.corners.mean(axis=1)
    flip = np.einsum("ij,ij->i", mesh.face_normals, c - center) < 0
    tri = mesh.triangles.copy()
    tri[flip] = tri[flip][:, ::-1]
    return Mesh(mesh.vertices, tri)


def uv_capsule(a, b, radius: float, n_around: int = 32, n_cap: int = 8, n_body: int = 8) -> Mesh:
    """Capsule around segment a-b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    axis = b - a
    length = np.linalg.norm(axis)
    w = axis / length
    helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(w, helper)
    u /= np.linalg.norm(u)
    v = np.cross(w, u)
    rings = []
    for k in range(n_cap, 0, -1):
        phi = 0.5 * np.pi * k / n_cap
        rings.append((-radius * np.sin(phi), radius * np.cos(phi)))
    for k in range(n_body + 1):
        rings.append((length * k / n_body, radius))
    for k in range(1, n_cap + 1):
        phi = 0.5 * np.pi * k / n_cap
        rings.append((length + radius * np.sin(phi), radius * np.cos(phi)))
    theta = np.linspace(0, 2 * np.pi, n_around, endpoint=False)
    verts = [a - radius * w]
    for h, r in rings:
        for t in theta:
            verts.append(a + h * w + r * (np.cos(t) * u + np.sin(t) * v))
    verts.append(b + radius * w)
    verts = np.array(verts)
    faces = []
    nr = len(rings)
    for j in range(n_around):
        faces.append((0, 1 + (j + 1) % n_around, 1 + j))
    for i in range(nr - 1):
        for j in range(n_around):
            p = 1 + i * n_around + j
            q = 1 + i * n_around + (j + 1) % n_around
            faces.append((p, q, q + n_around))
            faces.append((p, q + n_around, p + n_around))
    top = len(verts) - 1
    base = 1 + (nr - 1) * n_around
    for j in range(n_around):
        faces.append((top, base + j, base + (j + 1) % n_around))
    mesh = Mesh.from_arrays(verts, np.array(faces))
    return _fix_winding_capsule(mesh, a, b)


def _fix_winding_capsule(mesh: Mesh, a, b) -> Mesh:
    c = mesh.corners.mean(axis=1)
    w = (b - a) / np.linalg.norm(b - a)
    t = np.clip((c - a) @ w, 0.0, np.linalg.norm(b - a))
    axis_pt = a + t[:, None] * w
    flip = np.einsum("ij,ij->i", mesh.face_normals, c - axis_pt) < 0
    tri = mesh.triangles.copy()
    tri[flip] = tri[flip][:, ::-1]
    return Mesh(mesh.vertices, tri)


def merge(*meshes: Mesh) -> Mesh:
    """Concatenate meshes without any boolean union."""
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    return Mesh.from_arrays(np.concatenate(verts), np.concatenate(tris))


# -- implicit humanoid --------------------------------------------------------

def _sd_capsule(p, a, b, r):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1) - r


def _sd_ellipsoid(p, c, radii):
    q = (p - np.asarray(c, dtype=np.float64)) / np.asarray(radii, dtype=np.float64)
    k0 = np.linalg.norm(q, axis=-1)
    k1 = np.linalg.norm(q / np.asarray(radii, dtype=np.float64), axis=-1)
    return k0 * (k0 - 1.0) / np.maximum(k1, 1e-12)


def _smooth_min(a, b, k):
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b * (1 - h) + a * h - k * h * (1 - h)


def _body_parts(height: float):
    s = height / 1800.0
    parts = [
        ("e", (0, 0, 1230), (165, 105, 270)),      # chest
        ("e", (0, 0, 980), (160, 110, 150)),       # pelvis
        ("c", (0, 0, 1440), (0, 0, 1560), 52),     # neck
        ("e", (0, -8, 1665), (78, 95, 118)),       # head
    ]
    for sx in (-1, 1):
        parts += [
            ("c", (sx * 88, 0, 900), (sx * 112, 0, 480), 72),          # thigh
            ("c", (sx * 112, 0, 480), (sx * 125, 8, 95), 50),          # shin
            ("c", (sx * 125, 10, 55), (sx * 130, -115, 40), 38),       # foot
            ("c", (sx * 170, 0, 1420), (sx * 235, 0, 1150), 46),       # upper arm
            ("c", (sx * 235, 0, 1150), (sx * 275, -25, 905), 38),      # forearm
            ("e", (sx * 288, -30, 810), (22, 45, 85)),                 # hand
        ]
    scaled = []
    for kind, *geo in parts:
        if kind == "e":
            scaled.append((kind, np.array(geo[0]) * s, np.array(geo[1]) * s))
        else:
            scaled.append((kind, np.array(geo[0]) * s, np.array(geo[1]) * s, geo[2] * s))
    return scaled


def humanoid_sdf(points, height: float = 1800.0, blend: float = 20.0) -> np.ndarray:
    """Signed distance (approximate, negative inside) of the humanoid phantom."""
    p = np.asarray(points, dtype=np.float64)
    d = None
    for part in _body_parts(height):
        if part[0] == "e":
            di = _sd_ellipsoid(p, part[1], part[2])
        else:
            di = _sd_capsule(p, part[1], part[2], part[3])
        d = di if d is None else _smooth_min(d, di, blend)
    return d


@lru_cache(maxsize=4)
def humanoid(height: float = 1800.0, voxel: float = 8.0) -> Mesh:
    """Standing body phantom: capsule limbs, ellipsoid torso, feet at z=0.

    Built as a smooth union of primitives and polygonised with marching
    cubes, so the result is a single closed surface.
    """
    s = height / 1800.0
    lo = np.array([-380.0, -240.0, -20.0]) * s
    hi = np.array([380.0, 240.0, 1820.0]) * s
    dims = np.ceil((hi - lo) / voxel).astype(int) + 1
    axes = [lo[i] + voxel * np.arange(dims[i]) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    sdf = np.empty(grid.shape[:3])
    for i in range(dims[0]):
        sdf[i] = humanoid_sdf(grid[i], height)
    verts, faces, _, _ = marching_cubes(sdf, level=0.0, spacing=(voxel,) * 3)
    verts = verts + lo
    # with a negative-inside field the marching_cubes winding already gives
    # outward right-hand-rule normals
    mesh = Mesh.from_arrays(verts, faces)
    lift = -mesh.vertices[:, 2].min()
    return mesh.transformed(translation=(0.0, 0.0, lift))
