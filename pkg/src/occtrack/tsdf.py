"""Object-centric projective TSDF volume.

Distances are stored normalized by the truncation margin ``trunc`` so the
field lives in [-1, 1]. Voxels never observed keep weight 0 and the sentinel
value +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import CameraModel, Pose

UNSEEN = 1.0
# growth guard against a wildly wrong pose flinging points off the map
MAX_DIM = 256


@dataclass
class DepthObservation:
    depth: np.ndarray  # (H, W) meters, 0 = invalid
    mask: np.ndarray  # (H, W) bool
    camera: CameraModel
    pose: Pose  # object frame -> camera frame
    color: Optional[np.ndarray] = None  # (H, W, 3) in [0, 1]

    def __post_init__(self):
        h, w = self.camera.height, self.camera.width
        if self.depth.shape != (h, w) or self.mask.shape != (h, w):
            raise ValueError(
                f"image size {self.depth.shape}/{self.mask.shape} does not match camera {(h, w)}"
            )
        if self.color is not None and self.color.shape[:2] != (h, w):
            raise ValueError(f"color size {self.color.shape[:2]} does not match camera {(h, w)}")
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise ValueError("depth must be finite and non-negative")


@dataclass
class TriangleMesh:
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    colors: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def transformed(self, pose: Pose) -> "TriangleMesh":
        return TriangleMesh(pose.apply(self.vertices), self.triangles.copy(), self.colors)

    def areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


class TsdfVolume:
    """Dense voxel grid of normalized truncated signed distances.

    ``origin`` is the center of voxel (0, 0, 0) in the object frame.
    """

    def __init__(self, origin, voxel_size: float, dims, trunc: float):
        if voxel_size <= 0 or trunc <= 0:
            raise ValueError("voxel_size and trunc must be positive")
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.voxel_size = float(voxel_size)
        self.dims = tuple(int(d) for d in dims)
        if min(self.dims) < 2:
            raise ValueError("grid needs at least 2 voxels per axis")
        self.trunc = float(trunc)
        self.sdf = np.full(self.dims, UNSEEN)
        self.weight = np.zeros(self.dims)
        self.color = np.zeros(self.dims + (3,))
        self.n_fused = 0

    @classmethod
    def from_bounds(cls, lo, hi, voxel_size: float, trunc: float) -> "TsdfVolume":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        dims = np.maximum(np.ceil((hi - lo) / voxel_size).astype(int) + 1, 2)
        return cls(lo, voxel_size, dims, trunc)

    @classmethod
    def around_points(cls, points, voxel_size: float = 0.004, trunc: float = 0.012,
                      padding: Optional[float] = None) -> "TsdfVolume":
        """Grid covering the bounding box of ``points`` padded by ``10 * trunc``."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("cannot size a volume from an empty cloud")
        pad = 10.0 * trunc if padding is None else padding
        return cls.from_bounds(pts.min(0) - pad, pts.max(0) + pad, voxel_size, trunc)

    @classmethod
    def from_sdf(cls, sdf_fn, lo, hi, voxel_size: float = 0.004, trunc: float = 0.012) -> "TsdfVolume":
        """Volume filled from an exact signed distance function, as if every
        voxel had been observed once: voxels deeper than ``trunc`` behind the
        surface stay unobserved, matching what fusion would discard."""
        vol = cls.from_bounds(lo, hi, voxel_size, trunc)
        d = np.asarray(sdf_fn(vol.voxel_centers()), dtype=float).reshape(vol.dims)
        seen = d >= -trunc
        vol.sdf = np.where(seen, np.minimum(1.0, d / trunc), UNSEEN)
        vol.weight = seen.astype(float)
        vol.n_fused = 1
        return vol

    def copy(self) -> "TsdfVolume":
        out = TsdfVolume(self.origin, self.voxel_size, self.dims, self.trunc)
        out.sdf = self.sdf.copy()
        out.weight = self.weight.copy()
        out.color = self.color.copy()
        out.n_fused = self.n_fused
        return out

    def empty_like(self) -> "TsdfVolume":
        return TsdfVolume(self.origin, self.voxel_size, self.dims, self.trunc)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (np.asarray(self.dims) - 1) * self.voxel_size

    def voxel_centers(self) -> np.ndarray:
        axes = [self.origin[k] + self.voxel_size * np.arange(self.dims[k]) for k in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack(g, axis=-1).reshape(-1, 3)

    def ensure_bounds(self, points, padding: Optional[float] = None) -> bool:
        """Grow the grid (never move it) so it covers ``points`` plus padding.

        Existing voxels are copied into the enlarged grid at the same lattice
        positions. Returns True if the grid was re-allocated.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            return False
        pad = 10.0 * self.trunc if padding is None else padding
        lo_pts = np.percentile(pts, 1, axis=0)
        hi_pts = np.percentile(pts, 99, axis=0)
        if np.all(lo_pts - self.trunc >= self.origin) and np.all(hi_pts + self.trunc <= self.upper):
            return False
        vs = self.voxel_size
        grow_lo = np.maximum(np.ceil((self.origin - (lo_pts - pad)) / vs), 0).astype(int)
        grow_hi = np.maximum(np.ceil(((hi_pts + pad) - self.upper) / vs), 0).astype(int)
        new_dims = np.asarray(self.dims) + grow_lo + grow_hi
        if np.any(new_dims > MAX_DIM):
            return False
        sl = tuple(slice(grow_lo[k], grow_lo[k] + self.dims[k]) for k in range(3))
        sdf = np.full(tuple(new_dims), UNSEEN)
        weight = np.zeros(tuple(new_dims))
        color = np.zeros(tuple(new_dims) + (3,))
        sdf[sl] = self.sdf
        weight[sl] = self.weight
        color[sl] = self.color
        self.origin = self.origin - grow_lo * vs
        self.dims = tuple(int(d) for d in new_dims)
        self.sdf, self.weight, self.color = sdf, weight, color
        return True

    # -- fusion -----------------------------------------------------------

    def integrate(self, obs: DepthObservation) -> "TsdfVolume":
        """Fold one segmented depth observation into the volume (in place)."""
        cam = obs.camera
        centers = self.voxel_centers()
        pc = obs.pose.apply(centers)
        z = pc[:, 2]
        front = z > 1e-9
        zs = np.where(front, z, 1.0)
        u = np.rint(cam.fx * pc[:, 0] / zs + cam.cx).astype(np.int64)
        v = np.rint(cam.fy * pc[:, 1] / zs + cam.cy).astype(np.int64)
        ok = front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        idx = np.nonzero(ok)[0]
        uu, vv = u[idx], v[idx]
        keep = obs.mask[vv, uu] & (obs.depth[vv, uu] > 0)
        idx, uu, vv = idx[keep], uu[keep], vv[keep]
        d = obs.depth[vv, uu] - z[idx]
        keep = d >= -self.trunc
        idx, uu, vv, d = idx[keep], uu[keep], vv[keep], d[keep]
        phi = np.minimum(1.0, d / self.trunc)

        sdf = self.sdf.reshape(-1)
        w = self.weight.reshape(-1)
        col = self.color.reshape(-1, 3)
        w_old = w[idx]
        w_new = w_old + 1.0
        sdf[idx] = (sdf[idx] * w_old + phi) / w_new
        if obs.color is not None:
            c = obs.color[vv, uu].astype(float)
            col[idx] = (col[idx] * w_old[:, None] + c) / w_new[:, None]
        w[idx] = w_new
        self.n_fused += 1
        return self

    # -- sampling ---------------------------------------------------------

    def _corners(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        g = (p - self.origin) / self.voxel_size
        dims = np.asarray(self.dims)
        inside = np.all((g >= 0.0) & (g <= dims - 1), axis=1)
        i0 = np.clip(np.floor(g).astype(np.int64), 0, dims - 2)
        f = np.clip(g - i0, 0.0, 1.0)
        return i0, f, inside

    def _interp(self, grid: np.ndarray, i0, f):
        x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        if grid.ndim == 4:
            fx, fy, fz = fx[:, None], fy[:, None], fz[:, None]
        c000 = grid[x0, y0, z0]
        c100 = grid[x0 + 1, y0, z0]
        c010 = grid[x0, y0 + 1, z0]
        c110 = grid[x0 + 1, y0 + 1, z0]
        c001 = grid[x0, y0, z0 + 1]
        c101 = grid[x0 + 1, y0, z0 + 1]
        c011 = grid[x0, y0 + 1, z0 + 1]
        c111 = grid[x0 + 1, y0 + 1, z0 + 1]
        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz

    def _corner_weight_ok(self, i0) -> np.ndarray:
        x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
        ok = np.ones(len(i0), dtype=bool)
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    ok &= self.weight[x0 + dx, y0 + dy, z0 + dz] > 0
        return ok

    def sample(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Trilinear samples of the normalized field at ``(N, 3)`` points.

        Returns ``(values, valid)``; a sample is invalid outside the grid or when
        any of the 8 surrounding voxels is unobserved. Invalid values are +1.
        """
        i0, f, inside = self._corners(points)
        vals = self._interp(self.sdf, i0, f)
        valid = inside & self._corner_weight_ok(i0)
        return np.where(valid, vals, UNSEEN), valid

    def sample_color(self, points) -> np.ndarray:
        i0, f, _ = self._corners(points)
        return np.clip(self._interp(self.color, i0, f), 0.0, 1.0)

    def sample_gradient(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Central-difference gradient (per meter) with step ``voxel_size / 2``."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        h = 0.5 * self.voxel_size
        grad = np.zeros_like(p)
        valid = np.ones(len(p), dtype=bool)
        for k in range(3):
            off = np.zeros(3)
            off[k] = h
            vp, okp = self.sample(p + off)
            vm, okm = self.sample(p - off)
            grad[:, k] = (vp - vm) / (2.0 * h)
            valid &= okp & okm
        return np.where(valid[:, None], grad, 0.0), valid

    # -- meshing ----------------------------------------------------------

    def extract_mesh(self, keep_largest: bool = True) -> TriangleMesh:
        """Zero isosurface over observed voxels, optionally keeping only the
        connected component with the most triangles."""
        from skimage.measure import marching_cubes

        seen = self.weight > 0
        if not seen.any():
            return TriangleMesh()
        vals = self.sdf
        if vals[seen].min() > 0.0 or vals[seen].max() < 0.0:
            return TriangleMesh()
        try:
            verts, faces, _, _ = marching_cubes(vals, level=0.0, allow_degenerate=False)
        except (ValueError, RuntimeError):
            return TriangleMesh()
        if len(faces) == 0:
            return TriangleMesh()
        # drop cubes touching unobserved voxels: their crossings come from the
        # +1 sentinel, not from data
        cube_ok = seen[:-1, :-1, :-1].copy()
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    cube_ok &= seen[dx:dx + self.dims[0] - 1, dy:dy + self.dims[1] - 1,
                                    dz:dz + self.dims[2] - 1]
        cent = verts[faces].mean(axis=1)
        ci = np.clip(np.floor(cent).astype(np.int64), 0, np.asarray(self.dims) - 2)
        faces = faces[cube_ok[ci[:, 0], ci[:, 1], ci[:, 2]]]
        if len(faces) == 0:
            return TriangleMesh()
        verts = self.origin + verts * self.voxel_size
        mesh = _compact(verts, faces)
        if keep_largest:
            mesh = largest_component(mesh)
        mesh.colors = self.sample_color(mesh.vertices)
        return mesh


def _compact(verts: np.ndarray, faces: np.ndarray) -> TriangleMesh:
    used, inv = np.unique(faces.reshape(-1), return_inverse=True)
    return TriangleMesh(verts[used], inv.reshape(-1, 3).astype(np.int64))


def largest_component(mesh: TriangleMesh) -> TriangleMesh:
    """Keep the vertex-connected component with the largest triangle count."""
    if mesh.is_empty:
        return mesh
    n = len(mesh.vertices)
    t = mesh.triangles
    rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    tri_labels = labels[t[:, 0]]
    counts = np.bincount(tri_labels)
    best = int(np.argmax(counts))
    faces = t[tri_labels == best]
    out = _compact(mesh.vertices, faces)
    if mesh.colors is not None:
        used = np.unique(faces.reshape(-1))
        out.colors = mesh.colors[used]
    return out


def integrate(vol: TsdfVolume, obs: DepthObservation) -> TsdfVolume:
    return vol.integrate(obs)


def sample_trilinear(vol: TsdfVolume, p) -> tuple[float, bool]:
    v, ok = vol.sample(np.asarray(p, dtype=float).reshape(1, 3))
    return float(v[0]), bool(ok[0])


def sample_gradient(vol: TsdfVolume, p) -> tuple[np.ndarray, bool]:
    g, ok = vol.sample_gradient(np.asarray(p, dtype=float).reshape(1, 3))
    return g[0], bool(ok[0])


def extract_mesh(vol: TsdfVolume) -> TriangleMesh:
    return vol.extract_mesh()


def write_obj(mesh: TriangleMesh, path) -> None:
    """ASCII OBJ with ``v x y z r g b`` vertex-color lines and ``f i j k`` faces."""
    path = Path(path)
    cols = mesh.colors if mesh.colors is not None else np.full((len(mesh.vertices), 3), 0.5)
    lines = [
        f"v {x:.6f} {y:.6f} {z:.6f} {r:.4f} {g:.4f} {b:.4f}"
        for (x, y, z), (r, g, b) in zip(mesh.vertices, cols)
    ]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def read_obj(path) -> TriangleMesh:
    verts, cols, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vals = [float(x) for x in parts[1:]]
                verts.append(vals[:3])
                cols.append(vals[3:6] if len(vals) >= 6 else [0.5, 0.5, 0.5])
            elif parts[0] == "f":
                faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    if not verts:
        return TriangleMesh()
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3), np.array(cols))
