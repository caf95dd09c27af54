"""Rigid-body math, pinhole camera model and point containers.

Conventions used throughout the package:

* lengths in meters, angles in radians, pixels with origin at the top-left;
* a twist is a 6-vector ``(omega, v)`` with the rotational part first;
* ``Pose`` maps points from a source frame into a target frame,
  ``p_target = R @ p_source + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

_SMALL_ANGLE = 1e-6
# log is undefined at exactly pi; anything closer than this is reported.
_PI_MARGIN = 1e-10


class SingularityError(ValueError):
    """Raised when a logarithm is requested at a rotation angle of pi."""


class DegenerateDepthError(ValueError):
    """Raised for projection or back-projection with non-positive depth."""


def hat(w) -> np.ndarray:
    """3-vector to skew-symmetric matrix."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(W: np.ndarray) -> np.ndarray:
    return 0.5 * np.array([W[2, 1] - W[1, 2], W[0, 2] - W[2, 0], W[1, 0] - W[0, 1]])


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    W = hat(w)
    if th < _SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    return np.eye(3) + (np.sin(th) / th) * W + ((1.0 - np.cos(th)) / th**2) * (W @ W)


def _sin_axis(R: np.ndarray) -> np.ndarray:
    # sin(theta) * axis
    return 0.5 * vee(R - R.T)


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in [0, pi]."""
    c = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    s = np.linalg.norm(_sin_axis(R))
    return float(np.arctan2(s, c))


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R``.

    Raises SingularityError when the angle is within ``1e-10`` of pi, where the
    axis sign is not recoverable.
    """
    R = np.asarray(R, dtype=float)
    th = rotation_angle(R)
    if th < _SMALL_ANGLE:
        # first-order; error O(th^3)
        return _sin_axis(R) * (1.0 + th**2 / 6.0)
    if np.pi - th < _PI_MARGIN:
        raise SingularityError(f"rotation angle {th!r} is at pi; log is singular")
    if th < np.pi - 1e-3:
        return _sin_axis(R) * (th / np.sin(th))
    # near pi the skew part vanishes; take the axis from the symmetric part
    B = 0.5 * (R + R.T) - np.cos(th) * np.eye(3)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(B[k, k])
    axis /= np.linalg.norm(axis)
    if axis @ _sin_axis(R) < 0.0:
        axis = -axis
    return axis * th


def so3_left_jacobian(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    W = hat(w)
    if th < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    return (
        np.eye(3)
        + ((1.0 - np.cos(th)) / th**2) * W
        + ((th - np.sin(th)) / th**3) * (W @ W)
    )


def so3_left_jacobian_inv(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    W = hat(w)
    if th < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    coeff = 1.0 / th**2 - (1.0 + np.cos(th)) / (2.0 * th * np.sin(th))
    return np.eye(3) - 0.5 * W + coeff * (W @ W)


def _q_block(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    # Coupling block of the SE(3) left Jacobian (Barfoot's Q with rho=v, phi=w).
    th = float(np.linalg.norm(w))
    P = hat(w)
    V = hat(v)
    if th < 1e-4:
        c1, c2, c3 = 1.0 / 6.0, 1.0 / 24.0, 1.0 / 120.0
    else:
        s, c = np.sin(th), np.cos(th)
        c1 = (th - s) / th**3
        c2 = (th**2 + 2.0 * c - 2.0) / (2.0 * th**4)
        c3 = (2.0 * th - 3.0 * s + th * c) / (2.0 * th**5)
    PV = P @ V
    VP = V @ P
    PVP = PV @ P
    PP = P @ P
    return (
        0.5 * V
        + c1 * (PV + VP + PVP)
        + c2 * (PP @ V + VP @ P - 3.0 * PVP)
        + c3 * (PVP @ P + PP @ V @ P)
    )


def se3_left_jacobian(xi) -> np.ndarray:
    """6x6 left Jacobian of SE(3) for a rotation-first twist."""
    xi = np.asarray(xi, dtype=float)
    w, v = xi[:3], xi[3:]
    J = so3_left_jacobian(w)
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[3:, :3] = _q_block(w, v)
    return out


def se3_left_jacobian_inv(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    w, v = xi[:3], xi[3:]
    Ji = so3_left_jacobian_inv(w)
    out = np.zeros((6, 6))
    out[:3, :3] = Ji
    out[3:, 3:] = Ji
    out[3:, :3] = -Ji @ _q_block(w, v) @ Ji
    return out


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform in SE(3), stored as a rotation matrix and translation."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "t", _frozen(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = np.asarray(M, dtype=float).reshape(4, 4)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(so3_exp(rotvec), t)

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def apply(self, points) -> np.ndarray:
        """Transform a single point ``(3,)`` or an array of points ``(N, 3)``."""
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.t

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def orthonormalized(self) -> "Pose":
        U, _, Vt = np.linalg.svd(self.R)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            U[:, -1] *= -1
            R = U @ Vt
        return Pose(R, self.t)

    def rotation_angle(self) -> float:
        return rotation_angle(self.R)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(np.max(np.abs(self.matrix - other.matrix)) <= atol)

    def __repr__(self) -> str:
        rv = np.round(so3_log(self.R), 6) if self.rotation_angle() < np.pi - 1e-6 else "pi"
        return f"Pose(rotvec={rv}, t={np.round(self.t, 6)})"


def compose(a: Pose, b: Pose) -> Pose:
    """``a`` applied after ``b``."""
    return Pose(a.R @ b.R, a.R @ b.t + a.t)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def adjoint(p: Pose) -> np.ndarray:
    """Adjoint of ``p`` acting on rotation-first twists."""
    A = np.zeros((6, 6))
    A[:3, :3] = p.R
    A[3:, 3:] = p.R
    A[3:, :3] = hat(p.t) @ p.R
    return A


def se3_exp(xi) -> Pose:
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[:3], xi[3:]
    return Pose(so3_exp(w), so3_left_jacobian(w) @ v)


def se3_log(p: Pose) -> np.ndarray:
    w = so3_log(p.R)
    v = np.linalg.solve(so3_left_jacobian(w), p.t)
    return np.concatenate([w, v])


def rotation_distance(a: Pose, b: Pose) -> float:
    """Geodesic angle between the orientations of two poses."""
    return rotation_angle(a.R.T @ b.R)


def pose_error(est: Pose, gt: Pose) -> tuple[float, float]:
    """(rotation error rad, translation error m)."""
    return rotation_distance(est, gt), float(np.linalg.norm(est.t - gt.t))


def random_pose(rng: np.random.Generator, max_angle: float = np.pi - 1e-3, trans_scale: float = 1.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return Pose(so3_exp(axis * angle), rng.uniform(-trans_scale, trans_scale, 3))


def pose_to_row(p: Pose) -> list[float]:
    """Row-major 4x4 entries, the on-disk pose representation."""
    return [float(x) for x in p.matrix.reshape(-1)]


def pose_from_row(row: Sequence[float]) -> Pose:
    vals = np.asarray(row, dtype=float)
    if vals.size != 16:
        raise ValueError(f"pose row needs 16 entries, got {vals.size}")
    return Pose.from_matrix(vals.reshape(4, 4))


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, p) -> np.ndarray:
        return project(self, p)

    def back_project(self, uv, depth) -> np.ndarray:
        return back_project(self, uv, depth)

    def in_image(self, uv) -> np.ndarray:
        """True where the nearest pixel of ``uv`` lies inside the image."""
        uv = np.asarray(uv, dtype=float)
        u = np.rint(uv[..., 0])
        v = np.rint(uv[..., 1])
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)

    def pixel_rays(self) -> np.ndarray:
        """(H, W, 3) ray directions with unit z for every pixel center."""
        u, v = np.meshgrid(np.arange(self.width, dtype=float), np.arange(self.height, dtype=float))
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)


def project(cam: CameraModel, p) -> np.ndarray:
    """Pinhole projection of ``(3,)`` or ``(N, 3)`` camera-frame points."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise DegenerateDepthError("cannot project points with non-positive depth")
    u = cam.fx * p[..., 0] / z + cam.cx
    v = cam.fy * p[..., 1] / z + cam.cy
    return np.stack([u, v], axis=-1)


def back_project(cam: CameraModel, uv, depth) -> np.ndarray:
    """Lift pixel(s) with z-depth(s) into the camera frame."""
    uv = np.asarray(uv, dtype=float)
    z = np.asarray(depth, dtype=float)
    if np.any(z <= 0):
        raise DegenerateDepthError("cannot back-project non-positive depth")
    x = (uv[..., 0] - cam.cx) * z / cam.fx
    y = (uv[..., 1] - cam.cy) * z / cam.fy
    return np.stack([x, y, np.broadcast_to(z, x.shape)], axis=-1)


def depth_to_cloud(cam: CameraModel, depth: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Back-project every valid (and masked) depth pixel; returns (N, 3)."""
    valid = depth > 0
    if mask is not None:
        valid &= mask
    v, u = np.nonzero(valid)
    if u.size == 0:
        return np.zeros((0, 3))
    uv = np.stack([u, v], axis=-1).astype(float)
    return back_project(cam, uv, depth[v, u].astype(float))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=float).reshape(-1, 3)
            if len(col) != len(pts):
                raise ValueError("colors and points differ in length")
            object.__setattr__(self, "colors", _frozen(col))

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, pose: Pose) -> "PointCloud":
        return PointCloud(pose.apply(self.points), self.colors)
