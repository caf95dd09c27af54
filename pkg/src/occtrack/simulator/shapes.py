"""Analytic signed distance primitives and their unions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..geometry import Pose
from ..tsdf import TriangleMesh, largest_component


class Primitive:
    kind = "primitive"

    def sdf(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounding_radius(self) -> float:
        raise NotImplementedError


@dataclass
class Sphere(Primitive):
    radius: float
    kind = "sphere"

    def sdf(self, p):
        return np.linalg.norm(p, axis=-1) - self.radius

    def bounding_radius(self):
        return self.radius


@dataclass
class Box(Primitive):
    half_extents: np.ndarray
    kind = "box"

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=float)

    def sdf(self, p):
        q = np.abs(p) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def bounding_radius(self):
        return float(np.linalg.norm(self.half_extents))


@dataclass
class Cylinder(Primitive):
    """Capped cylinder along the local z axis."""

    radius: float
    half_height: float
    kind = "cylinder"

    def sdf(self, p):
        d = np.stack([np.linalg.norm(p[..., :2], axis=-1) - self.radius,
                      np.abs(p[..., 2]) - self.half_height], axis=-1)
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        inside = np.minimum(np.max(d, axis=-1), 0.0)
        return outside + inside

    def bounding_radius(self):
        return float(np.hypot(self.radius, self.half_height))


@dataclass
class Part:
    primitive: Primitive
    offset: Pose = field(default_factory=Pose)  # part frame -> shape frame
    # tracks attached to an aliased part follow translation only (see tracks.py)
    aliased: bool = False


@dataclass
class Shape:
    """Union of primitives expressed in a shared shape frame."""

    parts: list[Part]
    scale: float = 1.0

    def part_sdf(self, p: np.ndarray) -> np.ndarray:
        """(..., n_parts) distances, in shape-frame meters."""
        p = np.asarray(p, dtype=float) / self.scale
        out = []
        for part in self.parts:
            local = (p - part.offset.t) @ part.offset.R
            out.append(part.primitive.sdf(local))
        return np.stack(out, axis=-1) * self.scale

    def sdf(self, p: np.ndarray) -> np.ndarray:
        return self.part_sdf(p).min(axis=-1)

    def part_of(self, p: np.ndarray) -> np.ndarray:
        return np.argmin(self.part_sdf(p), axis=-1)

    def bounding_radius(self) -> float:
        r = max(np.linalg.norm(pt.offset.t) + pt.primitive.bounding_radius() for pt in self.parts)
        return float(r * self.scale)

    def normal(self, p: np.ndarray, h: float = 1e-5) -> np.ndarray:
        g = np.zeros(p.shape)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            g[..., k] = self.sdf(p + e) - self.sdf(p - e)
        n = np.linalg.norm(g, axis=-1, keepdims=True)
        return g / np.maximum(n, 1e-12)

    def mesh(self, resolution: float = 0.002) -> TriangleMesh:
        """Marching-cubes mesh of the zero level set on a fine grid."""
        from skimage.measure import marching_cubes

        r = self.bounding_radius() + 3 * resolution
        n = int(np.ceil(2 * r / resolution)) + 1
        ax = -r + resolution * np.arange(n)
        g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
        vals = self.sdf(g.reshape(-1, 3)).reshape(n, n, n)
        verts, faces, _, _ = marching_cubes(vals, level=0.0, spacing=(resolution,) * 3,
                                            allow_degenerate=False)
        return largest_component(TriangleMesh(verts - r, faces.astype(np.int64)))


def primitive_from_dict(d: dict) -> Primitive:
    kind = d.get("kind")
    if kind == "sphere":
        return Sphere(float(d["radius"]))
    if kind == "box":
        if "size" in d:
            return Box(np.asarray(d["size"], dtype=float) / 2.0)
        return Box(np.asarray(d["half_extents"], dtype=float))
    if kind == "cylinder":
        if "height" in d:
            return Cylinder(float(d["radius"]), float(d["height"]) / 2.0)
        return Cylinder(float(d["radius"]), float(d["half_height"]))
    raise ValueError(f"unknown primitive kind {kind!r}")


def shape_from_dict(d: dict) -> Shape:
    """Build a shape from its config mapping.

    Either a single primitive (``kind: sphere|box|cylinder``) or
    ``kind: union`` with a ``parts`` list; each part may carry ``offset``
    (translation) and ``rotation`` (rotation vector) plus ``aliased``.
    """
    scale = float(d.get("scale", 1.0))
    if scale <= 0:
        raise ValueError("shape scale must be positive")
    if d.get("kind") == "union":
        parts = []
        for pd in d["parts"]:
            off = Pose.from_rotvec(pd.get("rotation", [0.0, 0.0, 0.0]), pd.get("offset", [0.0, 0.0, 0.0]))
            parts.append(Part(primitive_from_dict(pd), off, bool(pd.get("aliased", False))))
        if not parts:
            raise ValueError("union shape needs at least one part")
        return Shape(parts, scale)
    return Shape([Part(primitive_from_dict(d), aliased=bool(d.get("aliased", False)))], scale)


def l_solid(arm: float = 0.08, thickness: float = 0.03, depth: float = 0.04) -> Shape:
    """Asymmetric L-shaped solid: two boxes sharing a corner."""
    leg = 0.6 * arm
    a = Box([arm / 2, thickness / 2, depth / 2])
    b = Box([thickness / 2, leg / 2, depth / 2])
    return Shape([
        Part(a, Pose(t=[0.0, -leg / 2, 0.0])),
        Part(b, Pose(t=[-arm / 2 + thickness / 2, thickness / 2, 0.0])),
    ])


def sphere(radius: float) -> Shape:
    return Shape([Part(Sphere(radius))])


def box(size) -> Shape:
    return Shape([Part(Box(np.asarray(size, dtype=float) / 2))])


def ray_sphere_depth(origin_c: np.ndarray, radius: float, rays: np.ndarray) -> Optional[np.ndarray]:
    """Closed-form z-depth of rays (unit-z directions) hitting a sphere; 0 on miss."""
    d = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    b = d @ origin_c
    c = origin_c @ origin_c - radius**2
    disc = b**2 - c
    hit = disc >= 0
    t = np.where(hit, b - np.sqrt(np.where(hit, disc, 0.0)), 0.0)
    return np.where(hit & (t > 0), t * d[..., 2], 0.0)
