"""Synthetic 2D point tracks and detector-style candidate points.

Every candidate detected at a candidate frame doubles as a tracker query:
its pixel is lifted onto the object surface, attached to the shape frame and
followed through the remaining frames. Track ids encode
``(query frame, object id, candidate index)`` so the same query always yields
the same track regardless of which other queries were made.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import binary_erosion

from ..geometry import back_project, project
from ..keypoints import Candidate
from .render import RenderedFrame
from .scene import SceneSpec

ON_SURFACE_TOL = 1e-3
# depth-Hessian magnitude (m / px^2) that maps to score ~0.5
_TEXTURE_REF = 2.5e-4
_SCORE_FLOOR = 0.05


class OffSurfaceError(ValueError):
    pass


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    track_id: int
    object_id: int
    u: float
    v: float
    visible: bool
    uncertainty: float


def encode_track_id(query_frame: int, object_id: int, index: int) -> int:
    return (query_frame * 100 + object_id) * 1000 + index


def decode_track_id(tid: int) -> tuple[int, int, int]:
    return tid // 100000, (tid // 1000) % 100, tid % 1000


def texture_map(depth: np.ndarray) -> np.ndarray:
    """Magnitude of the depth Hessian; high on creases, ~0 on planes."""
    gy, gx = np.gradient(depth)
    gyy, gyx = np.gradient(gy)
    gxy, gxx = np.gradient(gx)
    return np.sqrt(gxx**2 + gyy**2 + 0.5 * (gxy**2 + gyx**2))


def candidate_scores(mask: np.ndarray, depth: np.ndarray, rng: Optional[np.random.Generator] = None,
                     cell: int = 6, max_candidates: int = 60) -> list[Candidate]:
    """Candidates at local maxima of geometric texture inside the mask.

    The mask is eroded so silhouette depth jumps never register as texture.
    One candidate per ``cell x cell`` block (its highest-texture pixel); the
    score grows with texture and saturates at 1. A seeded random subset is
    kept when there are more than ``max_candidates``.
    """
    inner = binary_erosion(mask, iterations=3)
    if not inner.any():
        return []
    tex = texture_map(np.where(mask, depth, 0.0))
    tex = np.where(inner, tex, -1.0)
    h, w = mask.shape
    out = []
    for y0 in range(0, h, cell):
        for x0 in range(0, w, cell):
            block = tex[y0:y0 + cell, x0:x0 + cell]
            k = int(np.argmax(block))
            val = block.flat[k]
            if val < 0:
                continue
            by, bx = divmod(k, block.shape[1])
            score = _SCORE_FLOOR + (1.0 - _SCORE_FLOOR) * val / (val + _TEXTURE_REF)
            out.append(Candidate((float(x0 + bx), float(y0 + by)), float(min(score, 1.0))))
    if len(out) > max_candidates:
        rng = rng if rng is not None else np.random.default_rng(0)
        keep = np.sort(rng.choice(len(out), size=max_candidates, replace=False))
        out = [out[i] for i in keep]
    return out


class TrackSynthesizer:
    """Follows attached surface points through a rendered scene.

    ``frames`` is a callable returning the clean :class:`RenderedFrame` of a
    frame index (usually a cache).
    """

    def __init__(self, scene: SceneSpec, frames):
        self.scene = scene
        self.frames = frames
        self._cand_cache: dict = {}

    def is_candidate_frame(self, frame: int) -> bool:
        return frame % self.scene.tracking.candidate_interval == 0

    def candidates(self, frame: int, oid: int) -> list[Candidate]:
        key = (frame, oid)
        if key not in self._cand_cache:
            rf = self.frames(frame)
            trk = self.scene.tracking
            rng = np.random.default_rng([self.scene.noise.seed, 3, frame, oid])
            cands = candidate_scores(rf.mask(oid), rf.depth, rng, trk.cell, trk.max_candidates)
            self._cand_cache[key] = [
                Candidate(c.pixel, c.score, encode_track_id(frame, oid, i)) for i, c in enumerate(cands)
            ]
        return self._cand_cache[key]

    def attach(self, frame: int, oid: int, uv) -> np.ndarray:
        """Shape-frame point under pixel ``uv`` at ``frame``."""
        rf = self.frames(frame)
        u, v = int(round(uv[0])), int(round(uv[1]))
        z = rf.depth[v, u]
        if z <= 0 or rf.labels[v, u] != oid:
            raise OffSurfaceError(f"query ({u}, {v}) at frame {frame} is not on object {oid}")
        obj = self.scene.object(oid)
        pc = back_project(self.scene.camera, np.array([u, v], float), z)
        local = self.scene.camera_pose_of(obj, frame).inverse().apply(pc)
        if abs(float(obj.shape.sdf(local[None])[0])) > ON_SURFACE_TOL:
            raise OffSurfaceError(f"query ({u}, {v}) at frame {frame} is off the surface of object {oid}")
        return local

    def synthesize(self, track_id: int, start: Optional[int] = None,
                   stop: Optional[int] = None) -> list[TrackRecord]:
        """Records of one track for frames ``[max(query, start), stop)``."""
        qf, oid, k = decode_track_id(track_id)
        cands = self.candidates(qf, oid)
        if k >= len(cands):
            raise KeyError(f"track {track_id} does not exist")
        uv0 = np.asarray(cands[k].pixel, dtype=float)
        return self._follow(track_id, qf, oid, uv0, start, stop)

    def _follow(self, tid, qf, oid, uv0, start, stop) -> list[TrackRecord]:
        scene = self.scene
        nz = scene.noise
        obj = scene.object(oid)
        cam = scene.camera
        local = self.attach(qf, oid, uv0)
        aliased = obj.shape.parts[int(obj.shape.part_of(local[None])[0])].aliased
        n_total = scene.frames - qf
        rng = np.random.default_rng([nz.seed, 7, qf, oid, tid % 1000])
        noise = rng.normal(size=(n_total, 2)) * nz.pixel_sigma
        noise[0] = 0.0
        walk = np.cumsum(rng.normal(size=(n_total, 2)) * nz.walk_sigma, axis=0)
        outlier = bool(rng.random() < nz.outlier_rate)
        query_pose = scene.camera_pose_of(obj, qf)

        start = qf if start is None else max(start, qf)
        stop = scene.frames if stop is None else min(stop, scene.frames)
        out = []
        for t in range(start, stop):
            i = t - qf
            pose = scene.camera_pose_of(obj, t)
            x = pose.apply(local)
            rf = self.frames(t)
            occluded = scene.fully_occluded(oid, t)
            if x[2] > 1e-6:
                true_uv = project(cam, x)
                inside = bool(cam.in_image(true_uv))
                vis = inside and not occluded
                if vis:
                    u, v = int(np.rint(true_uv[0])), int(np.rint(true_uv[1]))
                    vis = (rf.labels[v, u] == oid
                           and abs(rf.depth[v, u] - x[2]) <= scene.tracking.visibility_tolerance)
            else:
                true_uv = np.array([np.nan, np.nan])
                vis = False

            wrong = None
            if aliased and i > 0:
                # symmetric surface: the tracker sees no rotation
                xa = query_pose.R @ local + pose.t
                wrong = project(cam, xa) if xa[2] > 1e-6 else uv0
            elif outlier and i > 0:
                wrong = uv0 if nz.outlier_mode == "static-stick" else uv0 + walk[i]
            if wrong is not None:
                rep = wrong + noise[i]
                rin = bool(cam.in_image(rep))
                vis = False
                if rin and not occluded:
                    u, v = int(np.rint(rep[0])), int(np.rint(rep[1]))
                    vis = bool(rf.labels[v, u] == oid)
                err = float(np.linalg.norm(noise[i])) if nz.confident_outliers else (
                    float(np.linalg.norm(rep - true_uv)) if np.all(np.isfinite(true_uv)) else np.inf)
            else:
                rep = true_uv + noise[i] if np.all(np.isfinite(true_uv)) else uv0
                err = float(np.linalg.norm(noise[i]))
            unc = min(1.0, nz.uncertainty_baseline + min(max(err / nz.uncertainty_scale, 0.0), 1.0))
            out.append(TrackRecord(t, tid, oid, float(rep[0]), float(rep[1]), bool(vis), float(unc)))
        return out


def reprojection_errors(scene: SceneSpec, synth: TrackSynthesizer, records: list[TrackRecord]) -> np.ndarray:
    """Pixel distance between each record and its attached point's true
    projection (nan where the point is behind the camera)."""
    cache = {}
    out = np.full(len(records), np.nan)
    for j, r in enumerate(records):
        if r.track_id not in cache:
            qf, oid, k = decode_track_id(r.track_id)
            cache[r.track_id] = synth.attach(qf, oid, synth.candidates(qf, oid)[k].pixel)
        obj = scene.object(r.object_id)
        x = scene.camera_pose_of(obj, r.frame).apply(cache[r.track_id])
        if x[2] > 1e-6:
            out[j] = float(np.linalg.norm(project(scene.camera, x) - [r.u, r.v]))
    return out
