"""Sphere-traced depth, object-id masks and shaded color for a scene frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import SceneSpec

MAX_STEPS = 256
HIT_EPS = 1e-4
FAR = 5.0
_REFINE_STEPS = 200
_REFINE_EPS = 1e-9


@dataclass
class RenderedFrame:
    depth: np.ndarray  # (H, W) z-depth, 0 = no hit
    labels: np.ndarray  # (H, W) object id or -1
    color: np.ndarray  # (H, W, 3) in [0, 1]

    def mask(self, oid: int) -> np.ndarray:
        return self.labels == oid


def _object_frames(scene: SceneSpec, frame: int):
    out = []
    for obj in scene.objects:
        pose = scene.camera_pose_of(obj, frame)
        out.append((obj, pose, obj.shape.bounding_radius()))
    return out


def render_depth(scene: SceneSpec, frame: int) -> RenderedFrame:
    """Render one frame without sensor noise; scripted full occlusions applied."""
    cam = scene.camera
    rays = cam.pixel_rays().reshape(-1, 3)
    dirs = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    n = len(dirs)
    objs = _object_frames(scene, frame)

    t_near = np.full(n, np.inf)
    t_far = np.zeros(n)
    for _, pose, rad in objs:
        c = pose.t
        b = dirs @ c
        disc = b**2 - (c @ c - rad**2)
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = np.maximum(b - sq, 0.0)
        t1 = b + sq
        hit &= t1 > 0
        t_near = np.where(hit, np.minimum(t_near, t0), t_near)
        t_far = np.where(hit, np.maximum(t_far, t1), t_far)

    idx = np.nonzero(np.isfinite(t_near))[0]
    t = t_near[idx].copy()
    tmax = np.minimum(t_far[idx], FAR)
    d = dirs[idx]

    def scene_sdf(pts):
        vals = np.empty((len(objs), len(pts)))
        for k, (obj, pose, _) in enumerate(objs):
            local = (pts - pose.t) @ pose.R
            vals[k] = obj.shape.sdf(local)
        return vals

    hit_t = np.full(len(idx), np.nan)
    active = np.arange(len(idx))
    for _ in range(MAX_STEPS):
        if active.size == 0:
            break
        pts = d[active] * t[active, None]
        dist = scene_sdf(pts).min(axis=0)
        done = dist < HIT_EPS
        hit_t[active[done]] = t[active[done]]
        t[active] += np.where(done, 0.0, dist)
        alive = ~done & (t[active] <= tmax[active])
        active = active[alive]

    hits = np.nonzero(np.isfinite(hit_t))[0]
    th = hit_t[hits]
    dh = d[hits]
    # keep marching past the hit epsilon; grazing rays converge slowly
    todo = np.arange(len(th))
    for _ in range(_REFINE_STEPS):
        if todo.size == 0:
            break
        step = scene_sdf(dh[todo] * th[todo, None]).min(axis=0)
        th[todo] += step
        todo = todo[(np.abs(step) > _REFINE_EPS) & (th[todo] <= tmax[hits[todo]])]
    pts = dh * th[:, None]
    vals = scene_sdf(pts)
    # rays that only grazed within HIT_EPS escape during refinement: misses
    real = (np.abs(vals.min(axis=0)) < 1e-6) & (th <= tmax[hits])
    hits, th, dh, pts, vals = hits[real], th[real], dh[real], pts[real], vals[:, real]
    which = np.argmin(vals, axis=0)

    depth = np.zeros(n)
    labels = np.full(n, -1, dtype=np.int64)
    color = np.zeros((n, 3))
    pix = idx[hits]
    depth[pix] = th * dh[:, 2]
    ids = np.array([o.id for o, _, _ in objs], dtype=np.int64)
    labels[pix] = ids[which]
    for k, (obj, pose, _) in enumerate(objs):
        sel = which == k
        if not sel.any():
            continue
        local = (pts[sel] - pose.t) @ pose.R
        normal = obj.shape.normal(local) @ pose.R.T
        shade = 0.25 + 0.75 * np.clip(-(normal * dh[sel]).sum(axis=1), 0.0, 1.0)
        color[pix[sel]] = np.asarray(obj.color)[None, :] * shade[:, None]

    h, w = cam.height, cam.width
    frame_out = RenderedFrame(depth.reshape(h, w), labels.reshape(h, w), color.reshape(h, w, 3))
    for occ in scene.occlusions:
        if occ.mode == "full-occlusion" and occ.covers(frame):
            m = frame_out.labels == occ.object_id
            frame_out.depth[m] = scene.occluder_depth
            frame_out.labels[m] = -1
            frame_out.color[m] = 0.5
    return frame_out


def noisy_depth(scene: SceneSpec, clean: np.ndarray, frame: int) -> np.ndarray:
    """Additive Gaussian depth noise on valid pixels, seeded per frame."""
    nz = scene.noise
    if nz.depth_sigma <= 0:
        return clean.copy()
    rng = np.random.default_rng([nz.seed, 11, frame])
    sigma = nz.depth_sigma * (clean if nz.depth_proportional else 1.0)
    noisy = clean + rng.normal(size=clean.shape) * sigma
    noisy = np.where(clean > 0, noisy, 0.0)
    return np.maximum(noisy, 0.0)
