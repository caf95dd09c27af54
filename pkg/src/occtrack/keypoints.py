"""Keypoint map lifecycle: sampling new tracks, verifying pending points and
promoting them into the registration map."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, rotation_angle

# promotion gates
POSE_ROT_LIMIT = np.deg2rad(2.0)
POSE_TRANS_LIMIT = 0.01
UNCERTAINTY_LIMIT = 0.3
N_STREAK = 3
MAD_LIMIT = 0.008
MIN_OBS = 3


@dataclass(frozen=True)
class Candidate:
    pixel: tuple  # (u, v)
    score: float
    track_id: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"candidate score {self.score} outside [0, 1]")


@dataclass
class SamplerConfig:
    lam: float = 0.5
    r_ideal: float = 40.0
    r_min: float = 10.0
    beta: float = 1.0
    K: int = 30
    rotation_trigger: float = np.deg2rad(10.0)
    min_visible_trigger: int = 25

    def validate(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        if not 0 < self.r_min <= self.r_ideal:
            raise ValueError("need 0 < r_min <= r_ideal")
        if self.beta < 0 or self.K < 1:
            raise ValueError("beta must be >= 0 and K >= 1")


def sampling_objective(score, d, cfg: SamplerConfig):
    """Trackability/spread trade-off for a candidate at distance ``d`` (px)
    from the nearest existing or already-picked point."""
    d = np.asarray(d, dtype=float)
    spread = np.minimum(d / cfg.r_ideal, 1.0)
    crowd = np.maximum(0.0, (cfg.r_min - d) / cfg.r_min)
    return cfg.lam * np.asarray(score) + (1.0 - cfg.lam) * spread - cfg.beta * crowd


def greedy_sample(cands: Sequence[Candidate], existing, cfg: SamplerConfig) -> list[Candidate]:
    """Pick up to ``cfg.K`` candidates, one at a time, each maximizing the
    sampling objective given everything picked so far.

    Ties go to the higher score, then the lower candidate index.
    """
    if not cands:
        return []
    px = np.array([c.pixel for c in cands], dtype=float)
    s = np.array([c.score for c in cands], dtype=float)
    ex = np.asarray(existing, dtype=float).reshape(-1, 2)
    if len(ex):
        d = np.sqrt(((px[:, None, :] - ex[None, :, :]) ** 2).sum(-1)).min(axis=1)
    else:
        d = np.full(len(cands), np.inf)
    free = np.ones(len(cands), dtype=bool)
    picked = []
    for _ in range(min(cfg.K, len(cands))):
        J = np.where(free, sampling_objective(s, d, cfg), -np.inf)
        best = J.max()
        tied = np.nonzero(free & (J == best))[0]
        k = tied[np.argmax(s[tied])]  # argmax returns the first (lowest index) on ties
        picked.append(cands[k])
        free[k] = False
        d = np.minimum(d, np.linalg.norm(px - px[k], axis=1))
    return picked


def min_rotation_to(R: np.ndarray, keyframe_rotations: Sequence[np.ndarray]) -> float:
    """Smallest geodesic angle between ``R`` and any of the given rotations."""
    if len(keyframe_rotations) == 0:
        return np.inf
    return min(rotation_angle(Rk.T @ R) for Rk in keyframe_rotations)


def should_sample(rotation_since_last_keyframes: float, visible_count: int, cfg: SamplerConfig) -> bool:
    return bool(rotation_since_last_keyframes > cfg.rotation_trigger
                or visible_count < cfg.min_visible_trigger)


@dataclass(frozen=True)
class FrameEvidence:
    delta: Pose  # relative pose change since the previous frame
    visible: bool
    depth_valid: bool
    uncertainty: float
    inside_mask: bool
    point: Optional[np.ndarray] = None  # lifted observation, object frame


@dataclass(frozen=True)
class PendingPoint:
    track_id: int
    created_frame: int
    observations: tuple = ()
    streak: int = 0


@dataclass(frozen=True)
class Keypoint:
    track_id: int
    position: np.ndarray
    keyframe: int

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ValueError("keypoint position must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "position", p)


def passes_checks(ev: FrameEvidence) -> bool:
    stable = (rotation_angle(ev.delta.R) < POSE_ROT_LIMIT
              and float(np.linalg.norm(ev.delta.t)) < POSE_TRANS_LIMIT)
    quality = ev.visible and ev.depth_valid and ev.uncertainty < UNCERTAINTY_LIMIT
    return bool(stable and quality and ev.inside_mask and ev.point is not None)


def update_pending(pp: PendingPoint, ev: FrameEvidence) -> PendingPoint:
    """Extend the streak if every verification check passes, else reset it."""
    if passes_checks(ev):
        obs = pp.observations + (np.asarray(ev.point, dtype=float).copy(),)
        return replace(pp, observations=obs, streak=pp.streak + 1)
    return replace(pp, streak=0)


def spread_mad(observations) -> tuple[np.ndarray, float]:
    """Componentwise median and the median distance to it."""
    obs = np.asarray(observations, dtype=float).reshape(-1, 3)
    med = np.median(obs, axis=0)
    return med, float(np.median(np.linalg.norm(obs - med, axis=1)))


def try_promote(pp: PendingPoint, n_streak: int = N_STREAK, mad_threshold: float = MAD_LIMIT,
                min_obs: int = MIN_OBS, keyframe: int = -1) -> Optional[Keypoint]:
    """Return the promoted keypoint, or None when the point is not ready."""
    if pp.streak < n_streak or len(pp.observations) < min_obs:
        return None
    med, mad = spread_mad(pp.observations)
    if not mad < mad_threshold:
        return None
    return Keypoint(pp.track_id, med, keyframe)


def strictly_inside(mask: np.ndarray, uv) -> bool:
    """Nearest pixel and its 4-neighbourhood all lie on the mask."""
    h, w = mask.shape
    u = int(np.rint(uv[0]))
    v = int(np.rint(uv[1]))
    for du, dv in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
        uu, vv = u + du, v + dv
        if not (0 <= uu < w and 0 <= vv < h) or not mask[vv, uu]:
            return False
    return True


@dataclass
class KeypointMap:
    """Promoted keypoints of one object, keyed by track id. Only grows;
    positions change only through :meth:`replace_positions`."""

    points: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)

    def __contains__(self, tid):
        return tid in self.points

    def add(self, kp: Keypoint):
        if kp.track_id in self.points:
            raise ValueError(f"track {kp.track_id} already in the map")
        self.points[kp.track_id] = kp

    def position(self, tid: int) -> np.ndarray:
        return self.points[tid].position

    def replace_positions(self, positions: dict):
        for tid, p in positions.items():
            old = self.points[tid]
            self.points[tid] = Keypoint(tid, p, old.keyframe)

    def snapshot(self) -> dict:
        return dict(self.points)
