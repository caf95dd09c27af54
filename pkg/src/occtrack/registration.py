"""Frame-to-map pose estimation from tracked-point correspondences.

Correspondences pair an observed camera-frame point with a map point in the
object frame; every solver returns the object->camera pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import PointCloud, Pose


class DegenerateConfigurationError(ValueError):
    """Too few or collinear correspondences for a rigid fit."""


# singular-value ratio below which a cross-covariance counts as rank deficient
_RANK_TOL = 1e-10


@dataclass
class CorrespondenceSet:
    observed: np.ndarray  # (N, 3) camera frame
    model: np.ndarray  # (N, 3) object frame
    weights: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None  # optional labels (track ids), carried along

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=float).reshape(-1, 3)
        self.model = np.asarray(self.model, dtype=float).reshape(-1, 3)
        if len(self.observed) != len(self.model):
            raise ValueError("observed and model point counts differ")
        if not (np.all(np.isfinite(self.observed)) and np.all(np.isfinite(self.model))):
            raise ValueError("correspondences must be finite")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
            if len(self.weights) != len(self.observed) or np.any(self.weights < 0):
                raise ValueError("weights must be one non-negative value per pair")

    def __len__(self) -> int:
        return len(self.observed)

    def subset(self, idx) -> "CorrespondenceSet":
        idx = np.asarray(idx, dtype=np.int64)
        return CorrespondenceSet(
            self.observed[idx], self.model[idx],
            None if self.weights is None else self.weights[idx],
            None if self.ids is None else np.asarray(self.ids)[idx],
        )


@dataclass
class PoseHypothesis:
    pose: Pose
    inlier_indices: np.ndarray
    inlier_count: int = field(init=False)

    def __post_init__(self):
        self.inlier_indices = np.asarray(self.inlier_indices, dtype=np.int64)
        self.inlier_count = int(len(self.inlier_indices))


@dataclass
class RansacConfig:
    inlier_threshold: float = 0.01
    max_iterations: int = 500
    max_hypotheses: int = 4
    min_consensus: int = 5
    rng_seed: int = 0

    def validate(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if self.max_hypotheses < 1 or self.max_iterations < 1:
            raise ValueError("max_hypotheses and max_iterations must be >= 1")
        if self.min_consensus < 3:
            raise ValueError("min_consensus must be >= 3")


def _rotation_from_cov(H: np.ndarray) -> np.ndarray:
    """Proper rotation maximizing tr(R^T H) for cross-covariance H (batched)."""
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    D = np.ones(H.shape[:-1])
    D[..., 2] = d
    return (U * D[..., None, :]) @ Vt


def kabsch_align(c: CorrespondenceSet) -> Pose:
    """Least-squares rigid pose mapping model points onto observed points."""
    n = len(c)
    if n < 3:
        raise DegenerateConfigurationError(f"need at least 3 correspondences, got {n}")
    w = np.ones(n) if c.weights is None else c.weights
    if w.sum() <= 0 or np.count_nonzero(w) < 3:
        raise DegenerateConfigurationError("fewer than 3 correspondences with positive weight")
    w = w / w.sum()
    mc = w @ c.model
    oc = w @ c.observed
    P = c.model - mc
    Q = c.observed - oc
    H = (Q * w[:, None]).T @ P
    s = np.linalg.svd(H, compute_uv=False)
    scale = max(np.abs(P).max(), np.abs(Q).max(), 1e-300) ** 2
    if s[1] <= _RANK_TOL * scale:
        raise DegenerateConfigurationError("correspondences are collinear or coincident")
    R = _rotation_from_cov(H)
    return Pose(R, oc - R @ mc)


def residuals(pose: Pose, c: CorrespondenceSet) -> np.ndarray:
    return np.linalg.norm(c.observed - pose.apply(c.model), axis=1)


def _round_rng(seed: int, rnd: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(rnd)]))


def _draw_triples(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    """``m`` triples of distinct indices in ``range(n)``."""
    a = rng.integers(0, n, m)
    b = rng.integers(0, n - 1, m)
    b = b + (b >= a)
    c = rng.integers(0, n - 2, m)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.stack([a, b, c], axis=1)


def _ransac_round(obs: np.ndarray, mod: np.ndarray, cfg: RansacConfig, rng) -> np.ndarray:
    """Best minimal-sample consensus set (indices into obs/mod)."""
    n = len(obs)
    tri = _draw_triples(rng, n, cfg.max_iterations)
    P = mod[tri]  # (m, 3, 3)
    Q = obs[tri]
    pc = P.mean(axis=1)
    qc = Q.mean(axis=1)
    Pd = P - pc[:, None]
    Qd = Q - qc[:, None]
    H = np.einsum("mki,mkj->mij", Qd, Pd)
    s = np.linalg.svd(H, compute_uv=False)
    scale = np.maximum(np.abs(Pd).max(axis=(1, 2)), np.abs(Qd).max(axis=(1, 2))) ** 2
    ok = s[:, 1] > _RANK_TOL * np.maximum(scale, 1e-300)
    R = _rotation_from_cov(H)
    t = qc - np.einsum("mij,mj->mi", R, pc)
    # residuals of every pair under every sampled model, in chunks
    counts = np.zeros(len(tri), dtype=np.int64)
    thr2 = cfg.inlier_threshold ** 2
    chunk = max(1, 2_000_000 // max(n, 1))
    for s0 in range(0, len(tri), chunk):
        sl = slice(s0, s0 + chunk)
        pred = np.einsum("mij,nj->mni", R[sl], mod) + t[sl, None, :]
        counts[sl] = ((((obs[None] - pred) ** 2).sum(-1)) < thr2).sum(1)
    counts[~ok] = -1
    best = int(np.argmax(counts))  # first maximum wins
    if counts[best] < 0:
        return np.zeros(0, dtype=np.int64)
    pred = mod @ R[best].T + t[best]
    return np.nonzero(((obs - pred) ** 2).sum(-1) < thr2)[0]


def sequential_ransac(c: CorrespondenceSet, cfg: Optional[RansacConfig] = None) -> list[PoseHypothesis]:
    """Extract up to ``max_hypotheses`` rigid motions, removing each consensus
    set before searching for the next. Hypotheses come in extraction order."""
    cfg = cfg or RansacConfig()
    cfg.validate()
    if len(c) < 3:
        raise DegenerateConfigurationError(f"need at least 3 correspondences, got {len(c)}")
    remaining = np.arange(len(c))
    out: list[PoseHypothesis] = []
    rnd = 0
    while len(out) < cfg.max_hypotheses and len(remaining) >= max(cfg.min_consensus, 3):
        rng = _round_rng(cfg.rng_seed, rnd)
        rnd += 1
        local = _ransac_round(c.observed[remaining], c.model[remaining], cfg, rng)
        if len(local) < cfg.min_consensus:
            break
        idx = remaining[local]
        try:
            pose = kabsch_align(c.subset(idx))
        except DegenerateConfigurationError:
            break
        out.append(PoseHypothesis(pose, idx))
        remaining = np.setdiff1d(remaining, idx, assume_unique=True)
    return out


def single_hypothesis(c: CorrespondenceSet, threshold: float = 0.01) -> PoseHypothesis:
    """Two-step fit without hypothesis generation: fit all pairs, drop pairs
    beyond ``threshold``, refit. The ablation baseline."""
    pose = kabsch_align(c)
    keep = np.nonzero(residuals(pose, c) < threshold)[0]
    if len(keep) >= 3:
        try:
            pose = kabsch_align(c.subset(keep))
        except DegenerateConfigurationError:
            keep = np.arange(len(c))
    else:
        keep = np.arange(len(c))
    return PoseHypothesis(pose, keep)


def tsdf_score(pose: Pose, cloud, volume) -> float:
    """Mean |normalized TSDF| of the camera-frame cloud mapped into the object
    frame; unseen or out-of-volume samples count as 1."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("dense cloud is empty")
    vals, valid = volume.sample(pose.inverse().apply(pts))
    return float(np.where(valid, np.abs(vals), 1.0).mean())


def select_hypothesis(hyps: Sequence[PoseHypothesis], dense_cloud, volume) -> tuple[PoseHypothesis, float]:
    """Hypothesis with the lowest TSDF score; ties go to more inliers, then
    to the earlier hypothesis."""
    if len(hyps) == 0:
        raise ValueError("no hypotheses to select from")
    scores = [tsdf_score(h.pose, dense_cloud, volume) for h in hyps]
    best = min(range(len(hyps)), key=lambda k: (scores[k], -hyps[k].inlier_count, k))
    return hyps[best], scores[best]
