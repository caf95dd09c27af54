"""Dense pose refinement: pull the segmented depth cloud onto the zero level
set of the object's TSDF with robust Levenberg-Marquardt."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import PointCloud, Pose, se3_exp, se3_log


class RefinementUnreliableError(RuntimeError):
    """Too few cloud points land on observed TSDF voxels."""


@dataclass
class RefineConfig:
    max_outer_iterations: int = 10
    max_inner_iterations: int = 20
    huber_delta: float = 0.5
    lm_initial_lambda: float = 1e-3
    lm_lambda_factor: float = 10.0
    convergence_tol: float = 1e-6
    max_points: int = 2000
    seed: int = 0
    max_invalid_fraction: float = 0.8

    def validate(self):
        if self.max_outer_iterations < 1 or self.max_inner_iterations < 1:
            raise ValueError("iteration limits must be >= 1")
        for name in ("huber_delta", "lm_initial_lambda", "lm_lambda_factor", "convergence_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_points < 1:
            raise ValueError("max_points must be >= 1")


@dataclass
class RefineResult:
    pose: Pose
    cost: float
    iterations: int
    initial_cost: float
    cost_trace: list = field(default_factory=list)  # cost after every accepted step


def huber(s: np.ndarray, k: float) -> np.ndarray:
    """Huber on a squared quantity ``s``: ``s`` inside ``k^2``, linear in sqrt(s) beyond."""
    s = np.asarray(s, dtype=float)
    r = np.sqrt(s)
    return np.where(s <= k * k, s, 2.0 * k * r - k * k)


def robust_cost(pose: Pose, points: np.ndarray, vol, delta: float) -> float:
    """Mean Huber(Phi^2) over all points; unseen samples count as Phi = 1 so
    the cost is comparable between poses."""
    vals, _ = vol.sample(pose.inverse().apply(points))
    return float(huber(vals**2, delta).mean())


def residuals_and_jacobian(pose: Pose, points: np.ndarray, vol):
    """Phi at ``T^-1 p`` and its derivative w.r.t. a left twist on ``T``.

    Perturbing ``T <- exp(xi) T`` moves the sampled point to
    ``T^-1 exp(-xi) p``, so ``dy/domega = R^T [p]x`` and ``dy/dv = -R^T``.
    """
    R = pose.R
    y = pose.inverse().apply(points)
    vals, valid = vol.sample(y)
    grad, gvalid = vol.sample_gradient(y)
    valid &= gvalid
    gR = grad @ R.T  # rows are (R g)^T, i.e. g^T R^T
    J = np.empty((len(points), 6))
    J[:, :3] = np.cross(gR, points)  # g^T R^T [p]x = (R g x p)^T
    J[:, 3:] = -gR
    return vals, J, valid


def _damping(A: np.ndarray) -> np.ndarray:
    # Marquardt scaling by the Gauss-Newton diagonal
    return np.diag(np.maximum(np.diag(A), 1e-12))


def _subsample(points: np.ndarray, cfg: RefineConfig) -> np.ndarray:
    if len(points) <= cfg.max_points:
        return points
    rng = np.random.default_rng([cfg.seed, 17])
    idx = np.sort(rng.choice(len(points), size=cfg.max_points, replace=False))
    return points[idx]


def refine_pose(initial: Pose, cloud, vol, cfg: Optional[RefineConfig] = None) -> RefineResult:
    """Minimize sum Huber(Phi(T^-1 D^-1 p)^2) over left updates D = exp(xi).

    Each outer iteration linearizes at the current pose with IRLS weights and
    runs LM on the twist; a step is accepted only if the robust cost drops, so
    the returned pose never costs more than ``initial``.
    """
    cfg = cfg or RefineConfig()
    cfg.validate()
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cloud is empty")
    pts = _subsample(pts, cfg)
    _, valid0 = vol.sample(initial.inverse().apply(pts))
    if 1.0 - valid0.mean() > cfg.max_invalid_fraction:
        raise RefinementUnreliableError(
            f"{100 * (1 - valid0.mean()):.0f}% of points sample unobserved voxels at the initial pose")

    delta = cfg.huber_delta
    pose = initial
    cost = robust_cost(pose, pts, vol, delta)
    result = RefineResult(pose, cost, 0, cost, [cost])
    lam = cfg.lm_initial_lambda
    it = 0
    for it in range(1, cfg.max_outer_iterations + 1):
        # IRLS: freeze the Huber weights at the start of each outer iteration
        r, _, valid = residuals_and_jacobian(pose, pts, vol)
        a = np.abs(r)
        w_all = np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))
        outer_start = pose
        for _ in range(cfg.max_inner_iterations):
            r, J, valid = residuals_and_jacobian(pose, pts, vol)
            if np.count_nonzero(valid) < 6:
                break
            w = w_all[valid]
            r, J = r[valid], J[valid]
            A = (J * w[:, None]).T @ J
            g = (J * w[:, None]).T @ r
            accepted = False
            while lam < 1e12:
                H = A + lam * _damping(A)
                try:
                    xi = -np.linalg.solve(H, g)
                except np.linalg.LinAlgError:
                    lam *= cfg.lm_lambda_factor
                    continue
                cand = (se3_exp(xi) @ pose).orthonormalized()
                c_new = robust_cost(cand, pts, vol, delta)
                if c_new < cost:
                    pose, cost = cand, c_new
                    lam = max(lam / cfg.lm_lambda_factor, 1e-12)
                    result.cost_trace.append(cost)
                    accepted = True
                    break
                lam *= cfg.lm_lambda_factor
            if not accepted or np.linalg.norm(xi) < cfg.convergence_tol:
                break
        moved = np.linalg.norm(se3_log(pose @ outer_start.inverse()))
        if moved < cfg.convergence_tol:
            break
    result.pose, result.cost, result.iterations = pose, cost, it
    return result
