"""Keyframe pose graph with landmark bearing-range factors.

Pose variables are inverse keyframe poses ``X_m`` (camera -> object frame),
perturbed on the left, ``X <- exp(d) X``. Landmarks are object-frame points.
Factors:

* prior      ``log(X_0)``, anchors the gauge, no robust loss
* odometry   ``log(Z^-1 X_a^-1 X_b)``, Huber on the whitened squared norm
* bearing-range of ``X_m^-1 p_n`` against a camera-frame measurement, Huber

Cost terms are the robustified squared whitened norms, summed without a 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, adjoint, hat, se3_exp, se3_left_jacobian_inv, se3_log

HUBER_K = 1.345
_SMALL = 1e-4


class DegenerateBearingError(ValueError):
    pass


class SphereLogSingularityError(ValueError):
    pass


class GraphDivergedError(RuntimeError):
    """Normal equations stayed indefinite after damping escalation."""


# -- bearing / range ------------------------------------------------------

def bearing_range(p) -> tuple[np.ndarray, float]:
    p = np.asarray(p, dtype=float).reshape(3)
    r = float(np.linalg.norm(p))
    if r <= 1e-9:
        raise DegenerateBearingError("bearing of a point at the camera center is undefined")
    return p / r, r


def tangent_basis(b) -> np.ndarray:
    """3x2 orthonormal basis of the tangent plane at unit vector ``b``, built
    from its smallest-magnitude axis (first one on ties)."""
    b = np.asarray(b, dtype=float)
    single = b.ndim == 1
    B = np.atleast_2d(b)
    k = np.argmin(np.abs(B), axis=1)
    e = np.zeros_like(B)
    e[np.arange(len(B)), k] = 1.0
    u1 = np.cross(B, e)
    u1 /= np.linalg.norm(u1, axis=1, keepdims=True)
    u2 = np.cross(B, u1)
    U = np.stack([u1, u2], axis=-1)
    return U[0] if single else U


def _sphere_angle(bt: np.ndarray, b: np.ndarray):
    c = np.sum(bt * b, axis=-1)
    s = np.linalg.norm(np.cross(bt, b), axis=-1)
    return np.arctan2(s, c), c, s


def _theta_over_sin(th):
    th = np.asarray(th, dtype=float)
    small = th < _SMALL
    safe = np.where(small, 1.0, th)
    return np.where(small, 1.0 + th**2 / 6.0, safe / np.sin(safe))


def sphere_log(bt, b) -> np.ndarray:
    """Log map of unit vector ``b`` at base point ``bt`` (a tangent 3-vector)."""
    bt = np.asarray(bt, dtype=float)
    b = np.asarray(b, dtype=float)
    th, c, _ = _sphere_angle(bt, b)
    if np.any(np.pi - th < 1e-9):
        raise SphereLogSingularityError("sphere log is undefined for antipodal bearings")
    f = _theta_over_sin(th)
    return f[..., None] * (b - c[..., None] * bt) if np.ndim(th) else f * (b - c * bt)


def br_residual(predicted, measured) -> np.ndarray:
    """``[U(b~)^T Log_b~(b); r~ - r]`` for predicted ``(b, r)`` and measured ``(b~, r~)``."""
    b, r = predicted
    bt, rt = measured
    U = tangent_basis(bt)
    th, _, _ = _sphere_angle(bt, b)
    if np.pi - th < 1e-9:
        raise SphereLogSingularityError("sphere log is undefined for antipodal bearings")
    # U^T b~ = 0, so U^T Log = f(th) U^T (b - b~); this form is exactly zero for b = b~
    return np.concatenate([_theta_over_sin(th) * (U.T @ (b - bt)), [float(rt) - float(r)]])


# -- noise -------------------------------------------------------------------

def _spd(S, name):
    S = np.asarray(S, dtype=float)
    if not np.allclose(S, S.T) or np.any(np.linalg.eigvalsh(S) <= 0):
        raise ValueError(f"{name} must be symmetric positive definite")
    return S


@dataclass
class NoiseModel:
    prior: np.ndarray = field(default_factory=lambda: np.eye(6) * 1e-6)
    odom: np.ndarray = field(default_factory=lambda: np.diag(
        [np.deg2rad(1.0) ** 2] * 3 + [0.005**2] * 3))
    obs: np.ndarray = field(default_factory=lambda: np.diag(
        [np.deg2rad(0.5) ** 2] * 2 + [0.005**2]))
    huber_delta: float = HUBER_K

    def __post_init__(self):
        self.prior = _spd(self.prior, "prior covariance")
        self.odom = _spd(self.odom, "odometry covariance")
        self.obs = _spd(self.obs, "observation covariance")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")

    @staticmethod
    def _sqrt_info(S):
        # W with W^T W = S^-1
        return np.linalg.cholesky(np.linalg.inv(S)).T

    @property
    def w_prior(self):
        return self._sqrt_info(self.prior)

    @property
    def w_odom(self):
        return self._sqrt_info(self.odom)

    @property
    def w_obs(self):
        return self._sqrt_info(self.obs)


def huber_sq(s, k: float):
    """Huber applied to a squared whitened norm ``s``."""
    s = np.asarray(s, dtype=float)
    return np.where(s <= k * k, s, 2.0 * k * np.sqrt(s) - k * k)


def huber_weight(s, k: float):
    """d huber_sq / ds, the IRLS weight."""
    s = np.asarray(s, dtype=float)
    return np.where(s <= k * k, 1.0, k / np.sqrt(np.maximum(s, 1e-300)))


# -- graph -------------------------------------------------------------------

@dataclass
class GraphState:
    poses: list  # X_m, Pose, camera -> object
    landmarks: np.ndarray  # (N, 3) object frame
    observations: list  # (m, n, z) with z the camera-frame measured point
    landmark_ids: Optional[list] = None  # external labels (track ids)

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, 3)
        self.observations = [(int(m), int(n), np.asarray(z, dtype=float).reshape(3))
                             for m, n, z in self.observations]
        if self.landmark_ids is None:
            self.landmark_ids = list(range(len(self.landmarks)))

    def validate(self):
        M, N = len(self.poses), len(self.landmarks)
        if M == 0:
            raise ValueError("graph needs at least one keyframe")
        for m, n, _ in self.observations:
            if not (0 <= m < M and 0 <= n < N):
                raise ValueError(f"observation ({m}, {n}) references a missing variable")

    def copy(self) -> "GraphState":
        return GraphState(list(self.poses), self.landmarks.copy(),
                          [(m, n, z.copy()) for m, n, z in self.observations], list(self.landmark_ids))


@dataclass(frozen=True)
class OdometryEdge:
    a: int
    b: int
    Z: Pose  # measured X_a^-1 X_b


def _as_edges(edges) -> list:
    return [e if isinstance(e, OdometryEdge) else OdometryEdge(int(e[0]), int(e[1]), e[2]) for e in edges]


def _obs_arrays(g: GraphState):
    if not g.observations:
        return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3))
    m = np.array([o[0] for o in g.observations])
    n = np.array([o[1] for o in g.observations])
    z = np.array([o[2] for o in g.observations])
    return m, n, z


def _obs_residuals(g: GraphState, noise: NoiseModel, with_jac: bool = False):
    """Whitened residuals (K, 3) and optionally Jacobians w.r.t. the pose
    twist (K, 3, 6) and the landmark (K, 3, 3)."""
    m, n, z = _obs_arrays(g)
    K = len(m)
    if K == 0:
        return (np.zeros((0, 3)), np.zeros((0, 3, 6)), np.zeros((0, 3, 3))) if with_jac else np.zeros((0, 3))
    Rs = np.array([p.R for p in g.poses])[m]
    ts = np.array([p.t for p in g.poses])[m]
    P = g.landmarks[n]
    q = np.einsum("kji,kj->ki", Rs, P - ts)  # R^T (p - t)
    r = np.linalg.norm(q, axis=1)
    if np.any(r <= 1e-9):
        raise DegenerateBearingError("landmark coincides with a keyframe camera center")
    b = q / r[:, None]
    rt = np.linalg.norm(z, axis=1)
    bt = z / rt[:, None]
    U = tangent_basis(bt)
    th, c, _ = _sphere_angle(bt, b)
    if np.any(np.pi - th < 1e-9):
        raise SphereLogSingularityError("predicted bearing is antipodal to the measurement")
    f = _theta_over_sin(th)
    Ub = np.einsum("kij,ki->kj", U, b - bt)  # equals U^T b since U^T b~ = 0
    e = np.empty((K, 3))
    e[:, :2] = f[:, None] * Ub
    e[:, 2] = rt - r
    W = noise.w_obs
    ew = e @ W.T
    if not with_jac:
        return ew
    # d(f(th) U^T b)/db = f U^T - U^T b * g(th) b~^T, g = (sin - th cos) / sin^3
    small = th < _SMALL
    ths = np.where(small, 1.0, th)
    g_ = np.where(small, 1.0 / 3.0 + 2.0 / 15.0 * th**2,
                  (np.sin(ths) - ths * np.cos(ths)) / np.sin(ths) ** 3)
    dlog_db = f[:, None, None] * np.transpose(U, (0, 2, 1)) - g_[:, None, None] * Ub[:, :, None] * bt[:, None, :]
    db_dq = (np.eye(3)[None] - b[:, :, None] * b[:, None, :]) / r[:, None, None]
    de_dq = np.empty((K, 3, 3))
    de_dq[:, :2] = dlog_db @ db_dq
    de_dq[:, 2] = -b
    de_dq = W[None] @ de_dq
    RT = np.transpose(Rs, (0, 2, 1))
    dq_dw = RT @ np.array([hat(p) for p in P])
    dq_dxi = np.concatenate([dq_dw, -RT], axis=2)
    return ew, de_dq @ dq_dxi, de_dq @ RT


def _prior_residual(g: GraphState, noise: NoiseModel, with_jac=False):
    xi = se3_log(g.poses[0])
    W = noise.w_prior
    if not with_jac:
        return W @ xi
    return W @ xi, W @ se3_left_jacobian_inv(xi)


def _odom_residual(g: GraphState, e: OdometryEdge, noise: NoiseModel, with_jac=False):
    A = e.Z.inverse() @ g.poses[e.a].inverse()
    xi = se3_log(A @ g.poses[e.b])
    W = noise.w_odom
    if not with_jac:
        return W @ xi
    Jb = se3_left_jacobian_inv(xi) @ adjoint(A)
    return W @ xi, -W @ Jb, W @ Jb


def factor_costs(g: GraphState, edges, noise: NoiseModel) -> dict:
    """Per-factor-type robust costs."""
    k = noise.huber_delta
    edges = _as_edges(edges)
    rp = _prior_residual(g, noise)
    prior = float(rp @ rp)
    odom = 0.0
    for e in edges:
        r = _odom_residual(g, e, noise)
        odom += float(huber_sq(r @ r, k))
    ew = _obs_residuals(g, noise)
    obs = float(huber_sq((ew**2).sum(1), k).sum()) if len(ew) else 0.0
    return {"prior": prior, "odometry": odom, "observation": obs}


def total_cost(g: GraphState, edges, noise: Optional[NoiseModel] = None) -> float:
    noise = noise or NoiseModel()
    c = factor_costs(g, edges, noise)
    return c["prior"] + c["odometry"] + c["observation"]


# -- solver ------------------------------------------------------------------

@dataclass
class LMConfig:
    initial_lambda: float = 1e-4
    lambda_factor: float = 10.0
    max_lambda: float = 1e10
    max_iterations: int = 50
    tolerance: float = 1e-12  # relative cost decrease to stop
    cost_floor: float = 1e-18  # absolute cost treated as already optimal


@dataclass
class OptimizeResult:
    state: GraphState
    initial_cost: float
    final_cost: float
    iterations: int  # accepted steps
    cost_trace: list


def _linearize(g: GraphState, edges, noise: NoiseModel):
    """IRLS-weighted normal equations split into pose and landmark blocks."""
    k = noise.huber_delta
    M, N = len(g.poses), len(g.landmarks)
    Hpp = np.zeros((6 * M, 6 * M))
    bp = np.zeros(6 * M)
    Hll = np.zeros((N, 3, 3))
    bl = np.zeros((N, 3))
    Hpl = np.zeros((6 * M, 3 * N))

    r, J = _prior_residual(g, noise, True)
    Hpp[:6, :6] += J.T @ J
    bp[:6] += J.T @ r
    for e in edges:
        r, Ja, Jb = _odom_residual(g, e, noise, True)
        w = float(huber_weight(r @ r, k))
        sa, sb = slice(6 * e.a, 6 * e.a + 6), slice(6 * e.b, 6 * e.b + 6)
        Hpp[sa, sa] += w * Ja.T @ Ja
        Hpp[sb, sb] += w * Jb.T @ Jb
        Hpp[sa, sb] += w * Ja.T @ Jb
        Hpp[sb, sa] += w * Jb.T @ Ja
        bp[sa] += w * Ja.T @ r
        bp[sb] += w * Jb.T @ r
    if g.observations:
        m, n, _ = _obs_arrays(g)
        ew, Jx, Jp = _obs_residuals(g, noise, True)
        w = huber_weight((ew**2).sum(1), k)
        JxT = np.transpose(Jx, (0, 2, 1)) * w[:, None, None]
        JpT = np.transpose(Jp, (0, 2, 1)) * w[:, None, None]
        hxx = JxT @ Jx
        hxp = JxT @ Jp
        for i in range(len(m)):
            s = slice(6 * m[i], 6 * m[i] + 6)
            Hpp[s, s] += hxx[i]
            Hpl[s, 3 * n[i]:3 * n[i] + 3] += hxp[i]
        np.add.at(bp.reshape(M, 6), m, np.einsum("kij,kj->ki", JxT, ew))
        np.add.at(Hll, n, JpT @ Jp)
        np.add.at(bl, n, np.einsum("kij,kj->ki", JpT, ew))
    return Hpp, bp, Hll, bl, Hpl


def _solve_damped(Hpp, bp, Hll, bl, Hpl, lam):
    """Solve the Marquardt-damped system by eliminating landmarks."""
    from scipy.linalg import cho_factor, cho_solve

    Dp = Hpp + lam * np.diag(np.maximum(np.diag(Hpp), 1e-12))
    N = len(Hll)
    if N:
        dll = np.einsum("nii->ni", Hll)
        Dl = Hll + lam * np.maximum(dll, 1e-12)[:, :, None] * np.eye(3)[None]
        Ll = np.linalg.cholesky(Dl)  # raises LinAlgError if indefinite
        Dl_inv = np.linalg.inv(Dl)
        Hpl3 = Hpl.reshape(len(bp), N, 3)
        T = np.einsum("pnj,nji->pni", Hpl3, Dl_inv)  # Hpl Dl^-1
        S = Dp - np.einsum("pni,qni->pq", T, Hpl3)
        rhs = bp - np.einsum("pni,ni->p", T, bl)
        del Ll
    else:
        S, rhs = Dp, bp
    c = cho_factor(S)
    dx = -cho_solve(c, rhs)
    if N:
        dl = -np.einsum("nij,nj->ni", Dl_inv, bl + np.einsum("pni,p->ni", Hpl3, dx))
    else:
        dl = np.zeros((0, 3))
    return dx, dl


def _retract(g: GraphState, dx, dl) -> GraphState:
    out = g.copy()
    out.poses = [(se3_exp(dx[6 * i:6 * i + 6]) @ p).orthonormalized() for i, p in enumerate(g.poses)]
    out.landmarks = g.landmarks + dl
    return out


def optimize(g: GraphState, edges, noise: Optional[NoiseModel] = None,
             cfg: Optional[LMConfig] = None) -> OptimizeResult:
    """Robust Levenberg-Marquardt; a step is accepted only when the total
    cost decreases, so the trace is non-increasing."""
    noise = noise or NoiseModel()
    cfg = cfg or LMConfig()
    edges = _as_edges(edges)
    g.validate()
    observed = np.zeros(len(g.landmarks), dtype=bool)
    for _, n, _ in g.observations:
        observed[n] = True
    if not observed.all():
        raise ValueError("every landmark needs at least one observation")
    cost = total_cost(g, edges, noise)
    trace = [cost]
    lam = cfg.initial_lambda
    cur = g
    accepted = 0
    for _ in range(cfg.max_iterations):
        if cost <= cfg.cost_floor:
            break
        system = _linearize(cur, edges, noise)
        if np.linalg.norm(np.concatenate([system[1], system[3].ravel()])) < 1e-14:
            break
        improved = False
        solved_once = False
        while lam <= cfg.max_lambda:
            try:
                dx, dl = _solve_damped(*system, lam)
                solved_once = True
            except np.linalg.LinAlgError:
                lam *= cfg.lambda_factor
                continue
            cand = _retract(cur, dx, dl)
            try:
                c_new = total_cost(cand, edges, noise)
            except (DegenerateBearingError, SphereLogSingularityError):
                c_new = np.inf
            if c_new < cost:
                rel = (cost - c_new) / max(cost, 1e-300)
                cur, cost = cand, c_new
                trace.append(cost)
                accepted += 1
                lam = max(lam / cfg.lambda_factor, 1e-12)
                improved = True
                break
            lam *= cfg.lambda_factor
        if not solved_once:
            raise GraphDivergedError("normal equations are not positive definite at any damping")
        if not improved or rel < cfg.tolerance:
            break
    return OptimizeResult(cur, trace[0], cost, accepted, trace)


# -- incremental use ---------------------------------------------------------

@dataclass
class KeyframeGraph:
    """Per-object graph grown one keyframe at a time and fully re-solved."""

    noise: NoiseModel = field(default_factory=NoiseModel)
    lm: LMConfig = field(default_factory=LMConfig)
    poses: list = field(default_factory=list)
    frames: list = field(default_factory=list)  # video frame of each keyframe
    edges: list = field(default_factory=list)
    landmarks: dict = field(default_factory=dict)  # track id -> 3-vector
    observations: list = field(default_factory=list)  # (m, track id, z)
    last_result: Optional[OptimizeResult] = None

    def state(self) -> GraphState:
        seen = sorted({tid for _, tid, _ in self.observations})
        index = {tid: i for i, tid in enumerate(seen)}
        P = np.array([self.landmarks[t] for t in seen]).reshape(-1, 3)
        obs = [(m, index[t], z) for m, t, z in self.observations]
        return GraphState(list(self.poses), P, obs, seen)

    def insert_keyframe(self, X: Pose, frame: int, observations: dict, odometry: Optional[Pose] = None,
                        landmark_init: Optional[dict] = None) -> OptimizeResult:
        """Add keyframe ``X`` (camera -> object), its odometry from the previous
        keyframe and its observations ``{track id: camera-frame point}``, then
        re-optimize. Landmarks seen for the first time start at
        ``landmark_init[tid]``."""
        if self.poses and odometry is None:
            raise ValueError("keyframes after the first need an odometry edge")
        m = len(self.poses)
        self.poses.append(X)
        self.frames.append(int(frame))
        if m > 0:
            self.edges.append(OdometryEdge(m - 1, m, odometry))
        for tid, z in observations.items():
            if tid not in self.landmarks:
                if landmark_init is None or tid not in landmark_init:
                    raise KeyError(f"no initial position for landmark {tid}")
                self.landmarks[tid] = np.asarray(landmark_init[tid], dtype=float).copy()
            self.observations.append((m, tid, np.asarray(z, dtype=float).copy()))
        g = self.state()
        res = optimize(g, self.edges, self.noise, self.lm)
        self.poses = list(res.state.poses)
        for tid, p in zip(res.state.landmark_ids, res.state.landmarks):
            self.landmarks[tid] = p.copy()
        self.last_result = res
        return res

    def dump(self) -> str:
        return debug_dump(self.state(), self.edges, self.noise)


def debug_dump(g: GraphState, edges, noise: Optional[NoiseModel] = None) -> str:
    """One factor per line: type, variable ids, whitened residual norm."""
    noise = noise or NoiseModel()
    edges = _as_edges(edges)
    lines = [f"prior X0 {np.linalg.norm(_prior_residual(g, noise)):.6g}"]
    for e in edges:
        lines.append(f"odometry X{e.a} X{e.b} {np.linalg.norm(_odom_residual(g, e, noise)):.6g}")
    ew = _obs_residuals(g, noise)
    for (m, n, _), r in zip(g.observations, ew):
        lines.append(f"bearing_range X{m} p{g.landmark_ids[n]} {np.linalg.norm(r):.6g}")
    return "\n".join(lines) + "\n"


# -- finite-difference verification -------------------------------------------

def check_jacobians(g: GraphState, edges, noise: Optional[NoiseModel] = None, eps: float = 1e-6) -> dict:
    """Max relative error between analytic and central-difference Jacobians,
    per factor type."""
    noise = noise or NoiseModel()
    edges = _as_edges(edges)

    def rel(A, B):
        return float(np.linalg.norm(A - B) / max(np.linalg.norm(B), 1e-12))

    def pose_fd(fun, state, i):
        J = np.zeros((len(fun(state)), 6))
        for k in range(6):
            d = np.zeros(6)
            d[k] = eps
            sp, sm = state.copy(), state.copy()
            sp.poses[i] = se3_exp(d) @ state.poses[i]
            sm.poses[i] = se3_exp(-d) @ state.poses[i]
            J[:, k] = (fun(sp) - fun(sm)) / (2 * eps)
        return J

    out = {}
    _, Jp = _prior_residual(g, noise, True)
    out["prior"] = rel(Jp, pose_fd(lambda s: _prior_residual(s, noise), g, 0))
    worst = 0.0
    for e in edges:
        _, Ja, Jb = _odom_residual(g, e, noise, True)
        f = lambda s, e=e: _odom_residual(s, e, noise)
        worst = max(worst, rel(Ja, pose_fd(f, g, e.a)), rel(Jb, pose_fd(f, g, e.b)))
    out["odometry"] = worst
    worst = 0.0
    if g.observations:
        _, Jx, Jl = _obs_residuals(g, noise, True)
        for k, (m, n, z) in enumerate(g.observations):
            single = GraphState(g.poses, g.landmarks, [(m, n, z)], g.landmark_ids)
            f = lambda s: _obs_residuals(s, noise)[0]
            Jn = pose_fd(f, single, m)
            Ln = np.zeros((3, 3))
            for j in range(3):
                sp, sm = single.copy(), single.copy()
                sp.landmarks[n, j] += eps
                sm.landmarks[n, j] -= eps
                Ln[:, j] = (f(sp) - f(sm)) / (2 * eps)
            worst = max(worst, rel(Jx[k], Jn), rel(Jl[k], Ln))
    out["observation"] = worst
    return out
