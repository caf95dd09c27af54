"""Pose and reconstruction metrics: ADD, ADD-S, AUC and Chamfer distance,
plus the report written by the ``evaluate`` command."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, Pose
from .tsdf import TriangleMesh

AUC_MAX_THRESHOLD = 0.1
MODEL_POINTS = 2048


def _pts(model) -> np.ndarray:
    p = model.points if isinstance(model, PointCloud) else np.asarray(model, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError("model point set is empty")
    return p


def add_error(model, est: Pose, gt: Pose) -> float:
    """Mean distance between corresponding model points under both poses."""
    p = _pts(model)
    return float(np.linalg.norm(est.apply(p) - gt.apply(p), axis=1).mean())


def adds_error(model, est: Pose, gt: Pose) -> float:
    """Mean distance from each estimated point to the closest ground-truth point."""
    p = _pts(model)
    d, _ = cKDTree(gt.apply(p)).query(est.apply(p))
    return float(d.mean())


def auc(errors, max_threshold: float = AUC_MAX_THRESHOLD) -> float:
    """Area under accuracy(threshold) on [0, max_threshold], in percent.

    accuracy(x) is the fraction of errors <= x, a step function, so the
    integral is exact: each error e contributes (max - e) when e < max.
    """
    e = np.asarray(errors, dtype=float).reshape(-1)
    if len(e) == 0:
        raise ValueError("no errors to integrate")
    if max_threshold <= 0:
        raise ValueError("max_threshold must be positive")
    contrib = np.clip(max_threshold - e, 0.0, max_threshold)
    return float(100.0 * contrib.sum() / (len(e) * max_threshold))


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> np.ndarray:
    """Area-uniform random points on a triangle mesh."""
    if mesh.is_empty:
        raise ValueError("mesh is empty")
    a = mesh.areas()
    if a.sum() <= 0:
        raise ValueError("mesh has zero area")
    rng = np.random.default_rng([seed, 29])
    tri = rng.choice(len(a), size=n, p=a / a.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    v = mesh.vertices[mesh.triangles[tri]]
    return ((1 - r1)[:, None] * v[:, 0] + (r1 * (1 - r2))[:, None] * v[:, 1]
            + (r1 * r2)[:, None] * v[:, 2])


def chamfer(a: TriangleMesh, b: TriangleMesh, samples: int = 20000, seed: int = 0) -> float:
    """Symmetric mean nearest-neighbour distance between surface samples.

    Both meshes are sampled with the same seed, so a mesh compared with
    itself scores exactly 0.
    """
    pa = sample_surface(a, samples, seed)
    pb = sample_surface(b, samples, seed)
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    return float(0.5 * (da.mean() + db.mean()))


def icosphere(radius: float = 1.0, subdivisions: int = 3) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for i, j, k in faces:
            a, b, c = mid(i, j), mid(j, k), mid(k, i)
            nf += [(i, a, c), (j, b, a), (k, c, b), (a, b, c)]
        faces = nf
    return TriangleMesh(np.array(verts) * radius, np.array(faces, dtype=np.int64))


def model_points(mesh: TriangleMesh, n: int = MODEL_POINTS, seed: int = 0) -> np.ndarray:
    return sample_surface(mesh, n, seed)


@dataclass
class ObjectMetrics:
    object_id: int
    add_auc: float
    adds_auc: float
    chamfer: float  # nan when no mesh is available
    frames: np.ndarray
    add: np.ndarray
    adds: np.ndarray
    evaluated: np.ndarray  # bool per frame: counted in the AUC
    lost_intervals: list = field(default_factory=list)

    @property
    def mean_add(self) -> float:
        return float(self.add[self.evaluated].mean()) if self.evaluated.any() else float("nan")


def evaluate_object(oid: int, est: dict, gt: dict, model: np.ndarray, visible: Optional[dict] = None,
                    pred_mesh: Optional[TriangleMesh] = None, gt_mesh: Optional[TriangleMesh] = None,
                    max_threshold: float = AUC_MAX_THRESHOLD) -> ObjectMetrics:
    """``est``/``gt``: {frame: Pose}; ``visible``: {frame: bool}. Frames with
    no estimate count as failures (infinite error)."""
    frames = np.array(sorted(gt), dtype=np.int64)
    add = np.full(len(frames), np.inf)
    adds = np.full(len(frames), np.inf)
    for k, f in enumerate(frames):
        if f in est:
            add[k] = add_error(model, est[f], gt[f])
            adds[k] = adds_error(model, est[f], gt[f])
    ev = np.array([True if visible is None else bool(visible.get(int(f), True)) for f in frames])
    if ev.any():
        a1, a2 = auc(add[ev], max_threshold), auc(adds[ev], max_threshold)
    else:
        a1 = a2 = float("nan")
    ch = float("nan")
    if pred_mesh is not None and gt_mesh is not None and not pred_mesh.is_empty and not gt_mesh.is_empty:
        ch = chamfer(pred_mesh, gt_mesh)
    lost = []
    for f in frames[~np.isin(frames, np.array(sorted(est), dtype=np.int64))]:
        if lost and lost[-1][1] == f - 1:
            lost[-1][1] = int(f)
        else:
            lost.append([int(f), int(f)])
    return ObjectMetrics(oid, a1, a2, ch, frames, add, adds, ev, lost)


def read_status(path) -> dict:
    """{object id: [[start, end], ...]} lost intervals from a tracker status.csv."""
    out: dict = {}
    p = Path(path)
    if not p.exists():
        return out
    with open(p, newline="") as fh:
        for row in csv.DictReader(fh):
            oid, f = int(row["object_id"]), int(row["frame"])
            iv = out.setdefault(oid, [])
            if row["status"] != "tracking":
                if iv and iv[-1][1] == f - 1:
                    iv[-1][1] = f
                else:
                    iv.append([f, f])
    return out


def evaluate_dirs(pred_dir, gt_dir, out_dir=None, max_threshold: float = AUC_MAX_THRESHOLD) -> list:
    """Compare a tracker output directory against a sequence directory."""
    from .seqio import SequenceFormatError, read_pose_csv, read_visibility
    from .tsdf import read_obj

    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gpath = gt_dir / "gt_poses.csv"
    if not gpath.exists():
        raise SequenceFormatError(f"{gpath}: ground-truth pose file not found")
    gt = read_pose_csv(gpath)
    vis = read_visibility(gt_dir)
    status = read_status(pred_dir / "status.csv")
    results = []
    for oid in sorted(gt):
        ppath = pred_dir / f"poses_obj{oid}.csv"
        if not ppath.exists():
            raise SequenceFormatError(f"{ppath}: predicted pose file not found")
        est = read_pose_csv(ppath).get(oid, {})
        mpath = gt_dir / f"model_obj{oid}.obj"
        if not mpath.exists():
            raise SequenceFormatError(f"{mpath}: ground-truth model not found")
        gt_mesh = read_obj(mpath)
        mesh_path = pred_dir / f"mesh_obj{oid}.obj"
        pred_mesh = read_obj(mesh_path) if mesh_path.exists() else None
        m = evaluate_object(oid, est, gt[oid], model_points(gt_mesh), vis.get(oid),
                            pred_mesh, gt_mesh, max_threshold)
        m.lost_intervals = status.get(oid, m.lost_intervals)
        results.append(m)
    if out_dir is not None:
        write_report(results, out_dir)
    return results


def _intervals(iv) -> str:
    return ";".join(f"{a}-{b}" for a, b in iv)


def write_report(results, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["object_id", "add_auc", "adds_auc", "chamfer_m", "mean_add_m", "frames_evaluated",
                    "lost_intervals"])
        for m in results:
            w.writerow([m.object_id, f"{m.add_auc:.4f}", f"{m.adds_auc:.4f}", f"{m.chamfer:.6f}",
                        f"{m.mean_add:.6f}", int(m.evaluated.sum()), _intervals(m.lost_intervals)])
    with open(out / "per_frame.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "object_id", "add_m", "adds_m", "evaluated"])
        for m in results:
            for f, a, s, e in zip(m.frames, m.add, m.adds, m.evaluated):
                w.writerow([int(f), m.object_id, f"{a:.6f}", f"{s:.6f}", int(e)])
    lines = []
    for m in results:
        lines += [f"object {m.object_id}",
                  f"  ADD AUC    {m.add_auc:7.2f} %",
                  f"  ADD-S AUC  {m.adds_auc:7.2f} %",
                  f"  mean ADD   {1000 * m.mean_add:7.2f} mm",
                  f"  Chamfer    {1000 * m.chamfer:7.2f} mm",
                  f"  frames     {int(m.evaluated.sum())} evaluated of {len(m.frames)}",
                  f"  lost       {_intervals(m.lost_intervals) or 'none'}"]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
