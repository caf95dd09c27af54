"""Per-frame causal tracking of every object in a sequence.

Each object runs in its own lane: lift visible tracks with the frame's depth,
register against the promoted keypoint map, pick a hypothesis by TSDF score,
refine densely, verify pending points and, when a sampling trigger fires,
create a keyframe, re-optimize the graph and update the TSDF.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import TrackerConfig
from .factor_graph import GraphDivergedError, KeyframeGraph
from .geometry import Pose, back_project, depth_to_cloud, rotation_angle
from .keypoints import (FrameEvidence, Keypoint, KeypointMap, PendingPoint, greedy_sample,
                        min_rotation_to, should_sample, strictly_inside, try_promote, update_pending)
from .registration import (CorrespondenceSet, DegenerateConfigurationError, PoseHypothesis, kabsch_align,
                           select_hypothesis, sequential_ransac, single_hypothesis)
from .sdf_refine import RefinementUnreliableError, refine_pose
from .seqio import FrameInput, SequenceSource, write_pose_csv
from .tsdf import DepthObservation, TsdfVolume, write_obj

log = logging.getLogger(__name__)

TRACKING = "tracking"
LOST = "lost"


@dataclass
class Keyframe:
    frame: int
    pose: Pose  # object -> camera, current best estimate
    reg_pose: Pose  # pose at registration time (odometry source)
    fused_pose: Optional[Pose]  # pose the frame was last fused with
    depth: np.ndarray
    mask: np.ndarray
    color: Optional[np.ndarray]


@dataclass
class ObjectTrackerState:
    object_id: int
    pose: Pose = field(default_factory=Pose)
    status: str = LOST
    initialized: bool = False
    last_good_pose: Pose = field(default_factory=Pose)
    last_good_frame: int = -1
    prev_pose: Optional[Pose] = None
    kmap: KeypointMap = field(default_factory=KeypointMap)
    pending: dict = field(default_factory=dict)
    volume: Optional[TsdfVolume] = None
    graph: KeyframeGraph = field(default_factory=KeyframeGraph)
    keyframes: list = field(default_factory=list)
    last_frame: int = -1
    lost_intervals: list = field(default_factory=list)
    refusions: int = 0
    hypotheses_last: int = 0

    @property
    def active_tracks(self) -> list:
        return sorted(set(self.kmap.points) | set(self.pending))


@dataclass
class FrameReport:
    frame: int
    object_id: int
    pose: Pose
    status: str
    correspondences: int = 0
    keyframe: bool = False


def _lift(rec, fi: FrameInput, oid: int, cam, gate: float):
    """Camera-frame point of a track record, or None if unusable."""
    if not rec.visible or rec.uncertainty >= gate:
        return None
    u, v = int(np.rint(rec.u)), int(np.rint(rec.v))
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        return None
    z = fi.depth[v, u]
    if z <= 0 or not fi.masks[oid][v, u]:
        return None
    return back_project(cam, np.array([rec.u, rec.v]), float(z))


def _motion_delta(prev: Pose, cur: Pose, kmap: KeypointMap) -> Pose:
    """Frame-to-frame change: relative rotation plus the displacement of the
    keypoint centroid, so the stability gate does not depend on how far the
    object-frame origin lies from the object."""
    dR = cur.R @ prev.R.T
    c = np.mean([kp.position for kp in kmap.points.values()], axis=0) if len(kmap) else np.zeros(3)
    return Pose(dR, cur.apply(c) - prev.apply(c))


class Tracker:
    """Owns the per-object lanes for one sequence source."""

    def __init__(self, source: SequenceSource, cfg: Optional[TrackerConfig] = None, object_order=None):
        self.source = source
        self.cfg = cfg or TrackerConfig()
        self.cfg.validate()
        self.camera = source.camera
        g = self.cfg.graph
        self.states = {
            oid: ObjectTrackerState(oid, graph=KeyframeGraph(g.noise_model(), g.lm_config()))
            for oid in source.object_ids
        }
        self.reports: dict = {oid: [] for oid in source.object_ids}
        # lanes share nothing, so the order only matters for testing that claim
        self.order = list(object_order) if object_order is not None else sorted(self.states)
        self.timing: dict = {"frames": 0.0}

    # -- lane steps ---------------------------------------------------------

    def _observation(self, kf: Keyframe, pose: Pose) -> DepthObservation:
        color = None if kf.color is None else kf.color.astype(float) / 255.0
        return DepthObservation(kf.depth, kf.mask, self.camera, pose, color)

    def _fuse(self, st: ObjectTrackerState, kf: Keyframe):
        cloud = depth_to_cloud(self.camera, kf.depth, kf.mask)
        if st.volume is None:
            st.volume = TsdfVolume.around_points(cloud, self.cfg.tsdf.voxel_size, self.cfg.tsdf.trunc)
        else:
            st.volume.ensure_bounds(kf.pose.inverse().apply(cloud))
        st.volume.integrate(self._observation(kf, kf.pose))
        kf.fused_pose = kf.pose

    def _refuse(self, st: ObjectTrackerState):
        vol = st.volume.empty_like()
        st.volume = vol
        for kf in st.keyframes:
            cloud = depth_to_cloud(self.camera, kf.depth, kf.mask)
            vol.ensure_bounds(kf.pose.inverse().apply(cloud))
            vol.integrate(self._observation(kf, kf.pose))
            kf.fused_pose = kf.pose
        st.refusions += 1

    def _initialize(self, st: ObjectTrackerState, fi: FrameInput, records: dict) -> bool:
        mask = fi.masks[st.object_id] & (fi.depth > 0)
        if mask.sum() < self.cfg.pipeline.min_init_pixels:
            return False
        st.pose = Pose()
        kf = Keyframe(fi.frame, Pose(), Pose(), None, fi.depth, fi.masks[st.object_id], fi.color)
        st.keyframes.append(kf)
        self._fuse(st, kf)
        cands = [c for c in fi.candidates.get(st.object_id, []) if c.track_id is not None]
        picked = greedy_sample(cands, np.zeros((0, 2)), self.cfg.sampler)
        obs = {}
        for c in picked:
            uv = np.asarray(c.pixel, dtype=float)
            u, v = int(np.rint(uv[0])), int(np.rint(uv[1]))
            z = fi.depth[v, u]
            if z <= 0 or not strictly_inside(fi.masks[st.object_id], uv):
                continue
            p = back_project(self.camera, uv, float(z))
            # keyframe 0 defines the object frame: its samples are exact by construction
            st.kmap.add(Keypoint(c.track_id, p, 0))
            obs[c.track_id] = p
        self.source.activate(list(obs))
        if self.cfg.pipeline.graph_optimization:
            st.graph.insert_keyframe(Pose(), fi.frame, obs, None, {t: st.kmap.position(t) for t in obs})
        st.initialized = True
        st.status = TRACKING
        st.last_good_pose = st.pose
        st.last_good_frame = fi.frame
        return True

    def _register(self, st: ObjectTrackerState, fi: FrameInput, lifted: dict):
        tids = [t for t in sorted(lifted) if t in st.kmap]
        if len(tids) < 3:
            return None, len(tids)
        corr = CorrespondenceSet([lifted[t] for t in tids], [st.kmap.position(t) for t in tids],
                                 ids=np.array(tids))
        pcfg = self.cfg.pipeline
        mask = fi.masks[st.object_id] & (fi.depth > 0)
        dense = depth_to_cloud(self.camera, fi.depth, mask)
        if len(dense) == 0:
            return None, len(tids)
        if len(dense) > pcfg.dense_points:
            rng = np.random.default_rng([pcfg.seed, st.object_id, fi.frame])
            dense = dense[np.sort(rng.choice(len(dense), pcfg.dense_points, replace=False))]

        if pcfg.multi_hypothesis:
            rcfg = self.cfg.ransac
            rc = type(rcfg)(rcfg.inlier_threshold, rcfg.max_iterations, rcfg.max_hypotheses,
                            rcfg.min_consensus, (rcfg.rng_seed * 1000003 + fi.frame * 101 + st.object_id))
            hyps = sequential_ransac(corr, rc)
        else:
            try:
                hyps = [single_hypothesis(corr, self.cfg.ransac.inlier_threshold)]
            except DegenerateConfigurationError:
                hyps = []
        st.hypotheses_last = len(hyps)
        if not hyps:
            try:
                pose0 = kabsch_align(corr)
            except DegenerateConfigurationError:
                return None, len(tids)
            try:
                res = refine_pose(pose0, dense, st.volume, self.cfg.refine)
            except RefinementUnreliableError:
                return None, len(tids)
            # accept the plain fit only if refinement improves on it
            return (res.pose if res.cost < res.initial_cost else None), len(tids)
        if len(hyps) == 1 or st.volume is None:
            hyp = max(hyps, key=lambda h: h.inlier_count)
            return self._refined(hyp.pose, dense, st), len(tids)
        if pcfg.sdf_refine:
            # small consensus sets give noisy poses; compare the hypotheses
            # after each has been pulled onto the surface
            refined = [PoseHypothesis(self._refined(h.pose, dense, st), h.inlier_indices) for h in hyps]
            return select_hypothesis(refined, dense, st.volume)[0].pose, len(tids)
        return select_hypothesis(hyps, dense, st.volume)[0].pose, len(tids)

    def _refined(self, pose: Pose, dense, st: ObjectTrackerState) -> Pose:
        if not self.cfg.pipeline.sdf_refine or st.volume is None:
            return pose
        try:
            return refine_pose(pose, dense, st.volume, self.cfg.refine).pose
        except RefinementUnreliableError:
            return pose

    def _update_pending(self, st: ObjectTrackerState, fi: FrameInput, records: dict, lifted: dict):
        if st.status != TRACKING:
            st.pending = {t: PendingPoint(p.track_id, p.created_frame, p.observations, 0)
                          for t, p in st.pending.items()}
            return
        prev = st.prev_pose if st.prev_pose is not None else st.pose
        delta = _motion_delta(prev, st.pose, st.kmap)
        inv = st.pose.inverse()
        mask = fi.masks[st.object_id]
        for tid, pp in list(st.pending.items()):
            rec = records.get(tid)
            if rec is None:
                st.pending[tid] = update_pending(pp, FrameEvidence(delta, False, False, 1.0, False))
                continue
            u, v = int(np.rint(rec.u)), int(np.rint(rec.v))
            inside_img = 0 <= u < self.camera.width and 0 <= v < self.camera.height
            depth_ok = bool(inside_img and fi.depth[v, u] > 0)
            point = None
            if depth_ok and rec.visible:
                point = inv.apply(back_project(self.camera, np.array([rec.u, rec.v]), float(fi.depth[v, u])))
            ev = FrameEvidence(delta, bool(rec.visible), depth_ok, rec.uncertainty,
                               bool(inside_img and strictly_inside(mask, (rec.u, rec.v))), point)
            st.pending[tid] = update_pending(pp, ev)

    def _keyframe(self, st: ObjectTrackerState, fi: FrameInput, records: dict, lifted: dict):
        m = len(st.keyframes)
        for tid, pp in sorted(st.pending.items()):
            kp = try_promote(pp, keyframe=m)
            if kp is not None:
                st.kmap.add(kp)
                del st.pending[tid]
        # new tracks
        existing = [(r.u, r.v) for t, r in records.items() if r.visible]
        active = set(st.active_tracks)
        cands = [c for c in fi.candidates.get(st.object_id, [])
                 if c.track_id is not None and c.track_id not in active]
        picked = greedy_sample(cands, np.array(existing).reshape(-1, 2), self.cfg.sampler)
        for c in picked:
            st.pending[c.track_id] = PendingPoint(c.track_id, fi.frame)
        self.source.activate([c.track_id for c in picked])

        prev = st.keyframes[-1]
        kf = Keyframe(fi.frame, st.pose, st.pose, None, fi.depth, fi.masks[st.object_id], fi.color)
        st.keyframes.append(kf)
        if self.cfg.pipeline.graph_optimization:
            obs = {t: lifted[t] for t in sorted(lifted) if t in st.kmap}
            odom = prev.reg_pose @ kf.reg_pose.inverse()  # X_{m-1}^-1 X_m
            try:
                st.graph.insert_keyframe(st.pose.inverse(), fi.frame, obs, odom,
                                         {t: st.kmap.position(t) for t in obs})
            except GraphDivergedError as e:
                log.warning("object %d frame %d: graph diverged (%s); keeping estimates",
                            st.object_id, fi.frame, e)
            else:
                for k, X in zip(st.keyframes, st.graph.poses):
                    k.pose = X.inverse()
                st.kmap.replace_positions({t: p for t, p in st.graph.landmarks.items() if t in st.kmap})
                st.pose = kf.pose
        tcfg = self.cfg.tsdf
        moved = any(
            k.fused_pose is not None and (
                rotation_angle(k.pose.R.T @ k.fused_pose.R) > np.deg2rad(tcfg.refuse_rot_deg)
                or np.linalg.norm(k.pose.t - k.fused_pose.t) > tcfg.refuse_trans)
            for k in st.keyframes[:-1])
        if moved:
            self._refuse(st)
        else:
            self._fuse(st, kf)

    # -- frame ----------------------------------------------------------------

    def process_frame(self, fi: FrameInput) -> dict:
        fi.validate(self.camera)
        for st in self.states.values():
            if fi.frame <= st.last_frame:
                raise ValueError(f"frame {fi.frame} is not after frame {st.last_frame}")
        t0 = time.perf_counter()
        out = {}
        for oid in self.order:
            out[oid] = self._process_object(self.states[oid], fi)
            self.reports[oid].append(out[oid])
        self.timing["frames"] += time.perf_counter() - t0
        return out

    def _process_object(self, st: ObjectTrackerState, fi: FrameInput) -> FrameReport:
        oid = st.object_id
        st.last_frame = fi.frame
        records = {t: r for t, r in self.source.records(fi.frame, st.active_tracks).items()
                   if r.object_id == oid}
        if not st.initialized:
            ok = self._initialize(st, fi, records)
            if not ok:
                self._mark_lost(st, fi.frame)
            return FrameReport(fi.frame, oid, st.pose, st.status, 0, ok)

        gate = self.cfg.pipeline.visibility_gate
        lifted = {}
        for tid, rec in records.items():
            p = _lift(rec, fi, oid, self.camera, gate)
            if p is not None:
                lifted[tid] = p
        st.prev_pose = st.pose
        pose, ncorr = self._register(st, fi, lifted)
        if pose is None:
            self._mark_lost(st, fi.frame)
            st.pose = st.last_good_pose
        else:
            st.pose = pose
            st.status = TRACKING
            st.last_good_pose = pose
            st.last_good_frame = fi.frame
        self._update_pending(st, fi, records, lifted)

        is_kf = False
        if st.status == TRACKING and oid in fi.candidates:
            visible = sum(1 for r in records.values() if r.visible)
            rot = min_rotation_to(st.pose.R, [k.pose.R for k in st.keyframes])
            if should_sample(rot, visible, self.cfg.sampler):
                self._keyframe(st, fi, records, lifted)
                st.last_good_pose = st.pose
                is_kf = True
        return FrameReport(fi.frame, oid, st.pose, st.status, ncorr, is_kf)

    def _mark_lost(self, st: ObjectTrackerState, frame: int):
        st.status = LOST
        if st.lost_intervals and st.lost_intervals[-1][1] == frame - 1:
            st.lost_intervals[-1][1] = frame
        else:
            st.lost_intervals.append([frame, frame])

    # -- outputs ----------------------------------------------------------------

    def run(self, n_frames: Optional[int] = None):
        n = self.source.n_frames if n_frames is None else min(n_frames, self.source.n_frames)
        for t in range(n):
            self.process_frame(self.source.frame(t))
        return self.reports

    def mesh(self, oid: int):
        st = self.states[oid]
        from .tsdf import TriangleMesh

        return st.volume.extract_mesh() if st.volume is not None else TriangleMesh()

    def summary(self) -> str:
        lines = [f"frames: {self.source.n_frames}",
                 f"tracking_seconds: {self.timing['frames']:.3f}"]
        for oid in sorted(self.states):
            st = self.states[oid]
            lines.append(f"object {oid}:")
            lines.append("  keyframes: " + ",".join(str(k.frame) for k in st.keyframes))
            lines.append("  lost_intervals: " + ",".join(f"{a}-{b}" for a, b in st.lost_intervals))
            lines.append(f"  keypoints: {len(st.kmap)}")
            lines.append(f"  pending: {len(st.pending)}")
            lines.append(f"  tsdf_refusions: {st.refusions}")
        return "\n".join(lines) + "\n"

    def write_outputs(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for oid in sorted(self.states):
            write_pose_csv(out / f"poses_obj{oid}.csv",
                           [(r.frame, oid, r.pose) for r in self.reports[oid]])
            write_obj(self.mesh(oid), out / f"mesh_obj{oid}.obj")
        lost_lines = ["frame,object_id,status"]
        for oid in sorted(self.states):
            lost_lines += [f"{r.frame},{oid},{r.status}" for r in self.reports[oid]]
        (out / "status.csv").write_text("\n".join(lost_lines) + "\n")
        (out / "summary.txt").write_text(self.summary())


def run_sequence(source, out_dir=None, cfg: Optional[TrackerConfig] = None) -> Tracker:
    """Track every frame of ``source`` (a SequenceSource or a sequence
    directory) and optionally write poses, meshes and a summary."""
    from .seqio import FileSequence

    if not isinstance(source, SequenceSource):
        source = FileSequence(source)
    tr = Tracker(source, cfg)
    tr.run()
    if out_dir is not None:
        tr.write_outputs(out_dir)
    return tr
