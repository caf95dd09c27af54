"""Sequence directory format and the two sequence sources the tracker reads.

Layout of a sequence directory::

    manifest.txt             key: value lines
    depth_%06d.bin           <f4, row-major HxW, meters, 0 = invalid
    mask_%06d.bin            u8, row-major HxW, object id + 1, 0 = background
    color_%06d.bin           u8 RGB interleaved, row-major
    tracks.csv               frame,track_id,object_id,u,v,visible,uncertainty
    candidates_%06d.csv      object_id,u,v,score   (candidate frames only)
    gt_poses.csv             frame,object_id,m00..m33   (optional)
    gt_visibility.csv        frame,object_id,visible    (optional)
    model_obj<i>.obj         ground-truth mesh in the object frame (optional)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import CameraModel, Pose, pose_from_row, pose_to_row
from .keypoints import Candidate
from .simulator.tracks import TrackRecord

MANIFEST = "manifest.txt"
TRACKS_HEADER = ["frame", "track_id", "object_id", "u", "v", "visible", "uncertainty"]
POSE_HEADER_TAIL = [f"m{r}{c}" for r in range(4) for c in range(4)]


class SequenceFormatError(ValueError):
    """Malformed or missing sequence file; the message names the file."""


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _q6(x: float) -> float:
    # what a value looks like after a round trip through the text format
    return float(_fmt(x))


@dataclass
class FrameInput:
    frame: int
    depth: np.ndarray
    masks: dict  # object id -> (H, W) bool
    color: Optional[np.ndarray] = None
    candidates: dict = field(default_factory=dict)  # object id -> list[Candidate]

    def validate(self, camera: CameraModel):
        hw = (camera.height, camera.width)
        if self.depth.shape != hw:
            raise SequenceFormatError(f"frame {self.frame}: depth shape {self.depth.shape} != {hw}")
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise SequenceFormatError(f"frame {self.frame}: depth must be finite and >= 0")
        for oid, m in self.masks.items():
            if m.shape != hw:
                raise SequenceFormatError(f"frame {self.frame}: mask of object {oid} has shape {m.shape}")
        if self.color is not None and self.color.shape != hw + (3,):
            raise SequenceFormatError(f"frame {self.frame}: color shape {self.color.shape}")


class SequenceSource:
    """What the tracker consumes: images per frame plus records of the tracks
    it has asked for."""

    camera: CameraModel
    n_frames: int
    object_ids: list

    def frame(self, t: int) -> FrameInput:
        raise NotImplementedError

    def activate(self, track_ids) -> None:
        """Register new tracker queries (ids come from candidates)."""

    def records(self, t: int, track_ids) -> dict:
        raise NotImplementedError


# -- pose files -----------------------------------------------------------

def write_pose_csv(path, rows) -> None:
    """``rows``: iterable of (frame, object_id, Pose)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "object_id"] + POSE_HEADER_TAIL)
        for frame, oid, pose in rows:
            w.writerow([int(frame), int(oid)] + [repr(float(x)) for x in pose_to_row(pose)])


def read_pose_csv(path) -> dict:
    """{object_id: {frame: Pose}}."""
    path = Path(path)
    out: dict = {}
    try:
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if header[:2] != ["frame", "object_id"] or len(header) != 18:
                raise SequenceFormatError(f"{path.name}: unexpected header {header}")
            for lineno, row in enumerate(r, start=2):
                if not row:
                    continue
                if len(row) != 18:
                    raise SequenceFormatError(f"{path.name}:{lineno}: expected 18 fields")
                out.setdefault(int(row[1]), {})[int(row[0])] = pose_from_row([float(x) for x in row[2:]])
    except OSError as e:
        raise SequenceFormatError(f"cannot read {path}: {e}") from e
    except (ValueError, StopIteration) as e:
        if isinstance(e, SequenceFormatError):
            raise
        raise SequenceFormatError(f"{path.name}: {e}") from e
    return out


# -- manifest ---------------------------------------------------------------

def write_manifest(path, camera: CameraModel, frames: int, object_ids, extra: Optional[dict] = None):
    lines = [
        f"frames: {frames}",
        f"width: {camera.width}",
        f"height: {camera.height}",
        f"fx: {camera.fx!r}",
        f"fy: {camera.fy!r}",
        f"cx: {camera.cx!r}",
        f"cy: {camera.cy!r}",
        f"object_count: {len(object_ids)}",
        "object_ids: " + ",".join(str(i) for i in object_ids),
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(seq_dir) -> tuple[CameraModel, int, list, dict]:
    path = Path(seq_dir) / MANIFEST
    if not path.is_file():
        raise SequenceFormatError(f"missing {MANIFEST} in {seq_dir}")
    kv = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if ":" not in line:
            raise SequenceFormatError(f"{MANIFEST}:{lineno}: expected 'key: value'")
        k, v = line.split(":", 1)
        kv[k.strip()] = v.strip()
    try:
        cam = CameraModel(float(kv["fx"]), float(kv["fy"]), float(kv["cx"]), float(kv["cy"]),
                          int(kv["width"]), int(kv["height"]))
        frames = int(kv["frames"])
        ids = [int(x) for x in kv["object_ids"].split(",") if x.strip()]
        if int(kv["object_count"]) != len(ids):
            raise SequenceFormatError(f"{MANIFEST}: object_count does not match object_ids")
    except KeyError as e:
        raise SequenceFormatError(f"{MANIFEST}: missing key {e}") from e
    except ValueError as e:
        if isinstance(e, SequenceFormatError):
            raise
        raise SequenceFormatError(f"{MANIFEST}: {e}") from e
    return cam, frames, ids, kv


# -- simulated (in-memory) source ------------------------------------------

class SimulatedSequence(SequenceSource):
    """Renders and synthesizes lazily; values are quantized exactly as the
    file format would store them, so results match a written sequence."""

    def __init__(self, scene, render_cache: Optional[dict] = None):
        from .simulator.render import noisy_depth, render_depth
        from .simulator.tracks import TrackSynthesizer

        self.scene = scene
        self.camera = scene.camera
        self.n_frames = scene.frames
        self.object_ids = [o.id for o in scene.objects]
        self._render = render_depth
        self._noisy = noisy_depth
        # clean renders do not depend on the noise seed, so callers running
        # several seeds of one scene may share this cache
        self._clean: dict = {} if render_cache is None else render_cache
        self.synth = TrackSynthesizer(scene, self.clean)
        self._tracks: dict = {}

    def clean(self, t: int):
        if t not in self._clean:
            self._clean[t] = self._render(self.scene, t)
        return self._clean[t]

    def frame(self, t: int) -> FrameInput:
        rf = self.clean(t)
        depth = self._noisy(self.scene, rf.depth, t).astype("<f4").astype(float)
        masks = {oid: rf.labels == oid for oid in self.object_ids}
        color = np.clip(np.rint(rf.color * 255), 0, 255).astype(np.uint8)
        cands = {}
        if self.synth.is_candidate_frame(t):
            for oid in self.object_ids:
                cands[oid] = [Candidate(c.pixel, _q6(c.score), c.track_id) for c in self.synth.candidates(t, oid)]
        return FrameInput(t, depth, masks, color, cands)

    def track(self, tid: int) -> dict:
        if tid not in self._tracks:
            recs = self.synth.synthesize(tid)
            self._tracks[tid] = {
                r.frame: TrackRecord(r.frame, r.track_id, r.object_id, _q6(r.u), _q6(r.v), r.visible,
                                     _q6(r.uncertainty))
                for r in recs
            }
        return self._tracks[tid]

    def activate(self, track_ids) -> None:
        for tid in track_ids:
            self.track(tid)

    def records(self, t: int, track_ids) -> dict:
        out = {}
        for tid in track_ids:
            r = self.track(tid).get(t)
            if r is not None:
                out[tid] = r
        return out


# -- writing ----------------------------------------------------------------

def write_sequence(scene, out_dir) -> dict:
    """Render, synthesize and write a full sequence. Returns the manifest
    entries. Output is byte-identical for a fixed scene and seed."""
    from .simulator.tracks import decode_track_id

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create sequence directory {out}: {e}") from e
    src = SimulatedSequence(scene)
    cam = scene.camera
    ids = src.object_ids
    all_tracks = []
    gt_rows, vis_rows = [], []

    def _write(path: Path, data: bytes):
        try:
            path.write_bytes(data)
        except OSError as e:
            raise OSError(f"failed writing {path}: {e}") from e

    for t in range(scene.frames):
        fi = src.frame(t)
        _write(out / f"depth_{t:06d}.bin", fi.depth.astype("<f4").tobytes())
        labels = np.zeros(fi.depth.shape, dtype=np.uint8)
        for oid, m in fi.masks.items():
            labels[m] = oid + 1
        _write(out / f"mask_{t:06d}.bin", labels.tobytes())
        _write(out / f"color_{t:06d}.bin", fi.color.tobytes())
        if fi.candidates:
            lines = ["object_id,u,v,score"]
            for oid in ids:
                for c in fi.candidates.get(oid, []):
                    lines.append(f"{oid},{_fmt(c.pixel[0])},{_fmt(c.pixel[1])},{_fmt(c.score)}")
                    all_tracks.append(c.track_id)
            _write(out / f"candidates_{t:06d}.csv", ("\n".join(lines) + "\n").encode())
        for obj in scene.objects:
            gt_rows.append((t, obj.id, scene.gt_pose(obj, t)))
            visible = (not scene.fully_occluded(obj.id, t)) and bool(fi.masks[obj.id].any())
            vis_rows.append((t, obj.id, int(visible)))

    rows = []
    for tid in all_tracks:
        for r in src.track(tid).values():
            rows.append((r.frame, r.track_id, r.object_id, r.u, r.v, r.visible, r.uncertainty))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(out / "tracks.csv", "w", newline="") as fh:
        fh.write(",".join(TRACKS_HEADER) + "\n")
        for f, tid, oid, u, v, vis, unc in rows:
            fh.write(f"{f},{tid},{oid},{_fmt(u)},{_fmt(v)},{int(vis)},{_fmt(unc)}\n")
    write_pose_csv(out / "gt_poses.csv", gt_rows)
    with open(out / "gt_visibility.csv", "w") as fh:
        fh.write("frame,object_id,visible\n")
        for f, oid, vis in vis_rows:
            fh.write(f"{f},{oid},{vis}\n")

    from .tsdf import write_obj

    for obj in scene.objects:
        mesh = obj.shape.mesh().transformed(scene.camera_pose_of(obj, 0))
        mesh.colors = np.tile(np.asarray(obj.color, dtype=float), (len(mesh.vertices), 1))
        write_obj(mesh, out / f"model_obj{obj.id}.obj")

    extra = {"frame_rate": scene.frame_rate, "seed": scene.noise.seed, "name": scene.name}
    write_manifest(out / MANIFEST, cam, scene.frames, ids, extra)
    return {"frames": scene.frames, "object_ids": ids, "tracks": len(all_tracks), "dir": str(out)}


# -- file-backed source ------------------------------------------------------

class FileSequence(SequenceSource):
    def __init__(self, seq_dir):
        self.dir = Path(seq_dir)
        self.camera, self.n_frames, self.object_ids, self.manifest = read_manifest(self.dir)
        self._by_frame: dict = {}
        self._first: dict = {}
        self._load_tracks()

    def _load_tracks(self):
        path = self.dir / "tracks.csv"
        if not path.is_file():
            raise SequenceFormatError(f"missing tracks.csv in {self.dir}")
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r, None)
            if header != TRACKS_HEADER:
                raise SequenceFormatError(f"tracks.csv: unexpected header {header}")
            for lineno, row in enumerate(r, start=2):
                if not row:
                    continue
                try:
                    f, tid, oid = int(row[0]), int(row[1]), int(row[2])
                    u, v = float(row[3]), float(row[4])
                    vis = row[5].strip() == "1"
                    unc = float(row[6])
                except (ValueError, IndexError) as e:
                    raise SequenceFormatError(f"tracks.csv:{lineno}: {e}") from e
                if not 0.0 <= unc <= 1.0:
                    raise SequenceFormatError(f"tracks.csv:{lineno}: uncertainty {unc} outside [0, 1]")
                self._by_frame.setdefault(f, {})[tid] = TrackRecord(f, tid, oid, u, v, vis, unc)
                key = (oid, tid)
                if key not in self._first or f < self._first[key][0]:
                    self._first[key] = (f, u, v)
        self._query_index = {(f, oid, u, v): tid for (oid, tid), (f, u, v) in self._first.items()}

    def _read_bin(self, name: str, dtype, count: int, t: int) -> np.ndarray:
        path = self.dir / name
        try:
            data = np.fromfile(path, dtype=dtype)
        except OSError as e:
            raise SequenceFormatError(f"frame {t}: cannot read {name}: {e}") from e
        if data.size != count:
            raise SequenceFormatError(f"frame {t}: {name} has {data.size} values, expected {count}")
        return data

    def frame(self, t: int) -> FrameInput:
        h, w = self.camera.height, self.camera.width
        depth = self._read_bin(f"depth_{t:06d}.bin", "<f4", h * w, t).reshape(h, w).astype(float)
        labels = self._read_bin(f"mask_{t:06d}.bin", np.uint8, h * w, t).reshape(h, w)
        cpath = self.dir / f"color_{t:06d}.bin"
        color = None
        if cpath.is_file():
            color = self._read_bin(cpath.name, np.uint8, h * w * 3, t).reshape(h, w, 3)
        masks = {oid: labels == oid + 1 for oid in self.object_ids}
        cands = {}
        cand_path = self.dir / f"candidates_{t:06d}.csv"
        if cand_path.is_file():
            with open(cand_path, newline="") as fh:
                r = csv.reader(fh)
                next(r, None)
                for lineno, row in enumerate(r, start=2):
                    if not row:
                        continue
                    try:
                        oid, u, v, s = int(row[0]), float(row[1]), float(row[2]), float(row[3])
                    except (ValueError, IndexError) as e:
                        raise SequenceFormatError(f"{cand_path.name}:{lineno}: {e}") from e
                    tid = self._query_index.get((t, oid, u, v))
                    cands.setdefault(oid, []).append(Candidate((u, v), s, tid))
        fi = FrameInput(t, depth, masks, color, cands)
        fi.validate(self.camera)
        return fi

    def records(self, t: int, track_ids) -> dict:
        recs = self._by_frame.get(t, {})
        return {tid: recs[tid] for tid in track_ids if tid in recs}


def read_visibility(seq_dir) -> dict:
    """{object_id: {frame: bool}} from gt_visibility.csv, or {} if absent."""
    path = Path(seq_dir) / "gt_visibility.csv"
    out: dict = {}
    if not path.is_file():
        return out
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r, None)
        for row in r:
            if row:
                out.setdefault(int(row[1]), {})[int(row[0])] = row[2].strip() == "1"
    return out
