"""Scene and noise specifications for the simulator, loadable from YAML."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from ..geometry import CameraModel, Pose, so3_exp
from .shapes import Shape, shape_from_dict

OCCLUSION_MODES = ("full-occlusion", "out-of-view")
OUTLIER_MODES = ("static-stick", "random-walk")


class SceneError(ValueError):
    pass


@dataclass
class Trajectory:
    """Kinematic script for one object, in world coordinates.

    ``linear``: the center moves with ``velocity``.
    ``circular``: the center revolves about ``center`` around ``axis`` at
    ``angular_rate`` (the radius is taken from the initial position unless
    ``radius`` is given). ``spin`` (rad/s, world axis-angle rate) rotates the
    object about its own center for both kinds. Motion freezes after
    ``duration`` seconds.
    """

    kind: str = "linear"
    duration: float = 1.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: Optional[float] = None
    angular_rate: float = 0.0
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    spin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    revolve: bool = False

    def pose_at(self, initial: Pose, t: float) -> Pose:
        s = min(max(t, 0.0), self.duration)
        R = so3_exp(np.asarray(self.spin) * s) @ initial.R
        if self.kind == "linear":
            c = initial.t + np.asarray(self.velocity) * s
        else:
            axis = np.asarray(self.axis, dtype=float)
            axis = axis / np.linalg.norm(axis)
            r0 = initial.t - self.center
            r0 = r0 - axis * (axis @ r0) if self.radius is not None else r0
            if self.radius is not None:
                n = np.linalg.norm(r0)
                r0 = r0 / n * self.radius if n > 0 else r0
            rot = so3_exp(axis * self.angular_rate * s)
            c = np.asarray(self.center) + rot @ r0
            if self.revolve:
                R = rot @ R
        return Pose(R, c)


@dataclass
class SceneObject:
    id: int
    shape: Shape
    initial_pose: Pose  # shape frame -> world at t = 0
    trajectory: Trajectory
    color: tuple = (0.8, 0.3, 0.2)


@dataclass
class Occlusion:
    object_id: int
    start: int
    end: int  # inclusive
    mode: str = "full-occlusion"

    def covers(self, frame: int) -> bool:
        return self.start <= frame <= self.end


@dataclass
class NoiseSpec:
    pixel_sigma: float = 0.5
    depth_sigma: float = 0.001
    depth_proportional: bool = False  # sigma scales with z (sigma * z)
    outlier_rate: float = 0.1
    outlier_mode: str = "static-stick"
    walk_sigma: float = 1.0  # px per frame for random-walk outliers
    # reported uncertainty = clamp(error / scale, 0, 1) + baseline
    uncertainty_scale: float = 5.0
    uncertainty_baseline: float = 0.05
    # outliers are confidently wrong: their reported uncertainty ignores the drift
    confident_outliers: bool = True
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise SceneError("outlier_rate must be in [0, 1]")
        if self.outlier_mode not in OUTLIER_MODES:
            raise SceneError(f"outlier_mode must be one of {OUTLIER_MODES}")
        if self.pixel_sigma < 0 or self.depth_sigma < 0:
            raise SceneError("noise sigmas must be non-negative")


@dataclass
class TrackingSpec:
    candidate_interval: int = 10
    max_candidates: int = 60
    cell: int = 6
    visibility_tolerance: float = 0.004  # m, one default voxel


@dataclass
class SceneSpec:
    camera: CameraModel
    objects: list[SceneObject]
    frames: int
    frame_rate: float = 30.0
    camera_pose: Pose = field(default_factory=Pose)  # camera -> world
    occlusions: list[Occlusion] = field(default_factory=list)
    occluder_depth: float = 0.25
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    tracking: TrackingSpec = field(default_factory=TrackingSpec)
    name: str = "scene"

    def validate(self):
        if self.frames <= 0:
            raise SceneError("frames must be positive")
        if self.frame_rate <= 0:
            raise SceneError("frame_rate must be positive")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError("object ids must be unique")
        if any(i < 0 or i > 98 for i in ids):
            raise SceneError("object ids must lie in [0, 98]")
        for o in self.objects:
            if o.trajectory.duration <= 0:
                raise SceneError(f"object {o.id}: trajectory duration must be positive")
        for occ in self.occlusions:
            if occ.mode not in OCCLUSION_MODES:
                raise SceneError(f"occlusion mode must be one of {OCCLUSION_MODES}")
            if occ.object_id not in ids:
                raise SceneError(f"occlusion references unknown object {occ.object_id}")
        self.noise.validate()

    def object(self, oid: int) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def world_pose(self, obj: SceneObject, frame: int) -> Pose:
        return obj.trajectory.pose_at(obj.initial_pose, frame / self.frame_rate)

    def camera_pose_of(self, obj: SceneObject, frame: int) -> Pose:
        """Shape frame -> camera frame."""
        return self.camera_pose.inverse() @ self.world_pose(obj, frame)

    def gt_pose(self, obj: SceneObject, frame: int) -> Pose:
        """Object-frame pose in the camera; identity at frame 0."""
        return self.camera_pose_of(obj, frame) @ self.camera_pose_of(obj, 0).inverse()

    def fully_occluded(self, oid: int, frame: int) -> bool:
        return any(o.object_id == oid and o.mode == "full-occlusion" and o.covers(frame)
                   for o in self.occlusions)


_PALETTE = [(0.85, 0.33, 0.10), (0.0, 0.45, 0.74), (0.47, 0.67, 0.19), (0.49, 0.18, 0.56)]

_TOP_KEYS = {"name", "camera", "camera_pose", "frames", "frame_rate", "objects", "occlusions",
             "occluder_depth", "noise", "tracking"}


def _check_keys(d: dict, allowed: set, where: str):
    extra = set(d) - allowed
    if extra:
        raise SceneError(f"unknown keys in {where}: {sorted(extra)}")


def _pose_from_dict(d: Optional[dict]) -> Pose:
    if d is None:
        return Pose()
    if "matrix" in d:
        return Pose.from_matrix(np.asarray(d["matrix"], dtype=float).reshape(4, 4))
    return Pose.from_rotvec(d.get("rotation", [0.0, 0.0, 0.0]), d.get("translation", [0.0, 0.0, 0.0]))


def scene_from_dict(d: dict) -> SceneSpec:
    _check_keys(d, _TOP_KEYS, "scene")
    c = d["camera"]
    _check_keys(c, {"width", "height", "fx", "fy", "cx", "cy"}, "camera")
    cam = CameraModel(float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                      int(c["width"]), int(c["height"]))
    objects = []
    for k, od in enumerate(d.get("objects", [])):
        _check_keys(od, {"id", "shape", "initial_pose", "trajectory", "color"}, f"objects[{k}]")
        td = dict(od.get("trajectory", {}))
        _check_keys(td, {"kind", "duration", "velocity", "center", "radius", "angular_rate",
                         "axis", "spin", "revolve"}, f"objects[{k}].trajectory")
        if td.get("kind", "linear") not in ("linear", "circular"):
            raise SceneError(f"objects[{k}]: trajectory kind must be linear or circular")
        traj = Trajectory(
            kind=td.get("kind", "linear"),
            duration=float(td.get("duration", 1e9)),
            velocity=np.asarray(td.get("velocity", [0.0, 0.0, 0.0]), dtype=float),
            center=np.asarray(td.get("center", [0.0, 0.0, 0.0]), dtype=float),
            radius=None if td.get("radius") is None else float(td["radius"]),
            angular_rate=float(td.get("angular_rate", 0.0)),
            axis=np.asarray(td.get("axis", [0.0, 1.0, 0.0]), dtype=float),
            spin=np.asarray(td.get("spin", [0.0, 0.0, 0.0]), dtype=float),
            revolve=bool(td.get("revolve", False)),
        )
        oid = int(od.get("id", k))
        color = tuple(od.get("color", _PALETTE[oid % len(_PALETTE)]))
        objects.append(SceneObject(oid, shape_from_dict(od["shape"]), _pose_from_dict(od.get("initial_pose")),
                                   traj, color))
    occl = []
    for k, oc in enumerate(d.get("occlusions", []) or []):
        _check_keys(oc, {"object", "frames", "mode"}, f"occlusions[{k}]")
        start, end = oc["frames"]
        occl.append(Occlusion(int(oc["object"]), int(start), int(end), oc.get("mode", "full-occlusion")))
    nd = d.get("noise", {}) or {}
    _check_keys(nd, set(NoiseSpec.__dataclass_fields__), "noise")
    noise = NoiseSpec(**nd)
    trk = d.get("tracking", {}) or {}
    _check_keys(trk, set(TrackingSpec.__dataclass_fields__), "tracking")
    spec = SceneSpec(
        camera=cam,
        objects=objects,
        frames=int(d["frames"]),
        frame_rate=float(d.get("frame_rate", 30.0)),
        camera_pose=_pose_from_dict(d.get("camera_pose")),
        occlusions=occl,
        occluder_depth=float(d.get("occluder_depth", 0.25)),
        noise=noise,
        tracking=TrackingSpec(**trk),
        name=str(d.get("name", "scene")),
    )
    spec.validate()
    return spec


def load_scene(path) -> SceneSpec:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as e:
        raise SceneError(f"cannot read scene file {path}: {e}") from e
    if not isinstance(data, dict):
        raise SceneError(f"{path}: scene file must be a mapping")
    try:
        return scene_from_dict(data)
    except KeyError as e:
        raise SceneError(f"{path}: missing key {e}") from e


def bundled_scene_path(name: str) -> Path:
    from importlib import resources

    return Path(str(resources.files("occtrack") / "scenes" / f"{name}.yaml"))


def load_bundled(name: str) -> SceneSpec:
    return load_scene(bundled_scene_path(name))
