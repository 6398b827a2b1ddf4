"""Seeded synthetic mouse video: ground-truth poses and observed keypoints.

Joint angles follow slow smooth drifts plus a trotting stride at the gait
frequency (hips and shoulders swing fore-aft, diagonal pairs in phase). The
root stays near the cage center at the camera distance, as on a treadmill.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..camera import CameraModel, project
from ..errors import SpecError
from ..keypoints import KeypointFrame
from ..skeleton import (
    CHAIN_TO_KEYPOINT,
    KEYPOINT_NAMES,
    PoseParams,
    Skeleton,
    auxiliary_points,
    forward_kinematics,
)
from .io import FrameRecord, TrackFile

LAYOUTS = ("top-down", "rig")

# (joint, angle slot, stride phase): diagonal limbs move together
_STRIDE = (
    ("left_hip", 1, 0.0),
    ("right_shoulder", 1, 0.0),
    ("right_hip", 1, np.pi),
    ("left_shoulder", 1, np.pi),
    ("left_knee", 0, 0.5 * np.pi),
    ("right_elbow", 0, 0.5 * np.pi),
    ("right_knee", 0, 1.5 * np.pi),
    ("left_elbow", 0, 1.5 * np.pi),
)
_LIFT_RATIO = 0.4


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    frames: int = 240
    fps: float = 24.0
    gait_frequency: float = 3.0
    belt_speed: float = 20.0
    noise_px: float = 0.0
    occlusion: float | Mapping[str, float] = 0.0
    layout: str = "top-down"
    camera_distance: float = 400.0
    pose_jitter_deg: float = 8.0
    stride_amplitude_deg: float = 25.0

    def __post_init__(self) -> None:
        if self.frames < 1 or not self.fps > 0:
            raise SpecError("frames and fps must be positive")
        if not 0 < self.gait_frequency < self.fps / 2.0:
            raise SpecError(f"gait frequency must lie in (0, {self.fps / 2.0}) Hz (Nyquist)")
        if self.layout not in LAYOUTS:
            raise SpecError(f"layout must be one of {LAYOUTS}")
        if self.noise_px < 0 or self.camera_distance <= 0:
            raise SpecError("noise must be non-negative and distance positive")
        for p in self.occlusion_table().values():
            if not 0.0 <= p <= 1.0:
                raise SpecError("occlusion probabilities must lie in [0, 1]")

    def occlusion_table(self) -> dict[str, float]:
        if isinstance(self.occlusion, Mapping):
            unknown = set(self.occlusion) - set(KEYPOINT_NAMES)
            if unknown:
                raise SpecError(f"unknown keypoints in occlusion table: {sorted(unknown)}")
            return {n: float(self.occlusion.get(n, 0.0)) for n in KEYPOINT_NAMES}
        return {n: float(self.occlusion) for n in KEYPOINT_NAMES}


@dataclass(frozen=True)
class SynthResult:
    truth: TrackFile
    views: dict[str, TrackFile]
    cameras: list[CameraModel]

    @property
    def observed(self) -> TrackFile:
        return self.views[self.cameras[0].camera_id]


def camera_layout(layout: str, distance: float) -> list[CameraModel]:
    """Cameras for a layout; the world frame is the top-down camera's frame."""
    top = CameraModel(800.0, 800.0, 320.0, 240.0, image_size=(640, 480), camera_id="top")
    if layout == "top-down":
        return [top]
    target = (0.0, 0.0, distance)
    up = (0.0, 0.0, -1.0)
    side_a = CameraModel.look_at((0.0, -distance, distance + 10.0), target, up, 800.0, 800.0, 320.0, 240.0,
                                 camera_id="side_a")
    side_b = CameraModel.look_at((distance * np.cos(np.pi / 6), distance * np.sin(np.pi / 6), distance - 20.0),
                                 target, up, 800.0, 800.0, 320.0, 240.0, camera_id="side_b")
    return [top, side_a, side_b]


def joint_angle_trajectories(spec: SynthSpec, skeleton: Skeleton, rng: np.random.Generator) -> np.ndarray:
    """Angles of shape (frames, 40) as flat parameter vectors."""
    t = np.arange(spec.frames) / spec.fps
    n = len(skeleton.moving_joints)
    jitter = np.deg2rad(spec.pose_jitter_deg)
    offsets = rng.uniform(-0.5, 0.5, size=(n, 2)) * jitter
    freqs = rng.uniform(0.05, 0.4, size=(n, 2, 2))
    phases = rng.uniform(0.0, 2 * np.pi, size=(n, 2, 2))
    drift = 0.3 * np.sin(2 * np.pi * freqs[None] * t[:, None, None, None] + phases[None]).sum(-1) * jitter
    angles = offsets[None] + drift

    stride = np.deg2rad(spec.stride_amplitude_deg)
    w = 2 * np.pi * spec.gait_frequency * t
    for name, slot, phase in _STRIDE:
        amp = stride if slot == 1 else _LIFT_RATIO * stride
        angles[:, skeleton.moving_joints.index(name), slot] += amp * np.sin(w + phase)
    margin = np.deg2rad(1.0)
    angles = np.clip(angles, -(skeleton.angle_limit - margin), skeleton.angle_limit - margin)

    yaw0 = rng.uniform(-np.pi, np.pi)
    xy0 = rng.uniform(-30.0, 30.0, size=2)
    slow = rng.uniform(0.0, 2 * np.pi, size=5)
    theta = np.zeros((spec.frames, PoseParams.size))
    theta[:, 0] = 0.04 * np.sin(2 * np.pi * 0.11 * t + slow[0])
    theta[:, 1] = 0.04 * np.sin(2 * np.pi * 0.07 * t + slow[1])
    theta[:, 2] = np.angle(np.exp(1j * (yaw0 + 0.2 * np.sin(2 * np.pi * 0.05 * t + slow[2]))))
    theta[:, 3] = xy0[0] + 8.0 * np.sin(2 * np.pi * 0.06 * t + slow[3])
    theta[:, 4] = xy0[1] + 8.0 * np.sin(2 * np.pi * 0.09 * t + slow[4])
    theta[:, 5] = spec.camera_distance
    theta[:, 6:] = angles.reshape(spec.frames, -1)
    return theta


def synth_generate(spec: SynthSpec, skeleton: Skeleton) -> SynthResult:
    """Ground-truth track, per-camera observed keypoint tracks and cameras."""
    cameras = camera_layout(spec.layout, spec.camera_distance)
    motion_seq, *view_seqs = np.random.SeedSequence(spec.seed).spawn(1 + len(cameras))
    theta = joint_angle_trajectories(spec, skeleton, np.random.default_rng(motion_seq))
    occ = np.array([spec.occlusion_table()[n] for n in KEYPOINT_NAMES])
    digest = skeleton.digest()
    source = "labeled" if spec.layout == "rig" else "predicted"

    truth_frames = []
    world = []
    for i in range(spec.frames):
        params = PoseParams.from_vector(theta[i])
        pose = forward_kinematics(skeleton, params)
        pts = np.zeros((len(KEYPOINT_NAMES), 3))
        pts[CHAIN_TO_KEYPOINT] = pose.positions
        for name, p in auxiliary_points(skeleton, params).items():
            pts[KEYPOINT_NAMES.index(name)] = p
        world.append(pts)
        truth_frames.append(FrameRecord(i, params=params, pose=pose))
    truth = TrackFile(truth_frames, spec.fps, cameras[0].camera_id, digest)

    views = {}
    for cam, seq in zip(cameras, view_seqs):
        rng = np.random.default_rng(seq)
        records = []
        for i, pts in enumerate(world):
            uv = project(cam, pts)
            noise = rng.normal(0.0, 1.0, size=uv.shape) * spec.noise_px
            hidden = rng.random(len(KEYPOINT_NAMES)) < occ
            if spec.noise_px > 0:
                uv = uv + noise
            uv[hidden] = np.nan
            conf = np.where(hidden, 0.0, 1.0)
            records.append(FrameRecord(i, keypoints=KeypointFrame(uv, conf, i, source)))
        views[cam.camera_id] = TrackFile(records, spec.fps, cam.camera_id, digest)
    return SynthResult(truth, views, cameras)
