"""JSON artifact formats.

Every artifact is written with sorted keys, one-space indentation and a
trailing newline, and non-finite numbers are stored as ``null``. Python's
shortest round-tripping float repr makes write -> read -> write byte-stable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..errors import FormatError
from ..keypoints import KeypointFrame
from ..skeleton import KEYPOINT_NAMES, NUM_JOINTS, Pose3D, PoseParams

TRACK_FORMAT_VERSION = 1
LABELS_FORMAT_VERSION = 1
UNITS = {"length": "mm", "pixel": "px", "time": "s"}


def _plain(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dumps(doc: Any) -> str:
    return json.dumps(_plain(doc), indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: str | Path, doc: Any) -> None:
    Path(path).write_text(dumps(doc))


def read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def _nan(v: Any) -> float:
    return float("nan") if v is None else float(v)


def keypoints_to_list(frame: KeypointFrame) -> list:
    return [
        [float(u), float(v), float(c)] if ok else None
        for (u, v), c, ok in zip(frame.positions, frame.confidence, frame.present)
    ]


def keypoints_from_list(entries: list, **kwargs) -> KeypointFrame:
    if len(entries) != len(KEYPOINT_NAMES):
        raise FormatError(f"expected {len(KEYPOINT_NAMES)} keypoint entries, got {len(entries)}")
    xy = np.full((len(KEYPOINT_NAMES), 2), np.nan)
    conf = np.zeros(len(KEYPOINT_NAMES))
    for i, e in enumerate(entries):
        if e is not None:
            xy[i] = _nan(e[0]), _nan(e[1])
            conf[i] = float(e[2]) if len(e) > 2 else 1.0
    return KeypointFrame(xy, conf, **kwargs)


@dataclass
class FrameRecord:
    index: int
    keypoints: KeypointFrame | None = None
    params: PoseParams | None = None
    pose: Pose3D | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc: dict = {"frame": int(self.index)}
        if self.keypoints is not None:
            kp = {"points": keypoints_to_list(self.keypoints), "source": self.keypoints.source}
            if self.keypoints.box is not None:
                kp["bbox"] = list(self.keypoints.box)
            doc["keypoints"] = kp
        if self.params is not None:
            doc["params"] = {
                "root_rotation": self.params.root_rotation,
                "root_translation": self.params.root_translation,
                "joint_angles": self.params.joint_angles,
            }
        if self.pose is not None:
            doc["pose"] = [p.tolist() if ok else None for p, ok in zip(self.pose.positions, self.pose.valid)]
        if self.diagnostics:
            doc["diagnostics"] = self.diagnostics
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FrameRecord":
        try:
            index = int(doc["frame"])
            kp = params = pose = None
            if "keypoints" in doc:
                k = doc["keypoints"]
                kp = keypoints_from_list(k["points"], frame_index=index, source=k.get("source", "predicted"),
                                         box=tuple(k["bbox"]) if "bbox" in k else None)
            if "params" in doc:
                p = doc["params"]
                params = PoseParams(np.array(p["root_rotation"], float), np.array(p["root_translation"], float),
                                    np.array(p["joint_angles"], float))
            if "pose" in doc:
                entries = doc["pose"]
                if len(entries) != NUM_JOINTS:
                    raise FormatError(f"pose needs {NUM_JOINTS} joints, got {len(entries)}")
                valid = np.array([e is not None for e in entries])
                P = np.array([e if e is not None else [0.0, 0.0, 0.0] for e in entries], float)
                pose = Pose3D(P, valid)
            return cls(index, kp, params, pose, dict(doc.get("diagnostics", {})))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed frame record: {exc}") from exc


@dataclass
class TrackFile:
    """Header plus frame records with strictly increasing indices."""

    frames: list[FrameRecord]
    fps: float = 24.0
    camera_id: str = "cam0"
    skeleton_hash: str = ""
    units: dict = field(default_factory=lambda: dict(UNITS))

    def __post_init__(self) -> None:
        idx = [f.index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise FormatError("frame indices must be strictly increasing")
        if not self.fps > 0:
            raise FormatError("fps must be positive")

    def to_dict(self) -> dict:
        return {
            "format_version": TRACK_FORMAT_VERSION,
            "kind": "track",
            "header": {
                "camera_id": self.camera_id,
                "fps": float(self.fps),
                "skeleton_hash": self.skeleton_hash,
                "units": self.units,
            },
            "frames": [f.to_dict() for f in self.frames],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TrackFile":
        if doc.get("format_version") != TRACK_FORMAT_VERSION or doc.get("kind") != "track":
            raise FormatError("not a version-1 track file")
        h = doc.get("header", {})
        units = h.get("units")
        if not units or any(units.get(k) != v for k, v in UNITS.items()):
            raise FormatError(f"track header must declare units {UNITS}")
        return cls([FrameRecord.from_dict(f) for f in doc.get("frames", [])], float(h.get("fps", 24.0)),
                   str(h.get("camera_id", "cam0")), str(h.get("skeleton_hash", "")), dict(units))


def write_track(path: str | Path, track: TrackFile) -> None:
    write_json(path, track.to_dict())


def read_track(path: str | Path) -> TrackFile:
    return TrackFile.from_dict(read_json(path))


@dataclass
class MultiviewLabels:
    """Synchronized per-camera keypoints: ``frames[index][camera_id]``."""

    frames: dict[int, dict[str, KeypointFrame]]
    camera_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "format_version": LABELS_FORMAT_VERSION,
            "kind": "multiview_labels",
            "cameras": list(self.camera_ids),
            "frames": [
                {"frame": int(i), "views": {cid: keypoints_to_list(kp) for cid, kp in sorted(views.items())}}
                for i, views in sorted(self.frames.items())
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MultiviewLabels":
        if doc.get("format_version") != LABELS_FORMAT_VERSION or doc.get("kind") != "multiview_labels":
            raise FormatError("not a version-1 multiview label file")
        try:
            frames = {}
            for f in doc["frames"]:
                i = int(f["frame"])
                frames[i] = {cid: keypoints_from_list(pts, frame_index=i, source="labeled")
                             for cid, pts in f["views"].items()}
            return cls(frames, tuple(doc["cameras"]))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed multiview label file: {exc}") from exc
