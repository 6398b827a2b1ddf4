"""Pinhole cameras, projection and reprojection residuals."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BehindCameraError, FormatError, NoObservationsError, ShapeError
from .keypoints import KeypointFrame
from .skeleton import Pose3D

CALIBRATION_FORMAT_VERSION = 1
DEFAULT_VISIBILITY = 0.2


@dataclass(frozen=True)
class CameraModel:
    """Distortion-free pinhole camera; extrinsics map world to camera (mm)."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    image_size: tuple[int, int] = (640, 480)
    camera_id: str = "cam0"

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ShapeError("camera rotation must be 3x3")
        if not (self.fx > 0 and self.fy > 0):
            raise FormatError("focal lengths must be positive")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise FormatError("camera rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def projection_matrix(self) -> np.ndarray:
        K = np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])
        return K @ np.hstack([self.rotation, self.translation[:, None]])

    def intrinsic_only(self) -> "CameraModel":
        """Same intrinsics with identity extrinsics (points given in camera frame)."""
        return replace(self, rotation=np.eye(3), translation=np.zeros(3))

    def backproject(self, uv: Sequence[float], depth: float) -> np.ndarray:
        """Camera-frame point at ``depth`` along the ray through pixel ``uv``."""
        u, v = uv
        return np.array([(u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth])

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float = 60.0, camera_id: str = "cam0") -> "CameraModel":
        """Default intrinsics from image size and horizontal field of view."""
        f = 0.5 * width / np.tan(0.5 * np.deg2rad(fov_deg))
        return cls(f, f, width / 2.0, height / 2.0, image_size=(width, height), camera_id=camera_id)

    @classmethod
    def look_at(cls, eye: Sequence[float], target: Sequence[float], up: Sequence[float],
                fx: float, fy: float, cx: float, cy: float,
                image_size: tuple[int, int] = (640, 480), camera_id: str = "cam0") -> "CameraModel":
        """Camera at ``eye`` whose optical axis points at ``target``; image y follows ``-up``."""
        eye = np.asarray(eye, float)
        z = np.asarray(target, float) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, -np.asarray(up, float))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        return cls(fx, fy, cx, cy, R, -R @ eye, image_size, camera_id)

    def to_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "rotation": [[float(v) for v in row] for row in self.rotation],
            "translation": [float(v) for v in self.translation],
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CameraModel":
        dist = doc.get("distortion")
        if dist is not None and np.any(np.asarray(dist, dtype=float) != 0):
            raise FormatError("lens distortion is not supported; distortion coefficients must be zero")
        try:
            return cls(
                fx=float(doc["fx"]), fy=float(doc["fy"]), cx=float(doc["cx"]), cy=float(doc["cy"]),
                rotation=np.asarray(doc.get("rotation", np.eye(3)), dtype=float),
                translation=np.asarray(doc.get("translation", np.zeros(3)), dtype=float),
                image_size=tuple(doc.get("image_size", (640, 480))),
                camera_id=str(doc.get("camera_id", "cam0")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed camera record: {exc}") from exc


def calibration_to_dict(cameras: Sequence[CameraModel]) -> dict:
    return {"format_version": CALIBRATION_FORMAT_VERSION, "kind": "calibration",
            "cameras": [c.to_dict() for c in cameras]}


def calibration_from_dict(doc: dict) -> list[CameraModel]:
    if doc.get("format_version") != CALIBRATION_FORMAT_VERSION:
        raise FormatError(f"unsupported calibration format_version {doc.get('format_version')!r}")
    cams = [CameraModel.from_dict(c) for c in doc.get("cameras", [])]
    if not cams:
        raise FormatError("calibration file lists no cameras")
    if len({c.camera_id for c in cams}) != len(cams):
        raise FormatError("camera ids must be unique")
    return cams


def load_calibration(path: str | Path) -> list[CameraModel]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return calibration_from_dict(doc)


def to_camera_frame(camera: CameraModel, points: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=float) @ camera.rotation.T + camera.translation


def project(camera: CameraModel, point: np.ndarray) -> np.ndarray:
    """Pixel coordinates of one point ``(3,)`` or many ``(N, 3)``."""
    Xc = to_camera_frame(camera, point)
    Z = Xc[..., 2]
    if np.any(Z <= 0):
        raise BehindCameraError("point lies at or behind the camera plane")
    u = camera.fx * Xc[..., 0] / Z + camera.cx
    v = camera.fy * Xc[..., 1] / Z + camera.cy
    return np.stack([u, v], axis=-1)


def project_with_jacobian(camera: CameraModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Projections ``(N, 2)`` and their derivatives wrt world points ``(N, 2, 3)``."""
    Xc = to_camera_frame(camera, points)
    X, Y, Z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    if np.any(Z <= 0):
        raise BehindCameraError("point lies at or behind the camera plane")
    uv = np.stack([camera.fx * X / Z + camera.cx, camera.fy * Y / Z + camera.cy], axis=1)
    Jc = np.zeros((len(Xc), 2, 3))
    Jc[:, 0, 0] = camera.fx / Z
    Jc[:, 0, 2] = -camera.fx * X / Z**2
    Jc[:, 1, 1] = camera.fy / Z
    Jc[:, 1, 2] = -camera.fy * Y / Z**2
    return uv, Jc @ camera.rotation


def reprojection_residuals(camera: CameraModel, pose: Pose3D, frame: KeypointFrame,
                           visibility_threshold: float = DEFAULT_VISIBILITY) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint ``projection - observation`` for the 18 chain joints.

    Returns ``(residuals, included)``; excluded joints (missing or below the
    visibility threshold) get a zero residual.
    """
    obs, conf = frame.chain()
    included = np.all(np.isfinite(obs), axis=1) & (conf >= visibility_threshold)
    if not included.any():
        raise NoObservationsError("no keypoint passes the visibility threshold")
    res = np.zeros((len(obs), 2))
    res[included] = project(camera, pose.positions[included]) - obs[included]
    return res, included
