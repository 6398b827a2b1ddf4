"""Multiview triangulation of labeled joints.

Each joint is triangulated independently: a linear (DLT) estimate followed
by Levenberg-Marquardt refinement of the confidence-weighted squared pixel
error. No bone-length consistency is imposed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .camera import CameraModel, project, project_with_jacobian
from .errors import (
    BehindCameraError,
    DegenerateGeometryError,
    InsufficientViewsError,
    MouseLiftError,
)
from .keypoints import KeypointFrame
from .skeleton import CHAIN_JOINTS, CHAIN_TO_KEYPOINT, NUM_JOINTS, Pose3D

MAX_CONDITION = 1e12
GRAD_TOL = 1e-10
MAX_ITER = 100


@dataclass(frozen=True)
class MultiviewObservation:
    """Pixel observations of one joint keyed by camera id."""

    points: Mapping[str, Sequence[float]]
    confidence: Mapping[str, float] = field(default_factory=dict)
    joint: str = ""
    frame_index: int = 0

    def weight(self, camera_id: str) -> float:
        return float(self.confidence.get(camera_id, 1.0))


def _views(cameras: Sequence[CameraModel], obs: MultiviewObservation):
    by_id = {c.camera_id: c for c in cameras}
    views = []
    # sorted by id so the result does not depend on camera ordering
    for cid in sorted(obs.points):
        if cid not in by_id:
            continue
        uv = np.asarray(obs.points[cid], dtype=float)
        w = obs.weight(cid)
        if w > 0 and np.all(np.isfinite(uv)):
            views.append((by_id[cid], uv, w))
    return views


def linear_triangulation(views) -> np.ndarray:
    """Weighted inhomogeneous DLT; raises on near-parallel rays."""
    rows, rhs = [], []
    for cam, (u, v), w in views:
        P = cam.projection_matrix()
        s = np.sqrt(w)
        a1 = u * P[2] - P[0]
        a2 = v * P[2] - P[1]
        rows += [s * a1[:3], s * a2[:3]]
        rhs += [-s * a1[3], -s * a2[3]]
    A = np.array(rows)
    b = np.array(rhs)
    if np.linalg.cond(A) > MAX_CONDITION:
        raise DegenerateGeometryError("rays are nearly parallel")
    X, *_ = np.linalg.lstsq(A, b, rcond=None)
    return X


def _cost(views, X: np.ndarray) -> float:
    total = 0.0
    for cam, uv, w in views:
        try:
            r = project(cam, X) - uv
        except BehindCameraError:
            return np.inf
        total += w * float(r @ r)
    return total


def triangulate_point(cameras: Sequence[CameraModel], obs: MultiviewObservation) -> tuple[np.ndarray, float]:
    """Point minimizing the weighted squared reprojection error and its rms (px)."""
    views = _views(cameras, obs)
    if len(views) < 2:
        raise InsufficientViewsError(f"joint {obs.joint or '?'} is seen by {len(views)} camera(s); need 2")
    centers = np.array([c.center for c, _, _ in views])
    if np.ptp(centers, axis=0).max() < 1e-9:
        raise DegenerateGeometryError("all observing cameras share one center")

    X = linear_triangulation(views)
    cost = _cost(views, X)
    if not np.isfinite(cost):
        raise DegenerateGeometryError("linear estimate lies behind an observing camera")

    mu = 1e-3
    for _ in range(MAX_ITER):
        JtJ = np.zeros((3, 3))
        g = np.zeros(3)
        for cam, uv, w in views:
            p, J = project_with_jacobian(cam, X[None])
            r = p[0] - uv
            JtJ += w * J[0].T @ J[0]
            g += w * J[0].T @ r
        if np.linalg.norm(2.0 * g) < GRAD_TOL:
            break
        improved = False
        while mu < 1e12:
            step = np.linalg.solve(JtJ + mu * np.diag(np.diag(JtJ)) + 1e-15 * np.eye(3), -g)
            cand = X + step
            new = _cost(views, cand)
            if new <= cost:
                X, cost = cand, new
                mu = max(mu / 10.0, 1e-12)
                improved = True
                break
            mu *= 10.0
        if not improved or np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(X)):
            break

    wsum = sum(w for _, _, w in views)
    return X, float(np.sqrt(cost / wsum))


@dataclass(frozen=True)
class TriangulatedPose:
    pose: Pose3D
    rms: np.ndarray
    failures: Mapping[str, str]


def triangulate_pose(cameras: Sequence[CameraModel], views: Mapping[str, KeypointFrame]) -> TriangulatedPose:
    """Triangulate all chain joints of one synchronized frame.

    ``views`` maps camera id to that camera's keypoints. Joints that cannot
    be reconstructed are marked invalid with the reason in ``failures``.
    """
    P = np.full((NUM_JOINTS, 3), np.nan)
    rms = np.full(NUM_JOINTS, np.nan)
    failures: dict[str, str] = {}
    errors: list[MouseLiftError] = []
    frame_index = next(iter(views.values())).frame_index if views else 0
    for j, name in enumerate(CHAIN_JOINTS):
        k = CHAIN_TO_KEYPOINT[j]
        pts, conf = {}, {}
        for cid, frame in views.items():
            if frame.present[k] and frame.confidence[k] > 0:
                pts[cid] = frame.positions[k]
                conf[cid] = frame.confidence[k]
        try:
            P[j], rms[j] = triangulate_point(cameras, MultiviewObservation(pts, conf, name, frame_index))
        except (InsufficientViewsError, DegenerateGeometryError) as exc:
            failures[name] = str(exc)
            errors.append(exc)
    valid = np.isfinite(rms)
    if not valid.any():
        raise errors[0]
    return TriangulatedPose(Pose3D(np.where(valid[:, None], P, 0.0), valid), rms, failures)
