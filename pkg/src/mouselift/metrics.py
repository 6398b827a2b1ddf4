"""Keypoint similarity and registered 3D error."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateTruthError, RegistrationError
from .keypoints import KeypointFrame
from .skeleton import CHAIN_JOINTS, KEYPOINT_NAMES, Pose3D

__all__ = [
    "KeypointFrame",
    "OKS_FALLOFF",
    "TABLE_GROUPS",
    "TABLE_THRESHOLDS",
    "AccuracyTable",
    "oks",
    "oks_accuracy_table",
    "rigid_register",
    "registered_3d_error",
]

OKS_FALLOFF = 0.08
TABLE_THRESHOLDS = (0.5, 0.7, 0.9)
# left/right joints pooled into one column
TABLE_GROUPS: Mapping[str, tuple[str, ...]] = {
    "Nose": ("nose",),
    "Shoulder": ("left_shoulder", "right_shoulder"),
    "Hip": ("left_hip", "right_hip"),
    "Wrist": ("left_wrist", "right_wrist"),
    "Ankle": ("left_ankle", "right_ankle"),
}


def oks(pred: KeypointFrame, truth: KeypointFrame, k: float = OKS_FALLOFF) -> tuple[np.ndarray, float]:
    """Per-keypoint object keypoint similarity and its mean.

    Keypoints missing from ``truth`` score NaN and are left out of the mean;
    a keypoint present in ``truth`` but missing from ``pred`` scores 0.
    """
    _, _, w, h = truth.bbox()
    area = w * h
    if not area > 0:
        raise DegenerateTruthError("ground-truth bounding box has zero area")
    d2 = np.sum((pred.positions - truth.positions) ** 2, axis=1)
    scores = np.exp(-d2 / (2.0 * k * k * area))
    scores = np.where(pred.present, scores, 0.0)
    scores = np.where(truth.present, scores, np.nan)
    scored = truth.present
    mean = float(scores[scored].mean()) if scored.any() else float("nan")
    return scores, mean


@dataclass(frozen=True)
class AccuracyTable:
    """Share of keypoint scores above each threshold, one column per group."""

    thresholds: tuple[float, ...]
    columns: tuple[str, ...]
    values: np.ndarray
    counts: tuple[int, ...]

    def to_csv(self) -> str:
        lines = ["T," + ",".join(self.columns)]
        for t, row in zip(self.thresholds, self.values):
            lines.append(f"{t:g}," + ",".join(f"{v:.4f}" for v in row))
        return "\n".join(lines) + "\n"


def oks_accuracy_table(pairs: Sequence[tuple[KeypointFrame, KeypointFrame]],
                       thresholds: Sequence[float] = TABLE_THRESHOLDS,
                       groups: Mapping[str, Sequence[str]] = TABLE_GROUPS,
                       k: float = OKS_FALLOFF) -> AccuracyTable:
    if not pairs:
        raise ValueError("no prediction/truth pairs given")
    all_scores = np.array([oks(p, t, k)[0] for p, t in pairs])
    columns, values, counts = [], [], []
    for name, members in groups.items():
        idx = [KEYPOINT_NAMES.index(m) for m in members]
        s = all_scores[:, idx].ravel()
        s = s[np.isfinite(s)]
        if len(s) == 0:
            warnings.warn(f"keypoint group {name!r} has no scored keypoints; column omitted")
            continue
        columns.append(name)
        counts.append(len(s))
        values.append([float(np.mean(s > t)) for t in thresholds])
    table = np.array(values).T if values else np.zeros((len(thresholds), 0))
    return AccuracyTable(tuple(float(t) for t in thresholds), tuple(columns), table, tuple(counts))


def rigid_register(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation and translation with ``R @ source_i + t ~ target_i``."""
    cs, ct = source.mean(0), target.mean(0)
    H = (source - cs).T @ (target - ct)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, ct - R @ cs


def registered_3d_error(pred: Pose3D, truth: Pose3D) -> tuple[np.ndarray, float]:
    """Per-joint distance (mm) after rigidly registering ``pred`` onto ``truth``.

    Only joints valid in both poses take part; the rest report NaN. No scale
    is fitted, so a wrongly sized prediction keeps a residual.
    """
    common = pred.valid & truth.valid
    if common.sum() < 3:
        raise RegistrationError(f"{int(common.sum())} common joints; need at least 3")
    A, B = pred.positions[common], truth.positions[common]
    for pts in (A, B):
        sv = np.linalg.svd(pts - pts.mean(0), compute_uv=False)
        if sv[1] <= 1e-9 * max(sv[0], 1e-300):
            raise RegistrationError("common joints are collinear")
    R, t = rigid_register(A, B)
    err = np.full(len(CHAIN_JOINTS), np.nan)
    err[common] = np.linalg.norm(A @ R.T + t - B, axis=1)
    return err, float(err[common].mean())
