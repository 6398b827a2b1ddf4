"""Windowed feature matrices for downstream attribute classifiers."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, StageMissingError
from ..skeleton import CHAIN_JOINTS, KEYPOINT_NAMES
from .io import FrameRecord, TrackFile

log = logging.getLogger(__name__)

REPRESENTATIONS = ("2d_box", "2d_points", "3d_points", "3d_angles")
MAX_FILL = 3


def _columns(representation: str, skeleton_joints: tuple[str, ...] = CHAIN_JOINTS) -> list[str]:
    if representation == "2d_box":
        return ["x", "y", "w", "h"]
    if representation == "2d_points":
        return [f"{n}_{c}" for n in KEYPOINT_NAMES for c in "uv"]
    if representation == "3d_points":
        return [f"{n}_{c}" for n in skeleton_joints for c in "xyz"]
    moving = [n for n in skeleton_joints if n != "tail_base"]
    return ["root_rx", "root_ry", "root_rz"] + [f"{n}_{c}" for n in moving for c in "ab"]


def _feature(record: FrameRecord, representation: str) -> np.ndarray | None:
    if representation == "2d_box":
        return None if record.keypoints is None else np.array(record.keypoints.bbox())
    if representation == "2d_points":
        return None if record.keypoints is None else record.keypoints.positions.ravel()
    if representation == "3d_points":
        if record.pose is None:
            return None
        P = np.where(record.pose.valid[:, None], record.pose.positions, np.nan)
        return P.ravel()
    if record.params is None:
        return None
    return np.concatenate([record.params.root_rotation, record.params.joint_angles.ravel()])


@dataclass(frozen=True)
class FeatureWindows:
    """``data[w]`` is the (frames_per_window, n_features) block of window ``w``."""

    representation: str
    columns: tuple[str, ...]
    data: np.ndarray
    frame_indices: np.ndarray
    fps: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("window,frame," + ",".join(self.columns) + "\n")
        for w, (block, frames) in enumerate(zip(self.data, self.frame_indices)):
            for row, f in zip(block, frames):
                buf.write(f"{w},{int(f)}," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def export_features(track: TrackFile, representation: str, window: float = 10.0) -> FeatureWindows:
    """Cut the track into consecutive windows of ``window`` seconds.

    Frames that are absent or lack the requested stage are forward-filled
    from the previous frame when the gap is at most three frames; a window
    containing a longer gap is dropped. A trailing partial window is dropped.
    """
    if representation not in REPRESENTATIONS:
        raise DataError(f"representation must be one of {REPRESENTATIONS}")
    if not window > 0:
        raise DataError("window length must be positive")
    cols = _columns(representation)
    empty = FeatureWindows(representation, tuple(cols), np.zeros((0, 0, len(cols))), np.zeros((0, 0), int), track.fps)
    if not track.frames:
        log.warning("track is empty; no windows exported")
        return empty
    feats = {r.index: _feature(r, representation) for r in track.frames}
    if all(v is None for v in feats.values()):
        raise StageMissingError(f"track has no data for representation {representation!r}")

    first, last = track.frames[0].index, track.frames[-1].index
    grid = np.arange(first, last + 1)
    width = len(cols)
    rows = np.full((len(grid), width), np.nan)
    usable = np.zeros(len(grid), bool)
    prev, gap = None, 0
    for k, f in enumerate(grid):
        v = feats.get(int(f))
        if v is not None:
            rows[k], prev, gap, usable[k] = v, v, 0, True
        else:
            gap += 1
            if prev is not None and gap <= MAX_FILL:
                rows[k], usable[k] = prev, True

    per = int(round(window * track.fps))
    n_windows = len(grid) // per
    if n_windows == 0:
        log.warning("track spans %d frames, shorter than one %g s window (%d frames)", len(grid), window, per)
        return empty
    blocks, frames = [], []
    for w in range(n_windows):
        sl = slice(w * per, (w + 1) * per)
        if usable[sl].all():
            blocks.append(rows[sl])
            frames.append(grid[sl])
        else:
            log.info("dropping window %d: gap longer than %d frames", w, MAX_FILL)
    if not blocks:
        return empty
    return FeatureWindows(representation, tuple(cols), np.array(blocks), np.array(frames), track.fps)
