"""Per-frame 2D keypoint container."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ShapeError
from .skeleton import CHAIN_TO_KEYPOINT, KEYPOINT_NAMES

SOURCES = ("labeled", "predicted")


@dataclass(frozen=True)
class KeypointFrame:
    """2D keypoints of one frame in canonical keypoint order.

    Missing keypoints have NaN coordinates. ``bbox`` is ``(x, y, w, h)`` in
    pixels; when absent it is the minimal box around the present keypoints.
    """

    positions: np.ndarray
    confidence: np.ndarray | None = None
    frame_index: int = 0
    source: str = "predicted"
    box: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        xy = np.asarray(self.positions, dtype=float)
        if xy.shape != (len(KEYPOINT_NAMES), 2):
            raise ShapeError(f"keypoints must have shape ({len(KEYPOINT_NAMES)}, 2), got {xy.shape}")
        present = np.all(np.isfinite(xy), axis=1)
        if self.confidence is None:
            conf = present.astype(float)
        else:
            conf = np.asarray(self.confidence, dtype=float)
            if conf.shape != (len(KEYPOINT_NAMES),):
                raise ShapeError("confidence must have one entry per keypoint")
            if np.any((conf < 0) | (conf > 1)):
                raise ShapeError("confidences must lie in [0, 1]")
        conf = np.where(present, conf, 0.0)
        xy = np.where(present[:, None], xy, np.nan)
        if self.source not in SOURCES:
            raise ShapeError(f"source must be one of {SOURCES}")
        object.__setattr__(self, "positions", xy)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "frame_index", int(self.frame_index))
        if self.box is not None:
            object.__setattr__(self, "box", tuple(float(v) for v in self.box))

    @classmethod
    def from_mapping(cls, points: Mapping[str, Sequence[float]], **kwargs) -> "KeypointFrame":
        """Build from ``name -> (u, v[, confidence])``; unnamed keypoints are missing."""
        xy = np.full((len(KEYPOINT_NAMES), 2), np.nan)
        conf = np.zeros(len(KEYPOINT_NAMES))
        for name, val in points.items():
            i = KEYPOINT_NAMES.index(name)
            xy[i] = val[0], val[1]
            conf[i] = val[2] if len(val) > 2 else 1.0
        return cls(xy, conf, **kwargs)

    @property
    def present(self) -> np.ndarray:
        return np.all(np.isfinite(self.positions), axis=1)

    def bbox(self) -> tuple[float, float, float, float]:
        if self.box is not None:
            return self.box
        pts = self.positions[self.present]
        if len(pts) == 0:
            return (0.0, 0.0, 0.0, 0.0)
        lo, hi = pts.min(0), pts.max(0)
        return (float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))

    def scale(self) -> float:
        """Object scale: square root of the bounding box area."""
        _, _, w, h = self.bbox()
        return float(np.sqrt(max(w, 0.0) * max(h, 0.0)))

    def chain(self) -> tuple[np.ndarray, np.ndarray]:
        """Positions and confidences of the 18 chain joints."""
        return self.positions[CHAIN_TO_KEYPOINT], self.confidence[CHAIN_TO_KEYPOINT]
