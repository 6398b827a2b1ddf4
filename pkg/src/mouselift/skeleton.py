"""Mouse keypoint set, kinematic chain and forward kinematics.

Coordinates are millimeters. Every non-root joint carries two angles that
tilt its bone away from the neutral direction about two axes perpendicular
to that direction, so bones never twist. The root (``tail_base``) carries a
full rotation given as x-y-z Euler angles, ``R = Rz(g) @ Ry(b) @ Rx(a)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DegeneratePoseError, FormatError, NonFiniteError, ShapeError

KEYPOINT_NAMES: tuple[str, ...] = (
    "nose",
    "left_ear",
    "right_ear",
    "neck_base",
    "spine_mid",
    "tail_base",
    "tail_mid",
    "tail_tip",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
)
CHAIN_JOINTS: tuple[str, ...] = tuple(n for n in KEYPOINT_NAMES if n not in ("left_ear", "right_ear"))
ROOT = "tail_base"
NUM_JOINTS = len(CHAIN_JOINTS)
NORMALIZED_DIM = 3 * NUM_JOINTS

# chain index -> keypoint index
CHAIN_TO_KEYPOINT = np.array([KEYPOINT_NAMES.index(n) for n in CHAIN_JOINTS])

SKELETON_FORMAT_VERSION = 1


def rotation_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(angles: Sequence[float]) -> np.ndarray:
    """Rotation matrix for x-y-z Euler angles ``(a, b, g)``: ``Rz(g) Ry(b) Rx(a)``."""
    a, b, g = angles
    return rotation_z(g) @ rotation_y(b) @ rotation_x(a)


def matrix_to_euler(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`euler_to_matrix`, pitch in [-pi/2, pi/2]."""
    b = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    if abs(np.cos(b)) < 1e-12:
        # gimbal lock: fold all yaw into roll
        a = np.arctan2(-R[1, 2], R[1, 1])
        return np.array([a, b, 0.0])
    a = np.arctan2(R[2, 1], R[2, 2])
    g = np.arctan2(R[1, 0], R[0, 0])
    return np.array([a, b, g])


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis``."""
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def _tilt_axes(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Two unit axes perpendicular to the bone; u2 = direction x u1.
    ref = np.array([0.0, 0.0, 1.0])
    if abs(direction @ ref) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    u1 = np.cross(direction, ref)
    u1 /= np.linalg.norm(u1)
    u2 = np.cross(direction, u1)
    return u1, u2


@dataclass(frozen=True)
class Skeleton:
    """Tree of the 18 chain joints rooted at ``tail_base``.

    Parameters
    ----------
    parents : mapping
        Non-root chain joint -> parent joint.
    bone_lengths : mapping
        Non-root chain joint -> distance to its parent (mm).
    neutral_directions : mapping
        Non-root chain joint -> unit bone direction in the parent frame.
    angle_limit_deg : float
        Symmetric bound applied to both tilt angles of every joint.
    auxiliary : mapping, optional
        Extra keypoints rigidly attached to a chain joint, as
        ``name -> (parent, offset)``. Used for the ears, which are drawn but
        never fitted.
    """

    parents: Mapping[str, str]
    bone_lengths: Mapping[str, float]
    neutral_directions: Mapping[str, Sequence[float]]
    angle_limit_deg: float = 50.0
    auxiliary: Mapping[str, tuple[str, Sequence[float]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        moving = [n for n in CHAIN_JOINTS if n != ROOT]
        for table, label in ((self.parents, "parents"), (self.bone_lengths, "bone_lengths"),
                             (self.neutral_directions, "neutral_directions")):
            if set(table) != set(moving):
                raise FormatError(f"{label} must cover exactly the 17 non-root chain joints")
        if not self.angle_limit_deg > 0:
            raise FormatError("angle limit must be positive")

        index = {n: i for i, n in enumerate(CHAIN_JOINTS)}
        parent_index = np.full(NUM_JOINTS, -1)
        for child, par in self.parents.items():
            if par not in index:
                raise FormatError(f"unknown parent {par!r} for {child!r}")
            parent_index[index[child]] = index[par]

        # topological order from the root; also proves the map is a tree
        order = [index[ROOT]]
        children: dict[int, list[int]] = {i: [] for i in range(NUM_JOINTS)}
        for i in range(NUM_JOINTS):
            if parent_index[i] >= 0:
                children[int(parent_index[i])].append(i)
        k = 0
        while k < len(order):
            order.extend(children[order[k]])
            k += 1
        if len(order) != NUM_JOINTS:
            raise FormatError("parent map is not a tree rooted at tail_base")

        lengths = np.zeros(NUM_JOINTS)
        dirs = np.zeros((NUM_JOINTS, 3))
        u1 = np.zeros((NUM_JOINTS, 3))
        u2 = np.zeros((NUM_JOINTS, 3))
        for name in moving:
            i = index[name]
            L = float(self.bone_lengths[name])
            d = np.asarray(self.neutral_directions[name], dtype=float)
            if not L > 0:
                raise FormatError(f"bone length of {name} must be positive")
            if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-9:
                raise FormatError(f"neutral direction of {name} must be a unit 3-vector")
            lengths[i] = L
            dirs[i] = d
            u1[i], u2[i] = _tilt_axes(d)

        # subtree[i, k]: joint k lies at or below joint i
        subtree = np.eye(NUM_JOINTS, dtype=bool)
        for i in reversed(order):
            p = parent_index[i]
            if p >= 0:
                subtree[p] |= subtree[i]

        moving_index = np.array([index[n] for n in moving])
        object.__setattr__(self, "_parent_index", parent_index)
        object.__setattr__(self, "_order", np.array(order))
        object.__setattr__(self, "_lengths", lengths)
        object.__setattr__(self, "_dirs", dirs)
        object.__setattr__(self, "_u1", u1)
        object.__setattr__(self, "_u2", u2)
        object.__setattr__(self, "_subtree", subtree)
        object.__setattr__(self, "_moving_index", moving_index)

    # derived, read-only views
    @property
    def moving_joints(self) -> tuple[str, ...]:
        """Non-root chain joints, in the order their angles appear in PoseParams."""
        return tuple(CHAIN_JOINTS[i] for i in self._moving_index)

    @property
    def angle_limit(self) -> float:
        return float(np.deg2rad(self.angle_limit_deg))

    @property
    def parent_index(self) -> np.ndarray:
        return self._parent_index.copy()

    def neutral_pose(self) -> np.ndarray:
        """Joint positions with every angle zero and the root at the origin."""
        P = np.zeros((NUM_JOINTS, 3))
        for i in self._order[1:]:
            P[i] = P[self._parent_index[i]] + self._lengths[i] * self._dirs[i]
        return P

    def to_dict(self) -> dict:
        return {
            "format_version": SKELETON_FORMAT_VERSION,
            "kind": "skeleton",
            "root": ROOT,
            "angle_limit_deg": float(self.angle_limit_deg),
            "joints": {
                n: {
                    "parent": self.parents[n],
                    "length": float(self.bone_lengths[n]),
                    "direction": [float(v) for v in self.neutral_directions[n]],
                }
                for n in self.moving_joints
            },
            "auxiliary": {
                n: {"parent": p, "offset": [float(v) for v in off]}
                for n, (p, off) in sorted(self.auxiliary.items())
            },
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Skeleton":
        if doc.get("format_version") != SKELETON_FORMAT_VERSION:
            raise FormatError(f"unsupported skeleton format_version {doc.get('format_version')!r}")
        if doc.get("root", ROOT) != ROOT:
            raise FormatError("skeleton root must be tail_base")
        try:
            joints = doc["joints"]
            return cls(
                parents={n: j["parent"] for n, j in joints.items()},
                bone_lengths={n: float(j["length"]) for n, j in joints.items()},
                neutral_directions={n: tuple(j["direction"]) for n, j in joints.items()},
                angle_limit_deg=float(doc.get("angle_limit_deg", 50.0)),
                auxiliary={n: (a["parent"], tuple(a["offset"])) for n, a in doc.get("auxiliary", {}).items()},
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed skeleton document: {exc}") from exc

    def digest(self) -> str:
        """Short content hash, recorded in track headers."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def default_skeleton() -> Skeleton:
    """The shipped 100 mm mouse skeleton."""
    text = resources.files("mouselift.data").joinpath("default_skeleton.json").read_text()
    return Skeleton.from_dict(json.loads(text))


def load_skeleton(path: str | Path) -> Skeleton:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return Skeleton.from_dict(doc)


@dataclass(frozen=True)
class PoseParams:
    """Root transform plus two tilt angles per non-root joint (radians, mm)."""

    root_rotation: np.ndarray
    root_translation: np.ndarray
    joint_angles: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "root_rotation", np.asarray(self.root_rotation, dtype=float).reshape(3))
        object.__setattr__(self, "root_translation", np.asarray(self.root_translation, dtype=float).reshape(3))
        ja = np.asarray(self.joint_angles, dtype=float)
        if ja.shape != (NUM_JOINTS - 1, 2):
            raise ShapeError(f"joint_angles must have shape ({NUM_JOINTS - 1}, 2), got {ja.shape}")
        object.__setattr__(self, "joint_angles", ja)

    size = 6 + 2 * (NUM_JOINTS - 1)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.root_rotation, self.root_translation, self.joint_angles.ravel()])

    @classmethod
    def from_vector(cls, theta: np.ndarray) -> "PoseParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (cls.size,):
            raise ShapeError(f"parameter vector must have length {cls.size}, got {theta.shape}")
        return cls(theta[:3].copy(), theta[3:6].copy(), theta[6:].reshape(-1, 2).copy())

    @classmethod
    def neutral(cls, translation: Sequence[float] = (0.0, 0.0, 0.0), rotation: Sequence[float] = (0.0, 0.0, 0.0)) -> "PoseParams":
        return cls(np.array(rotation, float), np.array(translation, float), np.zeros((NUM_JOINTS - 1, 2)))


@dataclass(frozen=True)
class Pose3D:
    """18 joint positions in chain order; ``valid`` marks reconstructed joints."""

    positions: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self) -> None:
        P = np.asarray(self.positions, dtype=float)
        if P.shape != (NUM_JOINTS, 3):
            raise ShapeError(f"pose must have shape ({NUM_JOINTS}, 3), got {P.shape}")
        valid = np.ones(NUM_JOINTS, bool) if self.valid is None else np.asarray(self.valid, bool)
        if valid.shape != (NUM_JOINTS,):
            raise ShapeError("valid mask must have one entry per chain joint")
        object.__setattr__(self, "positions", P)
        object.__setattr__(self, "valid", valid)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.positions[CHAIN_JOINTS.index(name)]


def _check_params(skeleton: Skeleton, theta: np.ndarray) -> None:
    if theta.shape != (PoseParams.size,):
        raise ShapeError(f"parameter vector must have length {PoseParams.size}, got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise NonFiniteError("pose parameters must be finite")


def _forward(skeleton: Skeleton, theta: np.ndarray, with_jacobian: bool):
    """Joint positions and, optionally, their derivatives.

    Returns ``P`` of shape (18, 3) and ``J`` of shape (40, 18, 3) where
    ``J[k]`` is the derivative of every joint position with respect to
    parameter ``k``. A tilt of joint ``j`` rigidly rotates the subtree at
    ``j`` about its parent position, so each column is a cross product.
    """
    _check_params(skeleton, theta)
    R_root = euler_to_matrix(theta[:3])
    t = theta[3:6]
    angles = theta[6:].reshape(-1, 2)

    pidx = skeleton._parent_index
    P = np.zeros((NUM_JOINTS, 3))
    G = np.zeros((NUM_JOINTS, 3, 3))
    root = skeleton._order[0]
    P[root] = t
    G[root] = R_root

    # the angle row of each moving joint
    slot = np.full(NUM_JOINTS, -1)
    slot[skeleton._moving_index] = np.arange(NUM_JOINTS - 1)
    axes = np.zeros((NUM_JOINTS - 1, 2, 3)) if with_jacobian else None

    for i in skeleton._order[1:]:
        p = pidx[i]
        a, b = angles[slot[i]]
        Ra = axis_angle_matrix(skeleton._u1[i], a)
        Rb = axis_angle_matrix(skeleton._u2[i], b)
        G[i] = G[p] @ Ra @ Rb
        P[i] = P[p] + skeleton._lengths[i] * (G[i] @ skeleton._dirs[i])
        if with_jacobian:
            axes[slot[i], 0] = G[p] @ skeleton._u1[i]
            axes[slot[i], 1] = G[p] @ (Ra @ skeleton._u2[i])

    if not with_jacobian:
        return P, G, None

    J = np.zeros((PoseParams.size, NUM_JOINTS, 3))
    _, pitch, yaw = theta[:3]
    Rz = rotation_z(yaw)
    root_axes = np.stack([(Rz @ rotation_y(pitch))[:, 0], Rz[:, 1], np.array([0.0, 0.0, 1.0])])
    J[:3] = np.cross(root_axes[:, None, :], (P - t)[None, :, :])
    J[3:6] = np.eye(3)[:, None, :]

    mi = skeleton._moving_index
    pivots = P[pidx[mi]]                                  # (17, 3)
    mask = skeleton._subtree[mi]                          # (17, 18)
    rel = P[None, :, :] - pivots[:, None, :]              # (17, 18, 3)
    for c in range(2):
        cols = np.cross(axes[:, c, None, :], rel) * mask[:, :, None]
        J[6 + c::2] = cols
    return P, G, J


def forward_kinematics(skeleton: Skeleton, params: PoseParams) -> Pose3D:
    """Joint positions for ``params``; the root sits at the root translation."""
    P, _, _ = _forward(skeleton, params.to_vector(), with_jacobian=False)
    return Pose3D(P)


def forward_kinematics_with_jacobian(skeleton: Skeleton, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    P, _, J = _forward(skeleton, np.asarray(theta, dtype=float), with_jacobian=True)
    return P, J


def auxiliary_points(skeleton: Skeleton, params: PoseParams) -> dict[str, np.ndarray]:
    """Positions of rigidly attached extra keypoints (the ears)."""
    P, G, _ = _forward(skeleton, params.to_vector(), with_jacobian=False)
    out = {}
    for name, (parent, offset) in skeleton.auxiliary.items():
        i = CHAIN_JOINTS.index(parent)
        out[name] = P[i] + G[i] @ np.asarray(offset, dtype=float)
    return out


def clamp_to_limits(skeleton: Skeleton, params: PoseParams) -> PoseParams:
    lim = skeleton.angle_limit
    return PoseParams(params.root_rotation, params.root_translation, np.clip(params.joint_angles, -lim, lim))


def angle_bounds(skeleton: Skeleton) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper bounds on the flat parameter vector (root unbounded)."""
    lo = np.full(PoseParams.size, -np.inf)
    hi = np.full(PoseParams.size, np.inf)
    lo[6:] = -skeleton.angle_limit
    hi[6:] = skeleton.angle_limit
    return lo, hi


_NECK = CHAIN_JOINTS.index("neck_base")
_SPINE = CHAIN_JOINTS.index("spine_mid")
_TAIL = CHAIN_JOINTS.index("tail_base")


def _normalize(P: np.ndarray, dP: np.ndarray | None = None):
    # Forward-mode: dP holds tangent directions of shape (T, 18, 3).
    o = P[_NECK]
    a = P[_SPINE] - o
    r = np.linalg.norm(a)
    if not r > 1e-6:
        raise DegeneratePoseError("neck_base and spine_mid coincide")
    e1 = a / r
    v = P[_TAIL] - o
    w = v - (v @ e1) * e1
    m = np.linalg.norm(w)
    fallback = m <= 1e-9 * max(r, np.linalg.norm(v), 1.0)
    if fallback:
        # tail_base on the neck-spine axis: fix roll with the least aligned world axis
        v = np.eye(3)[int(np.argmin(np.abs(e1)))]
        w = v - (v @ e1) * e1
        m = np.linalg.norm(w)
    e2 = w / m
    e3 = np.cross(e1, e2)
    Q = np.stack([e1, e2, e3])
    rel = P - o
    y = (rel @ Q.T) / r
    if dP is None:
        return y.ravel(), None

    do = dP[:, _NECK]
    da = dP[:, _SPINE] - do
    dr = da @ e1
    de1 = (da - dr[:, None] * e1) / r
    if fallback:
        dv = np.zeros_like(da)
    else:
        dv = dP[:, _TAIL] - do
    c = v @ e1
    dc = dv @ e1 + de1 @ v
    dw = dv - dc[:, None] * e1 - c * de1
    dm = dw @ e2
    de2 = (dw - dm[:, None] * e2) / m
    de3 = np.cross(de1, e2) + np.cross(e1, de2)
    dQ = np.stack([de1, de2, de3], axis=1)                 # (T, 3, 3)
    drel = dP - do[:, None, :]
    dy = (np.einsum("tic,kc->tki", dQ, rel) + drel @ Q.T) / r - y[None] * (dr / r)[:, None, None]
    return y.ravel(), dy.reshape(len(dP), -1)


def normalize_pose(pose: Pose3D | np.ndarray) -> np.ndarray:
    """Canonical 54-vector of a pose.

    The neck base goes to the origin, the neck-to-mid-spine vector becomes
    the unit +x axis, and the roll about that axis puts ``tail_base`` in the
    x-y half-plane with y >= 0.
    """
    P = pose.positions if isinstance(pose, Pose3D) else np.asarray(pose, dtype=float)
    if P.shape != (NUM_JOINTS, 3):
        raise ShapeError(f"pose must have shape ({NUM_JOINTS}, 3)")
    y, _ = _normalize(P)
    return y


def normalize_pose_with_jacobian(P: np.ndarray, dP: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized vector and its derivatives along each tangent in ``dP``."""
    return _normalize(np.asarray(P, float), np.asarray(dP, float))


def _solve_tilt(skeleton: Skeleton, i: int, d_local: np.ndarray) -> tuple[float, float]:
    # Ra(u1) Rb(u2) n = sin(b) u1 + cos(b) cos(a) n - cos(b) sin(a) u2
    n, u1, u2 = skeleton._dirs[i], skeleton._u1[i], skeleton._u2[i]
    b = float(np.arcsin(np.clip(d_local @ u1, -1.0, 1.0)))
    a = float(np.arctan2(-(d_local @ u2), d_local @ n))
    return a, b


def inverse_kinematics(skeleton: Skeleton, positions: np.ndarray, clamp: bool = True) -> PoseParams:
    """Angles reproducing the bone directions of ``positions``.

    The root rotation is the least-squares rigid fit of the neutral pose's
    root neighbourhood (root, its children and the neck) onto ``positions``.
    Bone lengths are taken from the skeleton, so only directions are matched.
    The root rotation and the tilts of its children are redundant; the fit
    can assign a child a tilt beyond the limit, which ``clamp`` then cuts,
    so exact reproduction is only guaranteed with ``clamp=False``.
    """
    P = np.asarray(positions, dtype=float)
    if P.shape != (NUM_JOINTS, 3):
        raise ShapeError(f"positions must have shape ({NUM_JOINTS}, 3)")
    root = skeleton._order[0]
    core = [root, _NECK] + [i for i in range(NUM_JOINTS) if skeleton._parent_index[i] == root]
    N = skeleton.neutral_pose()
    A = N[core] - N[core].mean(0)
    B = P[core] - P[core].mean(0)
    U, _, Vt = np.linalg.svd(A.T @ B)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R_root = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T

    G = np.zeros((NUM_JOINTS, 3, 3))
    G[root] = R_root
    slot = np.full(NUM_JOINTS, -1)
    slot[skeleton._moving_index] = np.arange(NUM_JOINTS - 1)
    angles = np.zeros((NUM_JOINTS - 1, 2))
    lim = skeleton.angle_limit
    for i in skeleton._order[1:]:
        p = skeleton._parent_index[i]
        d_world = P[i] - P[p]
        norm = np.linalg.norm(d_world)
        if norm < 1e-12:
            a = b = 0.0
        else:
            a, b = _solve_tilt(skeleton, i, G[p].T @ (d_world / norm))
        if clamp:
            a, b = float(np.clip(a, -lim, lim)), float(np.clip(b, -lim, lim))
        angles[slot[i]] = a, b
        G[i] = G[p] @ axis_angle_matrix(skeleton._u1[i], a) @ axis_angle_matrix(skeleton._u2[i], b)
    return PoseParams(matrix_to_euler(R_root), P[root].copy(), angles)
