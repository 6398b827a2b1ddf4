"""Single-view 3D lift by constrained kinematic optimization.

The objective for one frame is::

    E = sum_i c_i |proj(X_i) - x_i|^2 / (n s^2)  +  lam * (-log p(normalize(X)))

where the sum runs over the ``n`` chain joints whose confidence ``c_i``
passes the visibility threshold, ``s`` is the frame's object scale and ``p``
is the pose prior. Poses live in the camera frame: only the camera's
intrinsics are used and the root depth is pinned to the configured distance.

Minimization is a projected, damped Gauss-Newton descent. Every iterate is
clamped onto the joint limits, each step is accepted only under an Armijo
backtracking test, and parameters pressed against a limit by the gradient are
frozen for that step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import DEFAULT_VISIBILITY, CameraModel, project_with_jacobian
from .errors import BehindCameraError, DataError, UnderdeterminedError
from .keypoints import KeypointFrame
from .prior import GaussianMixture, log_likelihood
from .skeleton import (
    CHAIN_JOINTS,
    NUM_JOINTS,
    PoseParams,
    Skeleton,
    angle_bounds,
    forward_kinematics,
    forward_kinematics_with_jacobian,
    inverse_kinematics,
    normalize_pose,
    normalize_pose_with_jacobian,
)

MIN_OBSERVED = 4
_DEPTH = 5
_ARMIJO = 1e-4


@dataclass(frozen=True)
class FitConfig:
    prior_weight: float = 1.0
    camera_distance: float = 400.0
    max_iterations: int = 300
    step_tol: float = 1e-6
    objective_tol: float = 1e-9
    restarts: int = 4
    seed: int = 0
    visibility_threshold: float = DEFAULT_VISIBILITY
    jitter_deg: float = 10.0

    def __post_init__(self) -> None:
        if self.prior_weight < 0:
            raise DataError("prior weight must be non-negative")
        if not self.camera_distance > 0:
            raise DataError("camera distance must be positive")
        if self.max_iterations < 1 or self.restarts < 1:
            raise DataError("iterations and restarts must be at least 1")


@dataclass(frozen=True)
class FitResult:
    params: PoseParams
    objective: float
    reprojection_rms: float
    prior_log_likelihood: float | None
    iterations: int
    converged: bool
    restart_objectives: tuple[float, ...] = field(default=())


class _Problem:
    """Objective, gradient and Gauss-Newton curvature for one frame."""

    def __init__(self, skeleton: Skeleton, camera: CameraModel, frame: KeypointFrame,
                 gmm: GaussianMixture | None, config: FitConfig, min_observed: int = 1):
        self.skeleton = skeleton
        self.camera = camera.intrinsic_only()
        self.gmm = gmm
        self.lam = float(config.prior_weight)
        if self.lam > 0 and gmm is None:
            raise DataError("a prior is required when the prior weight is positive")
        obs, conf = frame.chain()
        self.included = np.all(np.isfinite(obs), axis=1) & (conf >= config.visibility_threshold)
        self.count = int(self.included.sum())
        if self.count < min_observed:
            raise UnderdeterminedError(
                f"frame {frame.frame_index}: {self.count} usable joints, need at least {min_observed}")
        self.obs = obs[self.included]
        self.conf = conf[self.included]
        s = frame.scale()
        if not s > 0:
            raise DataError(f"frame {frame.frame_index}: keypoint bounding box has zero area")
        self.norm = 1.0 / (self.count * s * s)

    def residuals(self, P: np.ndarray) -> np.ndarray:
        uv, _ = project_with_jacobian(self.camera, P[self.included])
        return uv - self.obs

    def evaluate(self, theta: np.ndarray, derivatives: bool = True):
        if derivatives:
            P, dP = forward_kinematics_with_jacobian(self.skeleton, theta)
        else:
            P = forward_kinematics(self.skeleton, PoseParams.from_vector(theta)).positions
        try:
            uv, Jp = project_with_jacobian(self.camera, P[self.included])
        except BehindCameraError:
            return np.inf, None, None
        r = uv - self.obs
        E = self.norm * float(np.sum(self.conf * np.sum(r * r, axis=1)))
        if not derivatives and self.lam == 0:
            return E, None, None

        if derivatives:
            A = np.einsum("iab,kib->kia", Jp, dP[:, self.included])      # d residual / d theta
            cr = self.conf[:, None] * r
            g = 2.0 * self.norm * np.einsum("ia,kia->k", cr, A)
            H = 2.0 * self.norm * np.einsum("i,kia,lia->kl", self.conf, A, A)
        if not derivatives:
            return E - self.lam * log_likelihood(self.gmm, normalize_pose(P)), None, None
        if self.lam > 0:
            y, dy = normalize_pose_with_jacobian(P, dP)
            ll, gy, Cy = self.gmm.score(y)
            E -= self.lam * ll
            g -= self.lam * (dy @ gy)
            H += self.lam * (dy @ Cy @ dy.T)
        return E, g, H


def _clamp(theta: np.ndarray, lo: np.ndarray, hi: np.ndarray, depth: float) -> np.ndarray:
    out = np.clip(theta, lo, hi)
    out[_DEPTH] = depth
    return out


def objective(skeleton: Skeleton, camera: CameraModel, frame: KeypointFrame,
              gmm: GaussianMixture | None, config: FitConfig, params: PoseParams) -> float:
    """Objective value at ``params`` after clamping the joint angles.

    The root translation is used as given; the optimizer is what pins its
    depth to the camera distance.
    """
    lo, hi = angle_bounds(skeleton)
    theta = np.clip(params.to_vector(), lo, hi)
    return _Problem(skeleton, camera, frame, gmm, config).evaluate(theta, derivatives=False)[0]


def objective_gradient(skeleton: Skeleton, camera: CameraModel, frame: KeypointFrame,
                       gmm: GaussianMixture | None, config: FitConfig, params: PoseParams) -> np.ndarray:
    """Analytic gradient with respect to the flat parameter vector."""
    return _Problem(skeleton, camera, frame, gmm, config).evaluate(params.to_vector())[1]


def check_gradient(skeleton: Skeleton, camera: CameraModel, frame: KeypointFrame,
                   gmm: GaussianMixture | None, config: FitConfig, params: PoseParams,
                   step: float | None = None) -> float:
    """Largest relative gap between the analytic and central-difference gradients.

    The default step for coordinate ``k`` is ``eps**(1/3) * max(1, |theta_k|)``,
    which balances truncation against round-off in the difference quotient.
    Each coordinate's gap is divided by ``max(|analytic|, |numeric|)`` plus
    ``1e-6`` times the largest numeric component, so coordinates whose
    derivative is essentially zero do not dominate.
    """
    problem = _Problem(skeleton, camera, frame, gmm, config)
    theta = params.to_vector()
    _, g, _ = problem.evaluate(theta)
    fd = np.zeros_like(g)
    for k in range(len(theta)):
        h = step if step is not None else np.cbrt(np.finfo(float).eps) * max(1.0, abs(theta[k]))
        e = np.zeros_like(theta)
        e[k] = h
        fd[k] = (problem.evaluate(theta + e, False)[0] - problem.evaluate(theta - e, False)[0]) / (2 * h)
    denom = np.maximum(np.abs(g), np.abs(fd)) + 1e-6 * np.abs(fd).max() + 1e-300
    return float(np.max(np.abs(g - fd) / denom))


def _descend(problem: _Problem, theta0: np.ndarray, lo: np.ndarray, hi: np.ndarray,
             config: FitConfig, movable: np.ndarray | None = None) -> tuple[np.ndarray, float, int, bool]:
    depth = config.camera_distance
    theta = _clamp(theta0, lo, hi, depth)
    E, g, H = problem.evaluate(theta)
    if not np.isfinite(E):
        return theta, E, 0, False
    if movable is None:
        movable = np.ones(len(theta), bool)
    movable = movable.copy()
    movable[_DEPTH] = False
    mu = 1e-3
    it = 0
    for it in range(1, config.max_iterations + 1):
        pinned = ((theta <= lo) & (g > 0)) | ((theta >= hi) & (g < 0))
        free = movable & ~pinned
        Hf = H[np.ix_(free, free)]
        gf = g[free]
        accepted = None
        for _ in range(12):
            damp = mu * np.diag(Hf).copy() + 1e-12 * max(np.trace(Hf) / len(gf), 1e-300)
            try:
                d = np.linalg.solve(Hf + np.diag(damp), -gf)
            except np.linalg.LinAlgError:
                d = -gf
            t = 1.0
            for ls in range(30):
                cand = theta.copy()
                cand[free] += t * d
                cand = _clamp(cand, lo, hi, depth)
                Ec = problem.evaluate(cand, derivatives=False)[0]
                if Ec <= E + _ARMIJO * float(g @ (cand - theta)) and Ec <= E:
                    accepted = (cand, Ec, ls == 0)
                    break
                t *= 0.5
            if accepted is not None:
                break
            mu *= 10.0
        if accepted is None:
            return theta, E, it, True
        cand, Ec, full = accepted
        step = np.abs(cand - theta).max()
        drop = E - Ec
        theta = cand
        E, g, H = problem.evaluate(theta)
        if full:
            mu = max(mu / 10.0, 1e-10)
        if step < config.step_tol or drop < config.objective_tol * max(1.0, abs(E)):
            return theta, E, it, True
    return theta, E, it, False


def _initial_root(skeleton: Skeleton, camera: CameraModel, problem: _Problem, depth: float):
    """Yaw from the observed tail-to-head direction; translation from the root ray."""
    obs_all = np.full((NUM_JOINTS, 2), np.nan)
    obs_all[problem.included] = problem.obs
    N = skeleton.neutral_pose()
    tail = CHAIN_JOINTS.index("tail_base")
    yaw = 0.0
    for head_name in ("neck_base", "spine_mid", "nose"):
        h = CHAIN_JOINTS.index(head_name)
        if np.all(np.isfinite(obs_all[[tail, h]])):
            du = (obs_all[h, 0] - obs_all[tail, 0]) / camera.fx
            dv = (obs_all[h, 1] - obs_all[tail, 1]) / camera.fy
            yaw = np.arctan2(dv, du) - np.arctan2(N[h, 1] - N[tail, 1], N[h, 0] - N[tail, 0])
            break
    if np.all(np.isfinite(obs_all[tail])):
        trans = camera.backproject(obs_all[tail], depth)
    else:
        trans = camera.backproject(problem.obs.mean(0), depth)
    return np.array([0.0, 0.0, float(np.arctan2(np.sin(yaw), np.cos(yaw)))]), trans


def _starts(skeleton: Skeleton, camera: CameraModel, problem: _Problem,
            gmm: GaussianMixture | None, config: FitConfig) -> list[np.ndarray]:
    rot, trans = _initial_root(skeleton, camera, problem, config.camera_distance)
    base = PoseParams.neutral(trans, rot).to_vector()
    starts = [base]
    rng = np.random.default_rng(config.seed)
    lim = skeleton.angle_limit
    jitter = np.deg2rad(config.jitter_deg)
    if gmm is not None:
        ranked = sorted(range(gmm.n_components), key=lambda k: (-gmm.weights[k], k))
    for r in range(1, config.restarts):
        theta = base.copy()
        if gmm is not None:
            mean = gmm.means[ranked[(r - 1) % len(ranked)]].reshape(NUM_JOINTS, 3)
            theta[6:] = inverse_kinematics(skeleton, mean).joint_angles.ravel()
        theta[6:] = np.clip(theta[6:] + rng.uniform(-jitter, jitter, size=theta[6:].shape), -lim, lim)
        starts.append(theta)
    return starts


def fit_pose(skeleton: Skeleton, camera: CameraModel, frame: KeypointFrame,
             gmm: GaussianMixture | None, config: FitConfig = FitConfig()) -> FitResult:
    """Lift one frame of 2D keypoints to a 3D pose.

    Runs ``config.restarts`` descents (the first from the neutral pose, the
    rest from prior component means with seeded angle jitter) and keeps the
    lowest objective. Objectives within the objective tolerance of the best
    count as ties; among them the pose with the highest prior likelihood
    wins (or, without a prior, the one closest to neutral), which picks the
    plausible branch of a depth ambiguity when the data cannot.
    """
    problem = _Problem(skeleton, camera, frame, gmm, config, MIN_OBSERVED)
    lo, hi = angle_bounds(skeleton)
    root_only = np.zeros(PoseParams.size, bool)
    root_only[:6] = True
    runs = []
    for theta0 in _starts(skeleton, camera, problem, gmm, config):
        # align the root first so the joint angles do not absorb a heading error
        aligned, _, n0, _ = _descend(problem, theta0, lo, hi, config, root_only)
        theta, E, n1, conv = _descend(problem, aligned, lo, hi, config)
        runs.append((theta, E, n0 + n1, conv))
    objectives = tuple(float(E) for _, E, _, _ in runs)
    best_E = min(objectives)
    if not np.isfinite(best_E):
        raise BehindCameraError(f"frame {frame.frame_index}: no start keeps the pose in front of the camera")

    tol = config.objective_tol * max(1.0, abs(best_E))
    tied = [k for k, E in enumerate(objectives) if E <= best_E + tol]
    lls = {}
    if gmm is not None:
        for k in range(len(runs)):
            pose = forward_kinematics(skeleton, PoseParams.from_vector(runs[k][0]))
            lls[k] = log_likelihood(gmm, normalize_pose(pose))
        best = max(tied, key=lambda k: (lls[k], -k))
    else:
        best = min(tied, key=lambda k: (float(np.sum(runs[k][0][6:] ** 2)), k))
    theta, E, iters, conv = runs[best]
    r = problem.residuals(forward_kinematics(skeleton, PoseParams.from_vector(theta)).positions)
    rms = float(np.sqrt(np.mean(np.sum(r * r, axis=1))))
    return FitResult(PoseParams.from_vector(theta), float(E), rms, lls.get(best), iters, conv, objectives)
