import numpy as np
import pytest

from conftest import random_params
from mouselift.camera import CameraModel, project
from mouselift.errors import DataError, UnderdeterminedError
from mouselift.keypoints import KeypointFrame
from mouselift.metrics import registered_3d_error
from mouselift.optimizer import FitConfig, check_gradient, fit_pose, objective
from mouselift.pipeline.synth import SynthSpec, synth_generate
from mouselift.prior import GaussianMixture
from mouselift.skeleton import (
    CHAIN_JOINTS,
    CHAIN_TO_KEYPOINT,
    PoseParams,
    forward_kinematics,
    normalize_pose,
)

CAM = CameraModel(800.0, 800.0, 320.0, 240.0)


def exact_frame(skeleton, params, confidence=None, box=None):
    xy = np.full((20, 2), np.nan)
    xy[CHAIN_TO_KEYPOINT] = project(CAM, forward_kinematics(skeleton, params).positions)
    conf = np.zeros(20)
    conf[CHAIN_TO_KEYPOINT] = 1.0 if confidence is None else confidence
    return KeypointFrame(xy, conf, box=box)


def test_zero_objective_on_exact_projection(skeleton, rng):
    p = random_params(skeleton, rng)
    assert objective(skeleton, CAM, exact_frame(skeleton, p), None, FitConfig(prior_weight=0), p) == 0.0


def test_single_offset_joint_hand_value(skeleton, rng):
    p = random_params(skeleton, rng)
    conf = np.zeros(18)
    conf[0] = 1.0
    frame = exact_frame(skeleton, p, conf, box=(0.0, 0.0, 50.0, 50.0))
    xy = frame.positions.copy()
    xy[CHAIN_TO_KEYPOINT[0]] += [3.0, 4.0]
    frame = KeypointFrame(xy, frame.confidence, box=frame.box)
    E = objective(skeleton, CAM, frame, None, FitConfig(prior_weight=0), p)
    assert E == pytest.approx(25.0 / 2500.0, rel=1e-12)


def test_prior_prefers_component_mean(skeleton, rng):
    a = random_params(skeleton, rng)
    b_angles = a.joint_angles.copy()
    w = skeleton.moving_joints.index("left_wrist")
    b_angles[w] += [0.3, -0.2]
    b = PoseParams(a.root_rotation, a.root_translation, b_angles)
    ya = normalize_pose(forward_kinematics(skeleton, a))
    yb = normalize_pose(forward_kinematics(skeleton, b))
    sigma = np.linalg.norm(yb - ya) / 5.0
    gmm = GaussianMixture(np.ones(1), ya[None], np.full((1, len(ya)), sigma**2))
    conf = np.ones(18)
    conf[CHAIN_JOINTS.index("left_wrist")] = 0.0  # the only joint that differs is unobserved
    frame = exact_frame(skeleton, a, conf)
    cfg = FitConfig(prior_weight=1.0)
    Ea, Eb = objective(skeleton, CAM, frame, gmm, cfg, a), objective(skeleton, CAM, frame, gmm, cfg, b)
    assert Ea < Eb
    assert Eb - Ea == pytest.approx(12.5, rel=1e-9)


def _interior(skeleton, rng):
    p = random_params(skeleton, rng, fraction=0.7)
    obs = random_params(skeleton, rng, fraction=0.7)
    return p, exact_frame(skeleton, obs)


@pytest.mark.parametrize("lam", [0.0, 1.0])
def test_gradient_at_random_interior_points(skeleton, pose_prior, rng, lam):
    for _ in range(10):
        p, frame = _interior(skeleton, rng)
        gap = check_gradient(skeleton, CAM, frame, pose_prior, FitConfig(prior_weight=lam), p)
        assert gap < 1e-4


def test_gradient_at_neutral(skeleton, pose_prior, rng):
    frame = exact_frame(skeleton, random_params(skeleton, rng))
    p = PoseParams.neutral(translation=(0.0, 0.0, 400.0))
    for lam in (0.0, 1.0):
        assert check_gradient(skeleton, CAM, frame, pose_prior, FitConfig(prior_weight=lam), p) < 1e-4


def test_underdetermined(skeleton, rng):
    frame = exact_frame(skeleton, random_params(skeleton, rng), np.full(18, 0.1))
    with pytest.raises(UnderdeterminedError):
        fit_pose(skeleton, CAM, frame, None, FitConfig(prior_weight=0))


def test_prior_required_when_weighted(skeleton, rng):
    with pytest.raises(DataError):
        fit_pose(skeleton, CAM, exact_frame(skeleton, random_params(skeleton, rng)), None, FitConfig())


def test_config_validation():
    with pytest.raises(DataError):
        FitConfig(prior_weight=-1)
    with pytest.raises(DataError):
        FitConfig(camera_distance=0)
    with pytest.raises(DataError):
        FitConfig(max_iterations=0)


@pytest.fixture(scope="module")
def synthetic_frames(skeleton):
    return synth_generate(SynthSpec(seed=8, frames=6), skeleton)


def test_round_trip_lift(skeleton, synthetic_frames):
    cam = synthetic_frames.cameras[0]
    for truth, obs in zip(synthetic_frames.truth.frames, synthetic_frames.observed.frames):
        res = fit_pose(skeleton, cam, obs.keypoints, None, FitConfig(prior_weight=0))
        _, err = registered_3d_error(forward_kinematics(skeleton, res.params), truth.pose)
        assert err < 1.0
        assert res.reprojection_rms < 0.1
        assert res.params.root_translation[2] == 400.0
        assert np.all(np.abs(res.params.joint_angles) <= skeleton.angle_limit)


def test_fit_is_deterministic(skeleton, synthetic_frames, pose_prior):
    cam = synthetic_frames.cameras[0]
    frame = synthetic_frames.observed.frames[2].keypoints
    a = fit_pose(skeleton, cam, frame, pose_prior, FitConfig(seed=5))
    b = fit_pose(skeleton, cam, frame, pose_prior, FitConfig(seed=5))
    assert np.array_equal(a.params.to_vector(), b.params.to_vector())
    assert a.objective == b.objective
    assert len(a.restart_objectives) == 4
    assert a.objective == min(a.restart_objectives) or a.objective <= min(a.restart_objectives) * (1 + 1e-9)
