import numpy as np
import pytest

from mouselift.skeleton import PoseParams, default_skeleton


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(skeleton, rng, depth=400.0, fraction=0.8):
    """In-limit parameters with a generic root pose in front of the camera."""
    lim = skeleton.angle_limit * fraction
    return PoseParams(
        rng.uniform(-0.3, 0.3, 3) + np.array([0.0, 0.0, rng.uniform(-np.pi, np.pi)]),
        np.array([rng.uniform(-20, 20), rng.uniform(-20, 20), depth]),
        rng.uniform(-lim, lim, (len(skeleton.moving_joints), 2)),
    )


@pytest.fixture(scope="session")
def pose_prior(skeleton):
    from mouselift.pipeline.synth import SynthSpec, synth_generate
    from mouselift.prior import fit_gmm
    from mouselift.skeleton import normalize_pose

    res = synth_generate(SynthSpec(seed=21, frames=200), skeleton)
    return fit_gmm(np.array([normalize_pose(f.pose) for f in res.truth.frames]), 5, seed=0)
