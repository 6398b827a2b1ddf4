import numpy as np
import pytest
from scipy import integrate

from mouselift.errors import FormatError, InsufficientDataError
from mouselift.pipeline.synth import SynthSpec, synth_generate
from mouselift.prior import GaussianMixture, fit_gmm, log_likelihood
from mouselift.skeleton import default_skeleton, normalize_pose


def single_gaussian(n=1000, d=3, seed=1):
    rng = np.random.default_rng(seed)
    return rng.normal(1.5, 2.0, (n, d))


def two_clusters(seed=1):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0, (300, 2))
    b = rng.normal(0.0, 1.0, (700, 2)) + [10.0, 0.0]
    return np.vstack([a, b]), a, b


def synthetic_poses():
    res = synth_generate(SynthSpec(seed=3, frames=120), default_skeleton())
    return np.array([normalize_pose(f.pose) for f in res.truth.frames])


FIXTURES = {
    "single": lambda: (single_gaussian(), 1, "diag"),
    "clusters": lambda: (two_clusters()[0], 2, "diag"),
    "clusters_full": lambda: (two_clusters()[0], 3, "full"),
    "poses": lambda: (synthetic_poses(), 5, "diag"),
}


def test_k1_matches_closed_form():
    X = single_gaussian()
    gmm = fit_gmm(X, 1)
    assert np.allclose(gmm.means[0], X.mean(0), atol=1e-9)
    assert np.allclose(gmm.covariances[0], X.var(0), rtol=1e-9)
    sigma, n = 2.0, len(X)
    assert np.all(np.abs(gmm.means[0] - 1.5) < 3 * sigma / np.sqrt(n))
    assert np.all(np.abs(gmm.covariances[0] / sigma**2 - 1.0) < 0.2)


def test_two_clusters_recovered():
    X, a, b = two_clusters()
    gmm = fit_gmm(X, 2, seed=4)
    order = np.argsort(gmm.means[:, 0])
    for k, truth in zip(order, (a, b)):
        assert np.linalg.norm(gmm.means[k] - truth.mean(0)) < 1.0
    assert abs(gmm.weights[order[0]] - 0.3) < 0.05
    assert abs(gmm.weights[order[1]] - 0.7) < 0.05


@pytest.mark.parametrize("kind", ["diag", "full"])
def test_duplicate_and_shuffle_invariance(kind):
    X, _, _ = two_clusters()
    ref = fit_gmm(X, 3, seed=2, covariance_type=kind)
    dup = fit_gmm(np.vstack([X, X]), 3, seed=2, covariance_type=kind)
    shuf = fit_gmm(np.random.default_rng(9).permutation(X), 3, seed=2, covariance_type=kind)
    for other in (dup, shuf):
        assert np.abs(ref.weights - other.weights).max() < 1e-9
        assert np.abs(ref.means - other.means).max() < 1e-9
        assert np.abs(ref.covariances - other.covariances).max() < 1e-9


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_em_monotone(name):
    X, K, kind = FIXTURES[name]()
    gmm = fit_gmm(X, K, seed=0, covariance_type=kind)
    h = np.array(gmm.history)
    assert len(h) >= 2
    assert np.all(np.diff(h) >= -1e-9 * np.abs(h[1:]))


def test_standard_normal_at_origin():
    D = 54
    gmm = GaussianMixture(np.ones(1), np.zeros((1, D)), np.ones((1, D)))
    # -(54/2) ln(2 pi) = -49.6227
    assert log_likelihood(gmm, np.zeros(D)) == pytest.approx(-(D / 2) * np.log(2 * np.pi), abs=1e-12)


def test_mixture_dominates_components():
    X, _, _ = two_clusters()
    gmm = fit_gmm(X, 3, seed=0)
    for k in range(3):
        peak = -0.5 * (gmm.dim * np.log(2 * np.pi) + np.log(gmm.covariances[k]).sum())
        assert log_likelihood(gmm, gmm.means[k]) >= np.log(gmm.weights[k]) + peak


def test_far_point_is_finite():
    gmm = GaussianMixture(np.array([0.5, 0.5]), np.array([[0.0, 0.0], [5.0, 5.0]]), np.ones((2, 2)))
    ll = log_likelihood(gmm, np.array([1e6, -1e6]))
    assert np.isfinite(ll) and ll < -1e11


def test_density_integrates_to_one():
    gmm = GaussianMixture(np.array([0.4, 0.6]), np.array([[-1.0], [2.0]]), np.array([[0.5], [1.5]]))
    total, _ = integrate.quad(lambda x: np.exp(log_likelihood(gmm, np.array([x]))), -20, 20)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_score_gradient_matches_finite_differences():
    X, _, _ = two_clusters()
    for kind in ("diag", "full"):
        gmm = fit_gmm(X, 3, seed=0, covariance_type=kind)
        x = np.array([4.0, 0.5])
        _, g, _ = gmm.score(x)
        h = 1e-6
        fd = [(log_likelihood(gmm, x + h * e) - log_likelihood(gmm, x - h * e)) / (2 * h) for e in np.eye(2)]
        assert np.allclose(g, fd, atol=1e-6)


def test_variance_floor_and_serialization():
    X = np.zeros((20, 3))
    X[:, 0] = np.arange(20)
    gmm = fit_gmm(X, 2)
    assert gmm.covariances.min() >= 1e-6
    again = GaussianMixture.from_dict(gmm.to_dict())
    for f in ("weights", "means", "covariances"):
        assert np.array_equal(getattr(again, f), getattr(gmm, f))
    doc = gmm.to_dict()
    doc["normalization"] = "other"
    with pytest.raises(FormatError):
        GaussianMixture.from_dict(doc)


def test_too_few_samples():
    with pytest.raises(InsufficientDataError):
        fit_gmm(np.zeros((2, 3)), 3)
