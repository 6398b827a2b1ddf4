"""Gaussian-mixture pose prior over normalized 3D poses.

Fitting is expectation-maximization from a seeded k-means++ initialization.
The seeding works on a canonical (lexicographically sorted) copy of the
samples and draws centers by inverse-CDF sampling, so the fit depends only on
the multiset of samples: shuffling or duplicating them gives the same
mixture.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import FormatError, InsufficientDataError, NonFiniteError, ShapeError

log = logging.getLogger(__name__)

PRIOR_FORMAT_VERSION = 1
NORMALIZATION_TAG = "neck-spine-unit"
VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of ``K`` Gaussians in ``D`` dimensions.

    ``covariances`` has shape ``(K, D)`` for diagonal components and
    ``(K, D, D)`` for full ones. ``history`` holds the total log-likelihood
    after initialization and after every EM iteration (empty when the mixture
    was loaded from a file).
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    covariance_type: str = "diag"
    history: tuple[float, ...] = field(default=(), compare=False)
    converged: bool = field(default=True, compare=False)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariances, dtype=float)
        K, D = mu.shape
        if w.shape != (K,):
            raise ShapeError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise FormatError("weights must be non-negative and sum to 1")
        if self.covariance_type == "diag":
            if cov.shape != (K, D):
                raise ShapeError("diagonal covariances must have shape (K, D)")
            if np.any(cov < VARIANCE_FLOOR * (1 - 1e-12)):
                raise FormatError("variances must be at least the variance floor")
        elif self.covariance_type == "full":
            if cov.shape != (K, D, D):
                raise ShapeError("full covariances must have shape (K, D, D)")
        else:
            raise FormatError(f"unknown covariance type {self.covariance_type!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        if self.covariance_type == "full":
            chol = np.linalg.cholesky(cov)
            object.__setattr__(self, "_prec_chol", np.linalg.inv(chol).transpose(0, 2, 1))
            object.__setattr__(self, "_log_det", 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(1))
        else:
            object.__setattr__(self, "_log_det", np.log(cov).sum(1))

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_prob(self, X: np.ndarray) -> np.ndarray:
        """``log w_k + log N(x; mu_k, Sigma_k)`` for every sample and component."""
        X = np.atleast_2d(X)
        diff = X[:, None, :] - self.means[None]
        if self.covariance_type == "diag":
            maha = np.sum(diff**2 / self.covariances[None], axis=2)
        else:
            z = np.einsum("nkd,kde->nke", diff, self._prec_chol)
            maha = np.sum(z**2, axis=2)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw[None] - 0.5 * (self.dim * np.log(2 * np.pi) + self._log_det[None] + maha)

    def score(self, x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Log-likelihood, its gradient and a positive semi-definite curvature.

        The curvature is the responsibility-weighted sum of component
        precisions, i.e. the Gauss-Newton approximation of the Hessian of the
        negative log-likelihood.
        """
        lp = self.component_log_prob(x)[0]
        ll = float(logsumexp(lp))
        resp = np.exp(lp - ll)
        diff = x[None] - self.means
        if self.covariance_type == "diag":
            prec = 1.0 / self.covariances
            grad = -np.sum(resp[:, None] * prec * diff, axis=0)
            curv = np.diag(resp @ prec)
        else:
            P = np.einsum("kde,kfe->kdf", self._prec_chol, self._prec_chol)
            grad = -np.einsum("k,kde,ke->d", resp, P, diff)
            curv = np.einsum("k,kde->de", resp, P)
        return ll, grad, curv

    def to_dict(self) -> dict:
        return {
            "format_version": PRIOR_FORMAT_VERSION,
            "kind": "prior",
            "normalization": NORMALIZATION_TAG,
            "K": self.n_components,
            "dim": self.dim,
            "covariance_type": self.covariance_type,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GaussianMixture":
        if doc.get("format_version") != PRIOR_FORMAT_VERSION:
            raise FormatError(f"unsupported prior format_version {doc.get('format_version')!r}")
        if doc.get("normalization") != NORMALIZATION_TAG:
            raise FormatError(f"prior normalization must be {NORMALIZATION_TAG!r}")
        try:
            gmm = cls(np.array(doc["weights"]), np.array(doc["means"]), np.array(doc["covariances"]),
                      doc.get("covariance_type", "diag"))
        except KeyError as exc:
            raise FormatError(f"prior file lacks {exc}") from exc
        if gmm.n_components != doc.get("K", gmm.n_components):
            raise FormatError("K does not match the number of components")
        return gmm


def load_prior(path: str | Path) -> GaussianMixture:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return GaussianMixture.from_dict(doc)


def log_likelihood(gmm: GaussianMixture, x: np.ndarray) -> float | np.ndarray:
    """``log sum_k w_k N(x; mu_k, Sigma_k)`` for one vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != gmm.dim or x.ndim > 2:
        raise ShapeError(f"expected vectors of dimension {gmm.dim}, got shape {x.shape}")
    ll = logsumexp(gmm.component_log_prob(x), axis=1)
    return float(ll[0]) if x.ndim == 1 else ll


def _kmeanspp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    # X is canonically ordered; every draw is an inverse-CDF lookup
    centers = [X[min(int(rng.random() * len(X)), len(X) - 1)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.random() * len(X)) % len(X)
        else:
            cdf = np.cumsum(d2) / total
            idx = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(X) - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def fit_gmm(samples: np.ndarray, K: int = 5, seed: int = 0, covariance_type: str = "diag",
            tol: float = 1e-8, max_iter: int = 500, variance_floor: float = VARIANCE_FLOOR) -> GaussianMixture:
    """Fit a ``K``-component mixture by EM.

    Stops when the per-sample log-likelihood gain drops below ``tol`` or
    after ``max_iter`` iterations. A component whose responsibilities vanish
    is re-seeded at the sample the current mixture explains worst.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2:
        raise ShapeError("samples must be a 2D array (n, dim)")
    n, D = X.shape
    if n < K:
        raise InsufficientDataError(f"need at least {K} samples, got {n}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("samples must be finite")

    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    rng = np.random.default_rng(seed)
    means = _kmeanspp(Xs, K, rng)
    base_var = np.maximum(Xs.var(axis=0), variance_floor)
    weights = np.full(K, 1.0 / K)
    if covariance_type == "diag":
        covs = np.tile(base_var, (K, 1))
    elif covariance_type == "full":
        covs = np.tile(np.diag(base_var), (K, 1, 1))
    else:
        raise FormatError(f"unknown covariance type {covariance_type!r}")

    gmm = GaussianMixture(weights, means, covs, covariance_type)
    lp = gmm.component_log_prob(Xs)
    per_sample = logsumexp(lp, axis=1)
    history = [float(per_sample.sum())]
    converged = False
    for _ in range(max_iter):
        resp = np.exp(lp - per_sample[:, None])
        Nk = resp.sum(0)
        for k in np.flatnonzero(Nk < 1e-10 * n):
            worst = int(np.argmin(per_sample))
            log.warning("EM component %d emptied; re-seeding at sample %d", k, worst)
            resp[:, k] = 0.0
            resp[worst] = 0.0
            resp[worst, k] = 1.0
            Nk = resp.sum(0)
        weights = Nk / n
        weights /= weights.sum()
        means = (resp.T @ Xs) / Nk[:, None]
        if covariance_type == "diag":
            covs = np.einsum("nk,nkd->kd", resp, (Xs[:, None, :] - means[None]) ** 2) / Nk[:, None]
            covs = np.maximum(covs, variance_floor)
        else:
            covs = np.empty((K, D, D))
            for k in range(K):
                diff = Xs - means[k]
                covs[k] = (resp[:, k, None] * diff).T @ diff / Nk[k] + variance_floor * np.eye(D)
        gmm = GaussianMixture(weights, means, covs, covariance_type)
        lp = gmm.component_log_prob(Xs)
        per_sample = logsumexp(lp, axis=1)
        history.append(float(per_sample.sum()))
        if history[-1] - history[-2] < tol * n:
            converged = True
            break
    if not converged:
        log.warning("EM stopped after %d iterations without converging", max_iter)
    return GaussianMixture(gmm.weights, gmm.means, gmm.covariances, covariance_type, tuple(history), converged)
