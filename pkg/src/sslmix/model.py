"""Parameter containers, multivariate normal densities, and mixture sampling.

The model is a g-class multivariate normal mixture: an observation arises
from class i (prior weight ``weights[i]``) as N(``means[i]``, ``covariances[i]``).
All density work is done in log space; the mixture log-density uses the
log-sum-exp pattern so that large class separations do not underflow.

Class labels are integer indices 1..g throughout the package. A partially
classified sample stores a boolean missing flag per observation; the label
entry is 0 exactly where the flag is set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_triangular

from .errors import ContractError, DimensionError
from .rng import as_generator

_LOG_2PI = float(np.log(2.0 * np.pi))


def _cholesky_or_raise(sigma: NDArray, what: str) -> NDArray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ContractError(f"{what} is not symmetric positive definite") from exc


@dataclass(frozen=True)
class MixtureParams:
    """Full parameter vector of a g-class normal mixture.

    Parameters
    ----------
    weights : ndarray, shape (g,)
        Strictly positive class priors summing to 1 (within 1e-12).
    means : ndarray, shape (g, p)
        Class mean vectors.
    covariances : ndarray, shape (g, p, p)
        Symmetric positive-definite class covariance matrices. A Cholesky
        factor per class is computed once at construction and cached; SPD is
        enforced here, never per density call.
    """

    weights: NDArray
    means: NDArray
    covariances: NDArray
    _chols: NDArray = field(init=False, repr=False, compare=False)
    _log_dets: NDArray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        means = np.asarray(self.means, dtype=float)
        covs = np.asarray(self.covariances, dtype=float)
        if weights.ndim != 1 or weights.size < 2:
            raise ContractError("weights must be a vector of length g >= 2")
        g = weights.size
        if means.ndim != 2 or means.shape[0] != g:
            raise DimensionError("means must have shape (g, p)")
        p = means.shape[1]
        if p < 1:
            raise DimensionError("feature dimension must be >= 1")
        if covs.shape != (g, p, p):
            raise DimensionError("covariances must have shape (g, p, p)")
        if np.any(weights <= 0.0):
            raise ContractError("weights must be strictly positive")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ContractError("weights must sum to 1 within 1e-12")
        chols = np.empty_like(covs)
        for i in range(g):
            if not np.allclose(covs[i], covs[i].T, rtol=0.0, atol=1e-10):
                raise ContractError(f"covariance {i + 1} is not symmetric")
            chols[i] = _cholesky_or_raise(covs[i], f"covariance {i + 1}")
        log_dets = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
        for arr in (weights, means, covs, chols, log_dets):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "_chols", chols)
        object.__setattr__(self, "_log_dets", log_dets)

    @property
    def g(self) -> int:
        """Number of mixture classes."""
        return self.weights.size

    @property
    def p(self) -> int:
        """Feature dimension."""
        return self.means.shape[1]

    @property
    def cholesky_factors(self) -> NDArray:
        """Cached lower Cholesky factors of the class covariances, shape (g, p, p)."""
        return self._chols

    def permuted(self, order: ArrayLike) -> "MixtureParams":
        """Return a copy with components reordered; ``order`` is 0-based."""
        idx = np.asarray(order, dtype=int)
        return MixtureParams(self.weights[idx], self.means[idx], self.covariances[idx])


@dataclass(frozen=True)
class PartialSample:
    """Observations with possibly missing class labels.

    ``labels[j]`` is the class index in 1..g when ``missing_flags[j]`` is
    False and 0 when it is True.
    """

    features: NDArray
    labels: NDArray
    missing_flags: NDArray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        flags = np.asarray(self.missing_flags, dtype=bool)
        if features.ndim != 2:
            raise DimensionError("features must be an n x p matrix")
        n = features.shape[0]
        if labels.shape != (n,) or flags.shape != (n,):
            raise DimensionError("labels and missing_flags must have length n")
        if np.any(labels[~flags] < 1):
            raise ContractError("present labels must lie in 1..g")
        if np.any(labels[flags] != 0):
            raise ContractError("missing observations must carry label 0")
        for arr in (features, labels, flags):
            arr.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "missing_flags", flags)

    @classmethod
    def fully_labeled(cls, features: ArrayLike, labels: ArrayLike) -> "PartialSample":
        labels = np.asarray(labels, dtype=int)
        return cls(np.asarray(features, dtype=float), labels, np.zeros(labels.shape, dtype=bool))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_labeled(self) -> int:
        return int((~self.missing_flags).sum())

    @property
    def all_labeled(self) -> bool:
        return not bool(self.missing_flags.any())

    def labeled_subset(self) -> "PartialSample":
        """The fully labeled restriction of this sample."""
        keep = ~self.missing_flags
        return PartialSample(self.features[keep], self.labels[keep], np.zeros(int(keep.sum()), dtype=bool))


@dataclass(frozen=True)
class CanonicalTwoClass:
    """Two-class homoscedastic model in canonical form.

    Represents means mu1 = -mu2 = (delta/2, 0, ..., 0) with identity
    covariance; ``delta`` is the Mahalanobis distance between the classes.
    """

    delta: float
    p: int = 1
    pi1: float = 0.5

    def __post_init__(self):
        if self.delta < 0:
            raise ContractError("delta must be >= 0")
        if self.p < 1:
            raise ContractError("p must be >= 1")
        if not 0.0 < self.pi1 < 1.0:
            raise ContractError("pi1 must lie in (0, 1)")

    @property
    def log_prior_ratio(self) -> float:
        """log(pi1 / pi2)."""
        return float(np.log(self.pi1 / (1.0 - self.pi1)))

    def to_mixture(self) -> MixtureParams:
        """Materialize the canonical MixtureParams."""
        mu = np.zeros((2, self.p))
        mu[0, 0] = self.delta / 2.0
        mu[1, 0] = -self.delta / 2.0
        covs = np.broadcast_to(np.eye(self.p), (2, self.p, self.p)).copy()
        return MixtureParams(np.array([self.pi1, 1.0 - self.pi1]), mu, covs)


def as_canonical(theta: MixtureParams, atol: float = 1e-10) -> Optional[CanonicalTwoClass]:
    """Recognize a MixtureParams in canonical two-class form, else None."""
    if theta.g != 2:
        return None
    eye = np.eye(theta.p)
    if not (np.allclose(theta.covariances[0], eye, atol=atol)
            and np.allclose(theta.covariances[1], eye, atol=atol)):
        return None
    if not np.allclose(theta.means[0], -theta.means[1], atol=atol):
        return None
    if theta.p > 1 and not np.allclose(theta.means[:, 1:], 0.0, atol=atol):
        return None
    if theta.means[0, 0] < 0:
        return None
    return CanonicalTwoClass(delta=float(2.0 * theta.means[0, 0]), p=theta.p, pi1=float(theta.weights[0]))


def _as_points(theta: MixtureParams, y: ArrayLike) -> tuple[NDArray, bool]:
    """Coerce y to an (n, p) array; report whether the input was a single point."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != theta.p:
            raise DimensionError(f"expected a length-{theta.p} vector, got length {arr.shape[0]}")
        return arr[None, :], True
    if arr.ndim == 2:
        if arr.shape[1] != theta.p:
            raise DimensionError(f"expected n x {theta.p} points, got n x {arr.shape[1]}")
        return arr, False
    raise DimensionError("y must be a vector or an n x p matrix")


def log_component_density_matrix(theta: MixtureParams, points: NDArray) -> NDArray:
    """Log N(y; mu_i, Sigma_i) for every point and class, shape (n, g).

    Uses the cached Cholesky factors: the quadratic form is computed from a
    triangular solve, never from an explicit inverse.
    """
    n = points.shape[0]
    out = np.empty((n, theta.g))
    for i in range(theta.g):
        diff = points - theta.means[i]
        z = solve_triangular(theta._chols[i], diff.T, lower=True)
        maha = np.einsum("ij,ij->j", z, z)
        out[:, i] = -0.5 * (theta.p * _LOG_2PI + theta._log_dets[i] + maha)
    return out


def log_component_density(theta: MixtureParams, class_index: int, y: ArrayLike):
    """Log density of class ``class_index`` (1-based) at y.

    Accepts a single length-p vector or an n x p batch.
    """
    if not 1 <= class_index <= theta.g:
        raise ContractError(f"class_index must lie in 1..{theta.g}")
    points, single = _as_points(theta, y)
    vals = log_component_density_matrix(theta, points)[:, class_index - 1]
    return float(vals[0]) if single else vals


def log_mixture_density(theta: MixtureParams, y: ArrayLike):
    """Log of sum_i pi_i N(y; mu_i, Sigma_i), via log-sum-exp."""
    points, single = _as_points(theta, y)
    logs = log_component_density_matrix(theta, points) + np.log(theta.weights)
    m = logs.max(axis=1)
    vals = m + np.log(np.exp(logs - m[:, None]).sum(axis=1))
    return float(vals[0]) if single else vals


def mixture_density(theta: MixtureParams, y: ArrayLike):
    """Mixture density; the log-space result is exponentiated on return."""
    return np.exp(log_mixture_density(theta, y))


def sample_mixture(theta: MixtureParams, n: int, seed) -> PartialSample:
    """Draw a fully labeled sample of size n from the mixture.

    Labels are drawn categorically from the weights and features from the
    labeled component. Deterministic for a fixed integer seed; a
    numpy Generator may be passed instead for explicit stream control.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    rng = as_generator(seed)
    labels = rng.choice(theta.g, size=n, p=theta.weights) + 1
    z = rng.standard_normal((n, theta.p))
    chols = theta._chols[labels - 1]
    features = theta.means[labels - 1] + np.einsum("nij,nj->ni", chols, z)
    return PartialSample.fully_labeled(features, labels)
