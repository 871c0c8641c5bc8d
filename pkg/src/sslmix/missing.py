"""The missing-label probability model and its expected missingness.

A label goes missing with probability logistic(xi0 + xi1 * c(y)), where the
covariate c is either the log Shannon entropy of the posterior at y
(EntropyForm, any number of classes) or the squared linear discriminant
(DiscriminantForm, two-class homoscedastic models only). Both parametrizations
encode "points in the class-overlap region lose their labels more often";
the form tag keeps them from ever being mixed silently.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate
from scipy.special import expit

from .classify import posterior_matrix, shannon_entropy
from .errors import ContractError, DimensionError, QuadratureError, UnsupportedError
from .model import (
    CanonicalTwoClass,
    MixtureParams,
    PartialSample,
    _as_points,
    as_canonical,
    sample_mixture,
)
from .rng import as_generator

# Floor for log-entropy: keeps Bernoulli log-likelihoods finite when the
# posterior saturates and the computed entropy underflows to 0.
_LOG_ENTROPY_FLOOR = -700.0

_LOG_LOG_2 = float(np.log(np.log(2.0)))


class Form(enum.Enum):
    """Which covariate drives the missing-label probability."""

    ENTROPY = "entropy"
    DISCRIMINANT = "discriminant"


@dataclass(frozen=True)
class MissingnessParams:
    """Intercept, slope, and parametrization of the missingness logistic model."""

    xi0: float
    xi1: float
    form: Form = Form.ENTROPY

    def __post_init__(self):
        if not (np.isfinite(self.xi0) and np.isfinite(self.xi1)):
            raise ContractError("xi0 and xi1 must be finite")
        if not isinstance(self.form, Form):
            raise ContractError("form must be a Form enum member")


@dataclass(frozen=True)
class DiscriminantCoeffs:
    """Coefficients (beta0, beta1) of the linear discriminant d(y) = beta0 + beta1' y."""

    beta0: float
    beta1: NDArray

    def __post_init__(self):
        beta1 = np.asarray(self.beta1, dtype=float)
        if beta1.ndim != 1:
            raise ContractError("beta1 must be a vector")
        if not (np.isfinite(self.beta0) and np.all(np.isfinite(beta1))):
            raise ContractError("discriminant coefficients must be finite")
        beta1.setflags(write=False)
        object.__setattr__(self, "beta1", beta1)


def beta_from_theta(theta: MixtureParams, atol: float = 1e-8) -> DiscriminantCoeffs:
    """Discriminant coefficients of a two-class homoscedastic mixture.

    beta0 = log(w1/w2) - (mu1+mu2)' Sigma^{-1} (mu1-mu2) / 2 and
    beta1 = Sigma^{-1} (mu1-mu2), with Sigma the (common) covariance.
    """
    if theta.g != 2:
        raise UnsupportedError("discriminant coefficients require exactly two classes")
    if not np.allclose(theta.covariances[0], theta.covariances[1], rtol=0.0, atol=atol):
        raise UnsupportedError("discriminant coefficients require equal covariances")
    sigma = 0.5 * (theta.covariances[0] + theta.covariances[1])
    dmu = theta.means[0] - theta.means[1]
    smu = theta.means[0] + theta.means[1]
    beta1 = np.linalg.solve(sigma, dmu)
    beta0 = float(np.log(theta.weights[0] / theta.weights[1]) - 0.5 * smu @ beta1)
    return DiscriminantCoeffs(beta0=beta0, beta1=beta1)


def discriminant(beta: DiscriminantCoeffs, y: ArrayLike):
    """Affine evaluation beta0 + beta1' y for a point or an n x p batch."""
    arr = np.asarray(y, dtype=float)
    p = beta.beta1.shape[0]
    if arr.ndim == 1:
        if arr.shape[0] != p:
            raise DimensionError(f"expected a length-{p} vector")
        return float(beta.beta0 + beta.beta1 @ arr)
    if arr.ndim == 2 and arr.shape[1] == p:
        return beta.beta0 + arr @ beta.beta1
    raise DimensionError(f"expected n x {p} points")


def log_entropy(theta: MixtureParams, y: ArrayLike):
    """log of the posterior Shannon entropy, floored at -700 for saturated points."""
    points, single = _as_points(theta, y)
    en = shannon_entropy(posterior_matrix(theta, points))
    vals = np.where(en > 0.0, np.log(np.maximum(en, 1e-304)), _LOG_ENTROPY_FLOOR)
    vals = np.maximum(vals, _LOG_ENTROPY_FLOOR)
    return float(vals[0]) if single else vals


def _covariate(theta: MixtureParams, xi: MissingnessParams, points: NDArray) -> NDArray:
    if xi.form is Form.ENTROPY:
        en = shannon_entropy(posterior_matrix(theta, points))
        logs = np.where(en > 0.0, np.log(np.maximum(en, 1e-304)), _LOG_ENTROPY_FLOOR)
        return np.maximum(logs, _LOG_ENTROPY_FLOOR)
    beta = beta_from_theta(theta)
    d = discriminant(beta, points)
    return np.square(np.atleast_1d(d))


def missing_prob(theta: MixtureParams, xi: MissingnessParams, y: ArrayLike):
    """Probability that the label of y goes missing.

    logistic(xi0 + xi1 * c(y)) with c the form's covariate. A point with
    exactly zero entropy (perfectly certain posterior) has covariate -inf
    under the entropy form; the logistic limit is returned there instead of
    an error: 0 when xi1 > 0, 1 when xi1 < 0.
    """
    points, single = _as_points(theta, y)
    if xi.xi1 == 0.0:
        q = np.full(points.shape[0], float(expit(xi.xi0)))
    else:
        q = expit(xi.xi0 + xi.xi1 * _covariate(theta, xi, points))
        if xi.form is Form.ENTROPY:
            en = shannon_entropy(posterior_matrix(theta, points))
            q = np.where(en == 0.0, 0.0 if xi.xi1 > 0 else 1.0, q)
    return float(q[0]) if single else q


def taylor_log_entropy(d: ArrayLike):
    """Quadratic expansion of the negative log entropy near the boundary.

    For a two-class equal-prior model the entropy at discriminant value d is
    log 2 - d^2/8 + O(d^4), so -log en = -log(log 2) + d^2/(8 log 2) + O(d^4).
    Exact at d = 0; the error grows as the fourth power of d.
    """
    dd = np.square(np.asarray(d, dtype=float))
    val = -_LOG_LOG_2 + dd / (8.0 * np.log(2.0))
    return float(val) if np.ndim(d) == 0 else val


def simulate_missing_flags(
    theta: MixtureParams,
    xi: MissingnessParams,
    sample: PartialSample,
    seed,
) -> tuple[PartialSample, NDArray]:
    """Hide labels of a fully labeled sample according to the mechanism.

    Each flag is Bernoulli(missing_prob(y_j)); the missingness depends on the
    features only, never on the label itself. Returns the visible partial
    sample and a ground-truth label array kept separately for evaluation.
    """
    if not sample.all_labeled:
        raise ContractError("simulate_missing_flags expects a fully labeled sample")
    rng = as_generator(seed)
    q = np.atleast_1d(missing_prob(theta, xi, sample.features))
    flags = rng.random(sample.n) < q
    visible = np.where(flags, 0, sample.labels)
    return PartialSample(sample.features, visible, flags), sample.labels.copy()


@dataclass(frozen=True)
class GammaEstimate:
    """Expected missing-label proportion, with its Monte Carlo standard error."""

    value: float
    standard_error: float
    method: str


def _gamma_quadrature(canon: CanonicalTwoClass, xi: MissingnessParams, tol: float) -> float:
    """1-D quadrature of E[q(Y)] for the canonical model.

    In canonical form both covariates depend on y through its first
    coordinate only, so the expectation reduces to an integral against the
    scalar two-component mixture density. The domain is truncated at
    +-(delta/2 + 10); the tail mass beyond is below 1e-20.
    """
    delta, lam = canon.delta, canon.log_prior_ratio
    pi1 = canon.pi1

    def f1(t):
        a = np.exp(-0.5 * (t - delta / 2.0) ** 2)
        b = np.exp(-0.5 * (t + delta / 2.0) ** 2)
        return (pi1 * a + (1.0 - pi1) * b) / np.sqrt(2.0 * np.pi)

    if xi.xi1 == 0.0:
        q_of = lambda t: float(expit(xi.xi0))  # noqa: E731 - trivial constant mechanism
    elif xi.form is Form.DISCRIMINANT:
        def q_of(t):
            return expit(xi.xi0 + xi.xi1 * (lam + delta * t) ** 2)
    else:
        def q_of(t):
            tau1 = expit(lam + delta * t)
            en = shannon_entropy(np.array([tau1, 1.0 - tau1]))
            c = np.log(en) if en > 0 else _LOG_ENTROPY_FLOOR
            return expit(xi.xi0 + xi.xi1 * max(c, _LOG_ENTROPY_FLOOR))

    hi = delta / 2.0 + 10.0
    val, abserr, info, *rest = integrate.quad(
        lambda t: q_of(t) * f1(t), -hi, hi, epsabs=tol, limit=200, full_output=1
    )
    if rest:
        raise QuadratureError(f"gamma quadrature did not converge: {rest[0]}")
    return float(val)


def gamma_expected(
    theta: MixtureParams | CanonicalTwoClass,
    xi: MissingnessParams,
    method: str = "auto",
    *,
    n_draws: int = 100_000,
    seed: int = 0,
    tol: float = 1e-10,
) -> GammaEstimate:
    """Expected proportion of missing labels, E[q(Y)] over the mixture.

    ``method`` is "quadrature" (canonical two-class models only),
    "monte-carlo" (any model; at least 1e5 draws, standard error reported),
    or "auto" (quadrature when the model is canonical).
    """
    canon = theta if isinstance(theta, CanonicalTwoClass) else as_canonical(theta)
    if method == "auto":
        method = "quadrature" if canon is not None else "monte-carlo"
    if method == "quadrature":
        if canon is None:
            raise UnsupportedError("quadrature gamma requires a canonical two-class model")
        return GammaEstimate(_gamma_quadrature(canon, xi, tol), 0.0, "quadrature")
    if method != "monte-carlo":
        raise ContractError("method must be 'quadrature', 'monte-carlo', or 'auto'")
    mix = canon.to_mixture() if isinstance(theta, CanonicalTwoClass) else theta
    n_draws = max(int(n_draws), 100_000)
    draws = sample_mixture(mix, n_draws, as_generator(seed))
    q = np.atleast_1d(missing_prob(mix, xi, draws.features))
    return GammaEstimate(float(q.mean()), float(q.std() / np.sqrt(n_draws)), "monte-carlo")
