"""Posterior probabilities, entropy, Bayes allocation, and error rates.

The posterior of class i at a point y is pi_i N(y; mu_i, Sigma_i) normalized
over classes. Allocation follows the Bayes rule: pick the class with the
largest posterior, ties broken to the smallest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import ndtr

from .errors import EmptyClassError, ContractError, UnsupportedError
from .model import (
    CanonicalTwoClass,
    MixtureParams,
    PartialSample,
    _as_points,
    log_component_density_matrix,
)


def posterior_matrix(theta: MixtureParams, points: NDArray) -> NDArray:
    """Posterior probabilities for a batch of points, shape (n, g).

    Computed from log densities with the log-sum-exp shift, so each row is
    normalized by construction.
    """
    logs = log_component_density_matrix(theta, points) + np.log(theta.weights)
    logs -= logs.max(axis=1, keepdims=True)
    tau = np.exp(logs)
    tau /= tau.sum(axis=1, keepdims=True)
    return tau


def posterior(theta: MixtureParams, y: ArrayLike) -> NDArray:
    """Posterior probability vector (length g), or an (n, g) matrix for a batch."""
    points, single = _as_points(theta, y)
    tau = posterior_matrix(theta, points)
    return tau[0] if single else tau


def shannon_entropy(tau: ArrayLike):
    """Shannon entropy -sum tau_i log tau_i with the 0 log 0 = 0 convention.

    Natural log; the result lies in [0, log g]. Accepts a probability vector
    or an (n, g) matrix (row-wise entropies).
    """
    arr = np.asarray(tau, dtype=float)
    safe = np.where(arr > 0.0, arr, 1.0)
    terms = -arr * np.log(safe)
    val = terms.sum(axis=-1)
    return float(val) if arr.ndim == 1 else val


def bayes_allocate(theta: MixtureParams, y: ArrayLike):
    """Class index (1-based) with maximal posterior; ties go to the smallest index.

    Accepts a single point or an n x p batch.
    """
    points, single = _as_points(theta, y)
    tau = posterior_matrix(theta, points)
    alloc = np.argmax(tau, axis=1) + 1
    return int(alloc[0]) if single else alloc


@dataclass(frozen=True)
class ErrorReport:
    """Holdout error summary: overall rate plus per-class correct-allocation rates."""

    overall_error: float
    class_rates: NDArray
    holdout_size: int

    def to_record(self) -> str:
        """Flat key-value text record."""
        lines = [
            f"overall_error: {self.overall_error!r}",
            f"holdout_size: {self.holdout_size}",
        ]
        for i, r in enumerate(self.class_rates, start=1):
            lines.append(f"class_{i}_correct_rate: {float(r)!r}")
        return "\n".join(lines) + "\n"


def empirical_error_rate(theta: MixtureParams, holdout: PartialSample,
                         weighting: str = "model") -> ErrorReport:
    """Plug-in error rate of the Bayes rule under ``theta`` on a labeled holdout.

    The per-class rate is the fraction of class-i holdout points allocated to
    class i. With ``weighting="model"`` (default) the overall error is
    1 - sum_i w_i * rate_i with the weights taken from ``theta``;
    ``weighting="holdout"`` uses the holdout class frequencies instead, which
    makes the overall value the plain misallocation fraction, bounded below
    by the optimal error in expectation (fitted weights carry an O(1/n)
    downward bias through their correlation with the per-class rates).
    """
    if weighting not in ("model", "holdout"):
        raise ContractError("weighting must be 'model' or 'holdout'")
    if not holdout.all_labeled:
        raise ContractError("holdout must be fully labeled")
    if holdout.labels.max(initial=0) > theta.g:
        raise ContractError("holdout labels exceed the model's class count")
    alloc = bayes_allocate(theta, holdout.features)
    rates = np.empty(theta.g)
    counts = np.empty(theta.g)
    for i in range(1, theta.g + 1):
        mask = holdout.labels == i
        if not mask.any():
            raise EmptyClassError(f"class {i} has no holdout observations")
        counts[i - 1] = mask.sum()
        rates[i - 1] = float((alloc[mask] == i).mean())
    w = theta.weights if weighting == "model" else counts / holdout.n
    overall = 1.0 - float(np.dot(w, rates))
    return ErrorReport(overall_error=overall, class_rates=rates, holdout_size=holdout.n)


def optimal_error_two_class(canon: CanonicalTwoClass) -> float:
    """Optimal error rate Phi(-delta/2) for the equal-prior canonical model.

    Only pi1 = 0.5 has this closed form; other priors must fall back to a
    Monte Carlo reference.
    """
    if abs(canon.pi1 - 0.5) > 0.0:
        raise UnsupportedError(
            "closed-form optimal error requires pi1 = 0.5; use a Monte Carlo reference"
        )
    return float(ndtr(-canon.delta / 2.0))


def linear_rule_error(rule: MixtureParams, truth: MixtureParams) -> float:
    """Exact error rate of a two-class linear rule under a Gaussian truth.

    ``rule`` must be two-class homoscedastic, so its Bayes allocation reduces
    to the sign of an affine discriminant; that statistic is Gaussian under
    each true class, making the conditional error rate available in closed
    form (true priors weight the per-class terms). This sidesteps holdout
    noise entirely, which matters when excess errors are O(1/n).
    """
    from .missing import beta_from_theta

    if truth.g != 2:
        raise UnsupportedError("the analytic error rate is defined for two-class models")
    beta = beta_from_theta(rule)
    norm = float(np.linalg.norm(beta.beta1))
    if norm < 1e-300:
        return 0.5
    correct = []
    for i, sign in ((0, 1.0), (1, -1.0)):
        m = beta.beta0 + beta.beta1 @ truth.means[i]
        s = float(np.sqrt(beta.beta1 @ truth.covariances[i] @ beta.beta1))
        correct.append(float(ndtr(sign * m / s)))
    return 1.0 - float(truth.weights[0]) * correct[0] - float(truth.weights[1]) * correct[1]
