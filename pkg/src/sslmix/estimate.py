"""Likelihoods and maximum-likelihood fits for partially classified samples.

Three estimation routes are provided:

* ``fit_cc`` -- closed-form MLE from a completely classified sample
  (class frequencies, class means, class MLE covariances).
* ``fit_ig`` -- EM for the partial likelihood that ignores the missing-label
  mechanism: classified points keep one-hot responsibilities, unclassified
  points get posterior responsibilities.
* ``fit_full`` -- direct quasi-Newton ascent of the full likelihood, which
  adds the Bernoulli factor of the missing-label indicators. The mechanism
  probability couples the mixture parameters into the Bernoulli part, which
  breaks the clean E-step; the optimizer works on an unconstrained
  reparametrization (log-ratio weights, raw means, Cholesky factors with log
  diagonal, raw mechanism coefficients).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .classify import posterior_matrix
from .errors import ContractError, EmptyClassError, SingularityError, UnsupportedError
from .missing import Form, MissingnessParams, _covariate
from .model import MixtureParams, PartialSample, log_component_density_matrix, log_mixture_density
from .rng import as_generator


@dataclass(frozen=True)
class FitResult:
    """Outcome of one fit: parameters, trajectory, and convergence status."""

    theta_hat: MixtureParams
    xi_hat: Optional[MissingnessParams]
    final_loglik: float
    iterations: int
    converged: bool
    loglik_trace: tuple[float, ...]
    method: str


# ---------------------------------------------------------------------------
# Log-likelihoods
# ---------------------------------------------------------------------------

def _check_labels(theta: MixtureParams, sample: PartialSample) -> None:
    if sample.n and sample.labels.max(initial=0) > theta.g:
        raise ContractError("sample labels exceed the model's class count")


def loglik_cc(theta: MixtureParams, sample: PartialSample) -> float:
    """Complete-data log-likelihood: sum over points of log(w_z f_z(y))."""
    if not sample.all_labeled:
        raise ContractError("complete-data likelihood requires all labels present")
    _check_labels(theta, sample)
    if sample.n == 0:
        return 0.0
    logs = log_component_density_matrix(theta, sample.features)
    idx = sample.labels - 1
    return float(np.sum(np.log(theta.weights[idx]) + logs[np.arange(sample.n), idx]))


def loglik_ig(theta: MixtureParams, sample: PartialSample) -> float:
    """Partial log-likelihood ignoring the missing-label mechanism.

    Classified points contribute log(w_z f_z(y)); unclassified points
    contribute the log mixture density.
    """
    _check_labels(theta, sample)
    if sample.n == 0:
        return 0.0
    total = 0.0
    labeled = ~sample.missing_flags
    if labeled.any():
        logs = log_component_density_matrix(theta, sample.features[labeled])
        idx = sample.labels[labeled] - 1
        total += float(np.sum(np.log(theta.weights[idx]) + logs[np.arange(idx.size), idx]))
    if sample.missing_flags.any():
        total += float(np.sum(log_mixture_density(theta, sample.features[sample.missing_flags])))
    return total


def loglik_miss(theta: MixtureParams, xi: MissingnessParams, sample: PartialSample) -> float:
    """Bernoulli log-likelihood of the missing flags under the mechanism.

    Evaluated through log-logistic forms, so saturated probabilities stay
    finite. Saturated entropies are floored (see missing.log_entropy) for the
    same reason.
    """
    if sample.n == 0:
        return 0.0
    if xi.xi1 == 0.0:
        arg = np.full(sample.n, xi.xi0)
    else:
        arg = xi.xi0 + xi.xi1 * _covariate(theta, xi, sample.features)
    m = sample.missing_flags
    return float(np.sum(np.where(m, log_expit(arg), log_expit(-arg))))


def loglik_full(theta: MixtureParams, xi: MissingnessParams, sample: PartialSample) -> float:
    """Full log-likelihood: the ignoring term plus the mechanism term."""
    return loglik_ig(theta, sample) + loglik_miss(theta, xi, sample)


# ---------------------------------------------------------------------------
# Moment machinery shared by the closed form and the EM
# ---------------------------------------------------------------------------

def _weighted_moments(features: NDArray, resp: NDArray, equal_covariance: bool):
    n, p = features.shape
    counts = resp.sum(axis=0)
    if np.any(counts <= 1e-12):
        raise SingularityError("a mixture component lost all responsibility mass")
    weights = counts / counts.sum()
    means = (resp.T @ features) / counts[:, None]
    g = resp.shape[1]
    covs = np.empty((g, p, p))
    for i in range(g):
        diff = features - means[i]
        covs[i] = (resp[:, i, None] * diff).T @ diff / counts[i]
    if equal_covariance:
        pooled = np.einsum("i,ijk->jk", counts / n, covs)
        covs = np.broadcast_to(pooled, (g, p, p)).copy()
    return weights, means, covs


def _build_theta(weights: NDArray, means: NDArray, covs: NDArray) -> MixtureParams:
    """Construct MixtureParams, retrying once with a ridge on covariance collapse."""
    try:
        return MixtureParams(weights, means, covs)
    except ContractError:
        p = means.shape[1]
        ridged = covs.copy()
        for i in range(covs.shape[0]):
            eps = 1e-6 * np.trace(covs[i]) / p
            ridged[i] += max(eps, 1e-12) * np.eye(p)
        try:
            return MixtureParams(weights, means, ridged)
        except ContractError as exc:
            raise SingularityError("covariance collapsed and ridge retry failed") from exc


def _one_hot(labels: NDArray, g: int) -> NDArray:
    resp = np.zeros((labels.size, g))
    resp[np.arange(labels.size), labels - 1] = 1.0
    return resp


def fit_cc(sample: PartialSample, g: Optional[int] = None, *, equal_covariance: bool = False) -> FitResult:
    """Closed-form MLE from a completely classified sample.

    Weights are class frequencies, means are class means, covariances are
    class MLE covariances (divisor n_i), pooled when ``equal_covariance``.
    Every class needs at least p+1 members for a nonsingular covariance.
    """
    if not sample.all_labeled:
        raise ContractError("fit_cc requires a completely classified sample")
    g = int(g) if g is not None else int(sample.labels.max(initial=0))
    if g < 2:
        raise ContractError("need at least two classes")
    counts = np.bincount(sample.labels, minlength=g + 1)[1:]
    low = np.nonzero(counts < sample.p + 1)[0]
    if low.size:
        raise EmptyClassError(
            f"class {low[0] + 1} has {counts[low[0]]} members; at least {sample.p + 1} required"
        )
    weights, means, covs = _weighted_moments(sample.features, _one_hot(sample.labels, g), equal_covariance)
    theta = _build_theta(weights, means, covs)
    ll = loglik_cc(theta, sample)
    return FitResult(theta, None, ll, 0, True, (ll,), "cc")


def fit_ig(
    sample: PartialSample,
    init: MixtureParams,
    *,
    tol: float = 1e-8,
    max_iter: int = 500,
    equal_covariance: bool = False,
) -> FitResult:
    """EM for the mechanism-ignoring partial likelihood.

    E-step: posterior responsibilities for unclassified points; classified
    points stay at their one-hot labels. M-step: weighted moment updates
    (pooled covariance when ``equal_covariance``). Stops when the relative
    log-likelihood change drops below ``tol`` or after ``max_iter`` passes.
    The log-likelihood trace is nondecreasing by EM monotonicity.
    """
    _check_labels(init, sample)
    g = init.g
    labeled = ~sample.missing_flags
    resp = np.zeros((sample.n, g))
    if labeled.any():
        resp[labeled] = _one_hot(sample.labels[labeled], g)
    theta = init
    trace: list[float] = []
    prev = -np.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if sample.missing_flags.any():
            resp[sample.missing_flags] = posterior_matrix(theta, sample.features[sample.missing_flags])
        theta = _build_theta(*_weighted_moments(sample.features, resp, equal_covariance))
        ll = loglik_ig(theta, sample)
        trace.append(ll)
        if np.isfinite(prev) and abs(ll - prev) <= tol * max(1.0, abs(ll)):
            converged = True
            break
        prev = ll
    return FitResult(theta, None, trace[-1], iterations, converged, tuple(trace), "ig")


# ---------------------------------------------------------------------------
# Full-likelihood fit: unconstrained reparametrization + quasi-Newton
# ---------------------------------------------------------------------------

def _tri_size(p: int) -> int:
    return p * (p + 1) // 2


def _pack_chol(chol: NDArray) -> NDArray:
    p = chol.shape[0]
    out = np.empty(_tri_size(p))
    k = 0
    for i in range(p):
        for j in range(i + 1):
            out[k] = np.log(chol[i, i]) if i == j else chol[i, j]
            k += 1
    return out


def _unpack_chol(vals: NDArray, p: int) -> NDArray:
    chol = np.zeros((p, p))
    k = 0
    for i in range(p):
        for j in range(i + 1):
            chol[i, j] = np.exp(vals[k]) if i == j else vals[k]
            k += 1
    return chol


def _pack(theta: MixtureParams, xi: MissingnessParams, equal_covariance: bool) -> NDArray:
    g, p = theta.g, theta.p
    parts = [np.log(theta.weights[:-1] / theta.weights[-1]), theta.means.ravel()]
    blocks = 1 if equal_covariance else g
    for i in range(blocks):
        parts.append(_pack_chol(theta.cholesky_factors[i]))
    parts.append(np.array([xi.xi0, xi.xi1]))
    return np.concatenate(parts)


def _unpack(v: NDArray, g: int, p: int, equal_covariance: bool, form: Form):
    alphas = v[:g - 1]
    shifted = np.concatenate([alphas, [0.0]])
    shifted -= shifted.max()
    w = np.exp(shifted)
    w /= w.sum()
    k = g - 1
    means = v[k:k + g * p].reshape(g, p)
    k += g * p
    ts = _tri_size(p)
    covs = np.empty((g, p, p))
    blocks = 1 if equal_covariance else g
    for i in range(blocks):
        chol = _unpack_chol(v[k:k + ts], p)
        covs[i] = chol @ chol.T
        k += ts
    if equal_covariance:
        covs[1:] = covs[0]
    xi = MissingnessParams(float(v[k]), float(v[k + 1]), form)
    theta = MixtureParams(w, means, covs)
    return theta, xi


def _central_diff(fun, v: NDArray) -> NDArray:
    grad = np.empty_like(v)
    for i in range(v.size):
        h = 1e-6 * (1.0 + abs(v[i]))
        up = v.copy(); up[i] += h
        dn = v.copy(); dn[i] -= h
        grad[i] = (fun(up) - fun(dn)) / (2.0 * h)
    return grad


_LOG_2PI = float(np.log(2.0 * np.pi))
_ENTROPY_FLOOR = -700.0


def _unpack_raw(v: NDArray, g: int, p: int, equal_covariance: bool):
    """Decode the optimization vector into raw arrays without validation.

    The Cholesky factors come straight from the parametrization (lower
    triangular, positive diagonal by construction), so no SPD check or
    refactorization is needed in the optimizer's hot loop.
    """
    shifted = np.concatenate([v[:g - 1], [0.0]])
    shifted -= shifted.max()
    w = np.exp(shifted)
    w /= w.sum()
    k = g - 1
    means = v[k:k + g * p].reshape(g, p)
    k += g * p
    ts = _tri_size(p)
    blocks = 1 if equal_covariance else g
    chols = np.empty((g, p, p))
    for i in range(blocks):
        chols[i] = _unpack_chol(v[k:k + ts], p)
        k += ts
    if equal_covariance:
        chols[1:] = chols[0]
    return w, means, chols, float(v[k]), float(v[k + 1])


def _fast_negloglik(v: NDArray, g: int, p: int, equal_covariance: bool, form: Form,
                    X: NDArray, lab_rows: NDArray, lab_idx: NDArray, miss: NDArray) -> float:
    """Fused full log-likelihood for the optimizer.

    Computes the component log-densities once and derives the classified,
    unclassified, and mechanism terms from them; numerically identical (to
    roundoff) to loglik_full after unpacking.
    """
    from scipy.linalg import solve_triangular

    w, means, chols, xi0, xi1 = _unpack_raw(v, g, p, equal_covariance)
    n = X.shape[0]
    logs = np.empty((n, g))
    for i in range(g):
        diag = np.diag(chols[i])
        if not np.all(np.isfinite(diag)) or np.any(diag <= 0.0):
            return 1e30
        z = solve_triangular(chols[i], (X - means[i]).T, lower=True, check_finite=False)
        logs[:, i] = -0.5 * (p * _LOG_2PI + 2.0 * np.log(diag).sum()
                             + np.einsum("ij,ij->j", z, z))
    lw = logs + np.log(w)
    m = lw.max(axis=1)
    lse = m + np.log(np.exp(lw - m[:, None]).sum(axis=1))
    ll = float(lw[lab_rows, lab_idx].sum() + lse[miss].sum())
    if xi1 == 0.0:
        arg = np.full(n, xi0)
    elif form is Form.ENTROPY:
        tau = np.exp(lw - lse[:, None])
        en = -(tau * np.log(np.maximum(tau, 1e-300))).sum(axis=1)
        cov = np.maximum(np.where(en > 0.0, np.log(np.maximum(en, 1e-304)), _ENTROPY_FLOOR),
                         _ENTROPY_FLOOR)
        arg = xi0 + xi1 * cov
    else:
        dmu = means[0] - means[1]
        t = solve_triangular(chols[0], dmu, lower=True, check_finite=False)
        beta1 = solve_triangular(chols[0].T, t, lower=False, check_finite=False)
        beta0 = np.log(w[0] / w[1]) - 0.5 * (means[0] + means[1]) @ beta1
        arg = xi0 + xi1 * np.square(beta0 + X @ beta1)
    ll += float(np.sum(np.where(miss, log_expit(arg), log_expit(-arg))))
    return -ll if np.isfinite(ll) else 1e30


def fit_full(
    sample: PartialSample,
    init_theta: MixtureParams,
    init_xi: MissingnessParams,
    *,
    equal_covariance: bool = False,
    gtol: float = 1e-6,
    maxfun: int = 1000,
    restarts: int = 3,
    seed: int = 0,
) -> FitResult:
    """Maximize the full likelihood over (theta, xi) jointly.

    Quasi-Newton (L-BFGS-B) ascent with central finite-difference gradients
    (step 1e-6 * (1 + |param|)) on the unconstrained reparametrization. When a
    run fails to converge, up to ``restarts`` further runs are started from
    the init jittered by 5%. The returned log-likelihood never falls below
    the value at the init; if no run converges, the best iterate is returned
    with ``converged=False``.
    """
    if init_xi.form is Form.DISCRIMINANT and not equal_covariance:
        raise UnsupportedError("the squared-discriminant mechanism requires an equal-covariance fit")
    _check_labels(init_theta, sample)
    g, p = init_theta.g, init_theta.p
    lab_rows = np.nonzero(~sample.missing_flags)[0]
    lab_idx = sample.labels[lab_rows] - 1

    def objective(v: NDArray) -> float:
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                return _fast_negloglik(v, g, p, equal_covariance, init_xi.form,
                                       sample.features, lab_rows, lab_idx,
                                       sample.missing_flags)
        except (ValueError, np.linalg.LinAlgError):
            return 1e30

    v0 = _pack(init_theta, init_xi, equal_covariance)
    ll_init = -objective(v0)
    rng = as_generator(seed)

    best_v, best_ll, best_success = v0, ll_init, False
    best_trace: list[float] = [ll_init]
    total_nit = 0
    for attempt in range(restarts + 1):
        start = v0 if attempt == 0 else v0 + 0.05 * (1.0 + np.abs(v0)) * rng.standard_normal(v0.size)
        trace = [-objective(start)]
        res = minimize(
            objective,
            start,
            jac=lambda v: _central_diff(objective, v),
            method="L-BFGS-B",
            callback=lambda xk: trace.append(-objective(xk)),
            options={"maxfun": maxfun, "maxiter": maxfun, "gtol": gtol, "ftol": 1e-12},
        )
        total_nit += int(res.nit)
        ll_end = -float(res.fun)
        if ll_end > best_ll or (ll_end == best_ll and res.success and not best_success):
            best_v, best_ll, best_success, best_trace = res.x, ll_end, bool(res.success), trace
        if res.success and ll_end >= ll_init - 1e-9:
            break
    theta_hat, xi_hat = _unpack(best_v, g, p, equal_covariance, init_xi.form)
    final = loglik_full(theta_hat, xi_hat, sample)
    return FitResult(theta_hat, xi_hat, final, total_nit, best_success, tuple(best_trace), "full")


# ---------------------------------------------------------------------------
# Initialization and label-switching resolution
# ---------------------------------------------------------------------------

def fit_xi_profile(theta: MixtureParams, sample: PartialSample, form: Form = Form.ENTROPY) -> MissingnessParams:
    """Mechanism coefficients maximizing the Bernoulli term with theta held fixed.

    This is an exact two-parameter logistic regression of the missing flags
    on the form's covariate, solved by damped Newton iterations. Coefficients
    are clipped to |xi| <= 30 under complete separation.
    """
    x = np.asarray(_covariate(theta, MissingnessParams(0.0, 1.0, form), sample.features), dtype=float)
    m = sample.missing_flags.astype(float)
    n = m.size
    phat = (m.sum() + 0.5) / (n + 1.0)
    beta = np.array([np.log(phat / (1.0 - phat)), 0.0])
    design = np.column_stack([np.ones(n), x])
    for _ in range(100):
        mu = expit(design @ beta)
        w = np.maximum(mu * (1.0 - mu), 1e-12)
        hess = design.T @ (design * w[:, None]) + 1e-10 * np.eye(2)
        step = np.linalg.solve(hess, design.T @ (m - mu))
        beta += step
        if np.abs(step).max() < 1e-10 or np.abs(beta).max() > 30.0:
            break
    beta = np.clip(beta, -30.0, 30.0)
    return MissingnessParams(float(beta[0]), float(beta[1]), form)


def _kmeans(points: NDArray, k: int, anchors: NDArray, iters: int = 50) -> NDArray:
    """Small deterministic Lloyd's k-means with farthest-first seeding.

    ``anchors`` are existing centers (observed class means); new centroids
    start as the points farthest from everything already chosen.
    """
    centers = np.empty((k, points.shape[1]))
    chosen = anchors.copy() if anchors.size else points.mean(axis=0, keepdims=True)
    for i in range(k):
        d2 = np.min(((points[:, None, :] - chosen[None, :, :]) ** 2).sum(axis=2), axis=1)
        centers[i] = points[int(np.argmax(d2))]
        chosen = np.vstack([chosen, centers[i]])
    for _ in range(iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        new = centers.copy()
        for i in range(k):
            mask = assign == i
            if mask.any():
                new[i] = points[mask].mean(axis=0)
        if np.allclose(new, centers):
            break
        centers = new
    return centers


def init_strategy(
    sample: PartialSample,
    g: Optional[int] = None,
    *,
    form: Form = Form.ENTROPY,
    equal_covariance: bool = False,
) -> tuple[MixtureParams, MissingnessParams]:
    """Starting values for the likelihood fits.

    Mixture parameters come from labeled-only moments; classes that never
    appear among the labels get k-means centroids from the unlabeled residue
    and the global covariance. Mechanism coefficients come from a logistic
    regression of the flags on the covariate under the moment-based theta.
    """
    labeled = ~sample.missing_flags
    if not labeled.any():
        raise UnsupportedError("initialization needs at least one labeled point")
    if g is None:
        g = int(sample.labels.max(initial=0))
    if g < 2:
        raise ContractError("need at least two classes")
    if sample.labels.max(initial=0) > g:
        raise ContractError("labels exceed g")
    feats, labs = sample.features[labeled], sample.labels[labeled]
    n, p = sample.features.shape
    global_cov = np.cov(sample.features, rowvar=False, ddof=0).reshape(p, p)
    global_cov += 1e-6 * max(np.trace(global_cov) / p, 1.0) * np.eye(p)

    counts = np.bincount(labs, minlength=g + 1)[1:].astype(float)
    observed = counts > 0
    means = np.zeros((g, p))
    covs = np.empty((g, p, p))
    for i in range(g):
        if observed[i]:
            pts = feats[labs == i + 1]
            means[i] = pts.mean(axis=0)
            if pts.shape[0] >= p + 1:
                c = np.cov(pts, rowvar=False, ddof=0).reshape(p, p)
                covs[i] = c if np.all(np.linalg.eigvalsh(c) > 1e-10) else global_cov
            else:
                covs[i] = global_cov
        else:
            covs[i] = global_cov
    if not observed.all():
        missing_ix = np.nonzero(~observed)[0]
        residue = sample.features[sample.missing_flags]
        if residue.shape[0] < missing_ix.size:
            residue = sample.features
        centers = _kmeans(residue, missing_ix.size, means[observed])
        means[missing_ix] = centers
        counts[missing_ix] = max(counts[observed].mean(), 1.0)
    weights = counts / counts.sum()
    weights = np.clip(weights, 1e-6, None)
    weights /= weights.sum()
    if equal_covariance:
        pooled = np.einsum("i,ijk->jk", weights, covs)
        covs = np.broadcast_to(pooled, (g, p, p)).copy()
    theta = _build_theta(weights, means, covs)
    xi = fit_xi_profile(theta, sample, form)
    return theta, xi


def align_components(theta_hat: MixtureParams, reference: PartialSample) -> MixtureParams:
    """Resolve label switching against a labeled reference subsample.

    Tries every permutation of the components (g <= 6) and keeps the one
    maximizing the complete-data log-likelihood of the reference's labeled
    part under the permuted parameters.
    """
    if theta_hat.g > 6:
        raise UnsupportedError("component alignment is limited to g <= 6")
    ref = reference.labeled_subset()
    if ref.n == 0:
        raise ContractError("alignment reference has no labeled points")
    if ref.labels.max(initial=0) > theta_hat.g:
        raise ContractError("reference labels exceed the model's class count")
    best, best_ll = theta_hat, -np.inf
    for perm in itertools.permutations(range(theta_hat.g)):
        cand = theta_hat.permuted(list(perm))
        ll = loglik_cc(cand, ref)
        if ll > best_ll:
            best, best_ll = cand, ll
    return best
