"""Monte Carlo relative-efficiency studies.

A study cell fixes a mixture design, a missingness mechanism, a sample size,
and a replication count. Each replication draws a training sample, hides
labels through the mechanism, fits the requested estimators, and scores each
fitted rule on a fresh fully labeled holdout. The relative efficiency of two
estimators is the ratio of their mean excess error rates over the optimal
error of the true model.

Replication streams are keyed on (study seed, cell id, replication index,
purpose), so results are independent of execution order and bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .classify import (
    bayes_allocate,
    empirical_error_rate,
    linear_rule_error,
    posterior_matrix,
)
from .errors import CellError, ContractError, EmptyClassError, SslmixError
from .estimate import align_components, fit_cc, fit_full, fit_ig, init_strategy
from .missing import MissingnessParams, simulate_missing_flags
from .model import MixtureParams, sample_mixture
from .rng import stream

_ESTIMATORS = ("cc", "ig", "full")


@dataclass(frozen=True)
class StudyConfig:
    """One simulation cell.

    The mixture has spherical class covariances ``cov_scales[i] * I_p``;
    means are given per class. ``reference`` picks how the optimal error
    err(theta) is obtained: "closed-form" (two-class homoscedastic equal
    priors only), "monte-carlo" (n_ref draws from the true model), or "auto".
    """

    g: int
    p: int
    means: NDArray
    cov_scales: NDArray
    weights: NDArray
    xi: MissingnessParams
    n: int
    B: int
    holdout_fraction: float = 0.2
    seed: int = 0
    estimators: tuple[str, ...] = ("cc", "ig", "full")
    bootstrap_resamples: int = 1000
    reference: str = "auto"
    n_ref: int = 1_000_000
    equal_covariance_fit: bool = False
    error_evaluation: str = "conditional"
    cell_id: int = 0
    label: str = ""

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float).reshape(self.g, self.p)
        scales = np.asarray(self.cov_scales, dtype=float).reshape(self.g)
        weights = np.asarray(self.weights, dtype=float).reshape(self.g)
        if np.any(scales <= 0):
            raise ContractError("covariance scales must be positive")
        if self.B < 1:
            raise ContractError("B must be >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ContractError("holdout_fraction must lie in (0, 1)")
        est = tuple(self.estimators)
        if not est or any(e not in _ESTIMATORS for e in est):
            raise ContractError(f"estimators must be a nonempty subset of {_ESTIMATORS}")
        if self.reference not in ("auto", "closed-form", "monte-carlo"):
            raise ContractError("reference must be auto, closed-form, or monte-carlo")
        if self.error_evaluation not in ("holdout", "conditional", "analytic"):
            raise ContractError("error_evaluation must be holdout, conditional, or analytic")
        if self.error_evaluation == "analytic" and not (
                self.g == 2 and self.equal_covariance_fit
                and np.allclose(scales, scales[0])):
            raise ContractError("analytic error evaluation needs a homoscedastic two-class "
                                "design with equal-covariance fits")
        for arr in (means, scales, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "cov_scales", scales)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "estimators", est)

    def true_mixture(self) -> MixtureParams:
        covs = np.stack([s * np.eye(self.p) for s in self.cov_scales])
        return MixtureParams(self.weights, self.means, covs)


def two_class_config(delta: float, lam: float, p: int, xi: MissingnessParams, **kw) -> StudyConfig:
    """The proportional-covariance two-class design: mu1 = 0, mu2 = (delta, 0, ...),
    Sigma1 = I, Sigma2 = lam * I, equal priors."""
    means = np.zeros((2, p))
    means[1, 0] = delta
    return StudyConfig(g=2, p=p, means=means, cov_scales=np.array([1.0, lam]),
                       weights=np.array([0.5, 0.5]), xi=xi, **kw)


def three_class_config(lams: Sequence[float], weights: Sequence[float], p: int,
                       xi: MissingnessParams, **kw) -> StudyConfig:
    """The three-class design: mu1 = (-1, 0, ...), mu2 = mu3 = (1, 0, ...),
    Sigma_i = lam_i * I. Scales with lam1 = lam2 = 2 collapse classes 1 and 2
    into a single normal and are rejected."""
    lams = tuple(float(v) for v in lams)
    if len(lams) != 3:
        raise ContractError("three scales required")
    if lams[0] == 2.0 and lams[1] == 2.0:
        raise ContractError("lam1 = lam2 = 2 degenerates to a two-component model")
    means = np.zeros((3, p))
    means[0, 0] = -1.0
    means[1, 0] = 1.0
    means[2, 0] = 1.0
    return StudyConfig(g=3, p=p, means=means, cov_scales=np.asarray(lams),
                       weights=np.asarray(weights, dtype=float), xi=xi, **kw)


def separation_degree(delta: float, lam: float) -> float:
    """Degree of separation delta / (1 + sqrt(lam)) for proportional covariances."""
    if lam <= 0:
        raise ContractError("lam must be positive")
    return float(delta) / (1.0 + math.sqrt(lam))


@dataclass(frozen=True)
class ReplicationRecord:
    """Errors and diagnostics from one replication."""

    index: int
    errors: dict[str, float]
    missing_fraction: float
    converged: dict[str, bool]
    failures: dict[str, str] = field(default_factory=dict)


def run_replication(config: StudyConfig, replication_index: int) -> ReplicationRecord:
    """Run one replication of a study cell.

    Draws the training sample and its missing flags, fits the requested
    estimators, and evaluates each on a fresh holdout of size
    holdout_fraction * n (a holdout missing some class is redrawn on a keyed
    substream, at most 10 times). Three scoring modes:

    * "conditional" (default): the average conditional risk of the fitted
      rule's allocations under the true model, 1 - tau_true at the allocated
      class per holdout point. The label noise is integrated out, and the
      excess over the true rule's score is nonnegative pointwise.
    * "holdout": the labeled misallocation estimate of the error rate
      (empirical_error_rate with holdout weighting).
    * "analytic": the exact conditional error rate of the fitted two-class
      linear rule; no holdout is drawn.

    Estimator failures are recorded per estimator; the replication itself is
    always returned. Deterministic in (seed, cell_id, replication_index).
    """
    theta_true = config.true_mixture()
    key = (config.seed, config.cell_id, replication_index)
    train = sample_mixture(theta_true, config.n, stream(*key, 0))
    partial, _truth = simulate_missing_flags(theta_true, config.xi, train, stream(*key, 1))
    analytic = config.error_evaluation == "analytic"

    errors: dict[str, float] = {}
    converged: dict[str, bool] = {}
    failures: dict[str, str] = {}
    holdout = None
    if not analytic:
        m = max(1, round(config.holdout_fraction * config.n))
        for attempt in range(10):
            cand = sample_mixture(theta_true, m, stream(*key, 2, attempt))
            if np.bincount(cand.labels, minlength=config.g + 1)[1:].min() > 0:
                holdout = cand
                break
        if holdout is None:
            failures["holdout"] = "a class was absent from 10 holdout draws"
            return ReplicationRecord(replication_index, errors, float(partial.missing_flags.mean()),
                                     converged, failures)

    # the true rule scored the same way on the same holdout: differencing
    # against it per replication cancels the evaluation noise shared by
    # every estimator, which otherwise dominates the O(1/n) excesses
    tau_true = None
    if analytic:
        errors["optimal"] = linear_rule_error(theta_true, theta_true)
    elif config.error_evaluation == "conditional":
        tau_true = posterior_matrix(theta_true, holdout.features)
        errors["optimal"] = float(1.0 - tau_true.max(axis=1).mean())
    else:
        errors["optimal"] = empirical_error_rate(theta_true, holdout,
                                                 weighting="holdout").overall_error

    init_theta = init_xi = None
    ig_fit = None
    for est in config.estimators:
        try:
            if est == "cc":
                fit = fit_cc(train, config.g, equal_covariance=config.equal_covariance_fit)
                theta_hat = fit.theta_hat
            else:
                if init_theta is None:
                    init_theta, init_xi = init_strategy(
                        partial, config.g, form=config.xi.form,
                        equal_covariance=config.equal_covariance_fit,
                    )
                if est == "ig":
                    fit = fit_ig(partial, init_theta, equal_covariance=config.equal_covariance_fit)
                    ig_fit = fit
                else:
                    start = ig_fit.theta_hat if ig_fit is not None else init_theta
                    fit = fit_full(partial, start, init_xi,
                                   equal_covariance=config.equal_covariance_fit,
                                   seed=stream(*key, 3).integers(2 ** 31))
                theta_hat = align_components(fit.theta_hat, partial)
            if analytic:
                errors[est] = linear_rule_error(theta_hat, theta_true)
            elif tau_true is not None:
                alloc = np.atleast_1d(bayes_allocate(theta_hat, holdout.features))
                errors[est] = float(1.0 - tau_true[np.arange(holdout.n), alloc - 1].mean())
            else:
                # holdout-frequency weighting keeps the mean excess over the
                # optimal error nonnegative in expectation, which the
                # efficiency-ratio denominators rely on
                errors[est] = empirical_error_rate(theta_hat, holdout,
                                                   weighting="holdout").overall_error
            converged[est] = fit.converged
        except SslmixError as exc:
            failures[est] = f"{type(exc).__name__}: {exc}"
    return ReplicationRecord(replication_index, errors, float(partial.missing_flags.mean()),
                             converged, failures)


def reference_error(config: StudyConfig) -> float:
    """Optimal error err(theta) of the true model for a study cell.

    Closed form Phi(-Delta/2) when the design is two-class homoscedastic with
    equal priors; otherwise a one-time Monte Carlo estimate with n_ref draws
    allocated by the true rule.
    """
    from .classify import optimal_error_two_class
    from .model import CanonicalTwoClass

    theta = config.true_mixture()
    homoscedastic_equal = (
        config.g == 2
        and np.allclose(config.cov_scales[0], config.cov_scales[1])
        and np.allclose(config.weights, 0.5)
    )
    mode = config.reference
    if mode == "auto":
        mode = "closed-form" if homoscedastic_equal else "monte-carlo"
    if mode == "closed-form":
        if not homoscedastic_equal:
            raise ContractError("closed-form reference needs a two-class equal-prior homoscedastic design")
        dmu = theta.means[0] - theta.means[1]
        delta = float(np.sqrt(dmu @ np.linalg.solve(theta.covariances[0], dmu)))
        return optimal_error_two_class(CanonicalTwoClass(delta, p=config.p))
    big = sample_mixture(theta, int(config.n_ref), stream(config.seed, config.cell_id, -1))
    return empirical_error_rate(theta, big).overall_error


@dataclass(frozen=True)
class RECell:
    """Aggregated relative-efficiency results for one cell."""

    label: str
    re_full_vs_cc: float
    re_full_vs_ig: float
    se_full_vs_cc: float
    se_full_vs_ig: float
    missing_proportion: float
    reference: float
    n_records: int
    n_failed: dict[str, int]
    n_nonconverged: dict[str, int]
    flags: str = ""


def _pair_ratio(records: Sequence[ReplicationRecord], top: str, bottom: str, ref: float):
    """Mean-excess ratio of two estimators over the replications where both exist.

    A record carrying an "optimal" entry (the true rule scored on the same
    holdout) is differenced against it; otherwise the global reference is
    subtracted. Both estimate the same ratio, the former with far less
    variance.
    """
    ordered = sorted(records, key=lambda r: r.index)  # order-insensitive aggregation
    triples = [(r.errors[top], r.errors[bottom], r.errors.get("optimal", ref))
               for r in ordered if top in r.errors and bottom in r.errors]
    if not triples:
        return math.nan, "no-usable-replications"
    arr = np.asarray(triples)
    num = float(np.mean(arr[:, 0] - arr[:, 2]))
    den = float(np.mean(arr[:, 1] - arr[:, 2]))
    if den <= 0.0:
        return math.nan, "nonpositive-denominator-excess"
    return num / den, ""


def estimate_re(records: Sequence[ReplicationRecord], reference: float, *, label: str = "") -> RECell:
    """Relative efficiencies of the full rule against the cc and ig rules.

    Each ratio is the mean excess error of the comparison estimator over the
    mean excess error of the full estimator, computed on the replications
    where both are available. A nonpositive denominator flags the cell as
    undefined instead of reporting a negative ratio.
    """
    if not records:
        raise CellError("no replications supplied")
    records = sorted(records, key=lambda r: r.index)  # order-insensitive aggregation
    usable = [r for r in records if any(e in r.errors for e in _ESTIMATORS)]
    if not usable:
        raise CellError("every replication failed")
    flags = []
    re_cc = re_ig = math.nan
    if any("cc" in r.errors for r in usable) and any("full" in r.errors for r in usable):
        re_cc, f = _pair_ratio(usable, "cc", "full", reference)
        if f:
            flags.append(f"full_vs_cc:{f}")
    if any("ig" in r.errors for r in usable) and any("full" in r.errors for r in usable):
        re_ig, f = _pair_ratio(usable, "ig", "full", reference)
        if f:
            flags.append(f"full_vs_ig:{f}")
    n_failed = {e: sum(1 for r in records if e in r.failures) for e in _ESTIMATORS}
    n_failed["holdout"] = sum(1 for r in records if "holdout" in r.failures)
    n_nonconv = {e: sum(1 for r in records if not r.converged.get(e, True)) for e in _ESTIMATORS}
    return RECell(
        label=label,
        re_full_vs_cc=re_cc,
        re_full_vs_ig=re_ig,
        se_full_vs_cc=math.nan,
        se_full_vs_ig=math.nan,
        missing_proportion=float(np.mean([r.missing_fraction for r in records])),
        reference=reference,
        n_records=len(usable),
        n_failed=n_failed,
        n_nonconverged=n_nonconv,
        flags=";".join(flags),
    )


def bootstrap_se(records: Sequence[ReplicationRecord], resamples: int, seed,
                 reference: float) -> tuple[float, float]:
    """Nonparametric bootstrap standard errors of both efficiency ratios.

    Replication records are resampled with replacement; each resample's
    ratios are recomputed and the standard deviation over resamples is
    reported. Resamples with an undefined ratio are skipped.
    """
    usable = [r for r in records if any(e in r.errors for e in _ESTIMATORS)]
    if not usable:
        raise CellError("no usable replications to bootstrap")
    rng = stream(seed) if isinstance(seed, int) else seed
    vals_cc, vals_ig = [], []
    n = len(usable)
    for _ in range(int(resamples)):
        idx = rng.integers(0, n, size=n)
        sub = [usable[i] for i in idx]
        r_cc, f_cc = _pair_ratio(sub, "cc", "full", reference)
        r_ig, f_ig = _pair_ratio(sub, "ig", "full", reference)
        if not f_cc and not math.isnan(r_cc):
            vals_cc.append(r_cc)
        if not f_ig and not math.isnan(r_ig):
            vals_ig.append(r_ig)
    se_cc = float(np.std(vals_cc)) if vals_cc else math.nan
    se_ig = float(np.std(vals_ig)) if vals_ig else math.nan
    return se_cc, se_ig


def run_cell(config: StudyConfig, *, bootstrap: bool = True) -> RECell:
    """All replications of one cell, aggregated, with bootstrap SEs."""
    records = [run_replication(config, b) for b in range(config.B)]
    need_ref = len([e for e in config.estimators if any(e in r.errors for r in records)]) >= 2
    ref = reference_error(config) if need_ref else math.nan
    cell = estimate_re(records, ref, label=config.label or f"cell-{config.cell_id}")
    if bootstrap and need_ref:
        se_cc, se_ig = bootstrap_se(records, config.bootstrap_resamples,
                                    stream(config.seed, config.cell_id, -2), ref)
        cell = replace(cell, se_full_vs_cc=se_cc, se_full_vs_ig=se_ig)
    return cell


def run_study(configs: Sequence[StudyConfig], *, bootstrap: bool = True) -> list[RECell]:
    """Evaluate every cell of a study grid.

    Cells are independent; a cell that fails entirely is reported as a
    flagged row rather than aborting the study.
    """
    if not configs:
        raise ContractError("the study grid is empty")
    out = []
    for i, cfg in enumerate(configs):
        if cfg.cell_id == 0 and i > 0:
            cfg = replace(cfg, cell_id=i)
        try:
            out.append(run_cell(cfg, bootstrap=bootstrap))
        except (CellError, EmptyClassError, ContractError) as exc:
            out.append(RECell(cfg.label or f"cell-{cfg.cell_id}", math.nan, math.nan,
                              math.nan, math.nan, math.nan, math.nan, 0,
                              {}, {}, f"{type(exc).__name__}: {exc}"))
    return out


def missing_proportion_curve(configs: Sequence[StudyConfig]) -> list[tuple[StudyConfig, float]]:
    """Mean missing-label proportion per cell over B replications.

    Only the sampling and flag-simulation stages run (no fits); used for the
    separation-vs-missingness sweeps.
    """
    out = []
    for i, cfg in enumerate(configs):
        if cfg.cell_id == 0 and i > 0:
            cfg = replace(cfg, cell_id=i)
        theta = cfg.true_mixture()
        fracs = np.empty(cfg.B)
        for b in range(cfg.B):
            key = (cfg.seed, cfg.cell_id, b)
            train = sample_mixture(theta, cfg.n, stream(*key, 0))
            partial, _ = simulate_missing_flags(theta, cfg.xi, train, stream(*key, 1))
            fracs[b] = partial.missing_flags.mean()
        out.append((cfg, float(fracs.mean())))
    return out
