"""Command-line interface.

Subcommands: simulate, fit, classify, are, re-study, cv, nw-diagnostic.
Outputs are CSV (with ``# key: value`` metadata headers) or JSON documents;
failures exit nonzero with a machine-readable JSON error record on stderr.
"""

from __future__ import annotations

import functools
import json
import sys

import click
import numpy as np

from . import __version__
from .classify import bayes_allocate
from .diagnostics import kfold_cv, nadaraya_watson_missing
from .efficiency import are_curve
from .errors import ContractError, SslmixError
from .estimate import fit_cc, fit_full, fit_ig, init_strategy
from .io import (
    fit_result_from_document,
    fit_result_to_document,
    metadata_lines,
    parse_study_config,
    read_sample_csv,
    read_sidecar_csv,
    write_are_curve_csv,
    write_sample_csv,
    write_sidecar_csv,
    write_study_csv,
)
from .missing import Form, MissingnessParams, simulate_missing_flags
from .model import MixtureParams, sample_mixture
from .study import run_study


def _fail_cleanly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SslmixError as exc:
            record = {"error": type(exc).__name__, "message": str(exc)}
            click.echo(json.dumps(record), err=True)
            sys.exit(2)
    return wrapper


def _parse_matrix(text: str, rows: int, cols: int, what: str) -> np.ndarray:
    try:
        out = np.array([[float(v) for v in row.replace(",", " ").split()]
                        for row in text.split(";")], dtype=float)
        return out.reshape(rows, cols)
    except ValueError as exc:
        raise ContractError(f"cannot parse {what}: {exc}") from exc


def _parse_vector(text: str, what: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.replace(",", " ").split()], dtype=float)
    except ValueError as exc:
        raise ContractError(f"cannot parse {what}: {exc}") from exc


def _model_options(fn):
    fn = click.option("--g", type=int, default=2, show_default=True, help="Number of classes.")(fn)
    fn = click.option("--p", type=int, default=2, show_default=True, help="Feature dimension.")(fn)
    fn = click.option("--means", default="0 0; 1 0", show_default=True,
                      help="Class means, rows separated by ';'.")(fn)
    fn = click.option("--cov-scales", default="1, 1", show_default=True,
                      help="Spherical covariance scale per class.")(fn)
    fn = click.option("--weights", default="0.5, 0.5", show_default=True,
                      help="Class prior weights.")(fn)
    return fn


def _build_model(g, p, means, cov_scales, weights) -> MixtureParams:
    scales = _parse_vector(cov_scales, "cov-scales")
    covs = np.stack([s * np.eye(p) for s in scales.reshape(g)])
    return MixtureParams(_parse_vector(weights, "weights"), _parse_matrix(means, g, p, "means"), covs)


@click.group()
@click.version_option(__version__)
def main():
    """Semi-supervised Gaussian mixture classification tools."""


@main.command()
@_model_options
@click.option("--n", type=int, required=True, help="Sample size.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--form", type=click.Choice(["entropy", "discriminant"]), default="entropy",
              show_default=True, help="Missingness covariate form.")
@click.option("--xi0", type=float, default=None, help="Missingness intercept.")
@click.option("--xi1", type=float, default=None, help="Missingness slope.")
@click.option("--out", type=click.Path(), required=True, help="Sample CSV path.")
@click.option("--sidecar", type=click.Path(), default=None,
              help="Ground-truth sidecar CSV path (required with a mechanism).")
@_fail_cleanly
def simulate(g, p, means, cov_scales, weights, n, seed, form, xi0, xi1, out, sidecar):
    """Draw a sample, optionally hiding labels through the mechanism."""
    theta = _build_model(g, p, means, cov_scales, weights)
    sample = sample_mixture(theta, n, seed)
    meta = {"seed": seed, "command": "simulate"}
    if xi0 is None and xi1 is None:
        write_sample_csv(out, sample, **meta)
        if sidecar:
            write_sidecar_csv(sidecar, sample.labels, **meta)
        return
    if xi0 is None or xi1 is None or sidecar is None:
        raise ContractError("--xi0, --xi1, and --sidecar must be given together")
    xi = MissingnessParams(xi0, xi1, Form(form))
    partial, truth = simulate_missing_flags(theta, xi, sample, seed + 1)
    meta["form"] = form
    write_sample_csv(out, partial, **meta)
    write_sidecar_csv(sidecar, truth, **meta)
    click.echo(f"wrote {out} ({partial.missing_flags.sum()} of {n} labels missing) and {sidecar}")


@main.command("fit")
@click.argument("sample_csv", type=click.Path(exists=True))
@click.option("--estimator", type=click.Choice(["cc", "ig", "full"]), required=True)
@click.option("--g", type=int, default=None, help="Classes (default: max observed label).")
@click.option("--form", type=click.Choice(["entropy", "discriminant"]), default="entropy",
              show_default=True, help="Mechanism form for the full fit.")
@click.option("--equal-covariance", is_flag=True, help="Pool a common covariance matrix.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="Fit document (JSON) path.")
@_fail_cleanly
def fit_cmd(sample_csv, estimator, g, form, equal_covariance, seed, out):
    """Fit a mixture to a sample CSV with the chosen estimator."""
    sample = read_sample_csv(sample_csv)
    if estimator == "cc":
        result = fit_cc(sample, g, equal_covariance=equal_covariance)
    else:
        init_theta, init_xi = init_strategy(sample, g, form=Form(form),
                                            equal_covariance=equal_covariance)
        if estimator == "ig":
            result = fit_ig(sample, init_theta, equal_covariance=equal_covariance)
        else:
            ig = fit_ig(sample, init_theta, equal_covariance=equal_covariance)
            result = fit_full(sample, ig.theta_hat, init_xi,
                              equal_covariance=equal_covariance, seed=seed)
    with open(out, "w") as fh:
        fh.write(fit_result_to_document(result, command="fit", estimator=estimator,
                                        seed=seed, form=form))
    click.echo(f"{estimator} fit: loglik={result.final_loglik:.6f} converged={result.converged}")


@main.command("classify")
@click.argument("model_json", type=click.Path(exists=True))
@click.argument("sample_csv", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True, help="Labels CSV path.")
@_fail_cleanly
def classify_cmd(model_json, sample_csv, out):
    """Allocate every observation of a CSV with a fitted model."""
    with open(model_json) as fh:
        fit = fit_result_from_document(fh.read())
    sample = read_sample_csv(sample_csv)
    alloc = np.atleast_1d(bayes_allocate(fit.theta_hat, sample.features))
    with open(out, "w") as fh:
        for line in metadata_lines(command="classify"):
            fh.write(line + "\n")
        fh.write("row_index,label\n")
        for j, a in enumerate(alloc):
            fh.write(f"{j},{int(a)}\n")
    click.echo(f"wrote {out}")


@main.command("are")
@click.option("--xi0", type=float, required=True)
@click.option("--xi1", type=float, required=True)
@click.option("--delta-min", type=float, default=0.5, show_default=True)
@click.option("--delta-max", type=float, default=10.0, show_default=True)
@click.option("--delta-step", type=float, default=0.25, show_default=True)
@click.option("--tolerance", type=float, default=1e-9, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="Curve CSV path.")
@_fail_cleanly
def are_cmd(xi0, xi1, delta_min, delta_max, delta_step, tolerance, out):
    """Efficiency curves over a separation grid (squared-discriminant mechanism)."""
    xi = MissingnessParams(xi0, xi1, Form.DISCRIMINANT)
    deltas = np.arange(delta_min, delta_max + 1e-12, delta_step)
    points = are_curve(deltas, xi, tol=tolerance)
    write_are_curve_csv(out, points, command="are", form="discriminant",
                        xi0=xi0, xi1=xi1, tolerance=tolerance)
    click.echo(f"wrote {out} ({len(points)} grid points)")


@main.command("re-study")
@click.argument("config_files", type=click.Path(exists=True), nargs=-1, required=True)
@click.option("--no-bootstrap", is_flag=True, help="Skip bootstrap standard errors.")
@click.option("--out", type=click.Path(), required=True, help="Study CSV path.")
@_fail_cleanly
def re_study(config_files, no_bootstrap, out):
    """Run the relative-efficiency study cells described by config files."""
    configs = [parse_study_config(path) for path in config_files]
    cells = run_study(configs, bootstrap=not no_bootstrap)
    forms = ",".join(sorted({c.xi.form.value for c in configs}))
    write_study_csv(out, cells, command="re-study", form=forms,
                    seed=",".join(str(c.seed) for c in configs))
    click.echo(f"wrote {out} ({len(cells)} cells)")


@main.command("cv")
@click.argument("sample_csv", type=click.Path(exists=True))
@click.argument("sidecar_csv", type=click.Path(exists=True))
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--estimator", type=click.Choice(["cc", "ig", "full"]), default="cc",
              show_default=True)
@click.option("--g", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--equal-covariance", is_flag=True)
@_fail_cleanly
def cv_cmd(sample_csv, sidecar_csv, k, estimator, g, seed, equal_covariance):
    """k-fold cross-validated error rate of an estimator."""
    sample = read_sample_csv(sample_csv)
    truth = read_sidecar_csv(sidecar_csv)
    err = kfold_cv(sample, truth, k, estimator, seed, g=g, equal_covariance=equal_covariance)
    click.echo(f"cv_error: {err!r}")
    click.echo(f"k: {k}")
    click.echo(f"estimator: {estimator}")


@main.command("nw-diagnostic")
@click.argument("model_json", type=click.Path(exists=True))
@click.argument("sample_csv", type=click.Path(exists=True))
@click.option("--bandwidth", type=float, default=0.25, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="Curve CSV path.")
@_fail_cleanly
def nw_diagnostic(model_json, sample_csv, bandwidth, out):
    """Kernel estimate of the missing probability vs negative log entropy."""
    with open(model_json) as fh:
        fit = fit_result_from_document(fh.read())
    sample = read_sample_csv(sample_csv)
    grid, est = nadaraya_watson_missing(fit.theta_hat, sample, bandwidth)
    with open(out, "w") as fh:
        for line in metadata_lines(command="nw-diagnostic", bandwidth=bandwidth):
            fh.write(line + "\n")
        fh.write("neg_log_entropy,missing_probability\n")
        for x, y in zip(grid, est):
            fh.write(f"{x!r},{y!r}\n")
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
