"""File formats: sample CSV, ground-truth sidecar, fit documents, report CSVs.

Sample CSV: header ``y1,...,yp,label``; the label cell is an integer in 1..g
or empty when the label is missing. The sidecar CSV (``row_index,true_label``)
carries the hidden labels so evaluation tooling never reads them by accident.
Fit results serialize to JSON with full float precision (repr round-trip).
CSV outputs emitted by the CLI begin with ``# key: value`` metadata lines.
"""

from __future__ import annotations

import configparser
import csv
import io as _io
import json
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .efficiency import AreCurvePoint
from .errors import ContractError
from .estimate import FitResult
from .classify import ErrorReport
from .missing import Form, MissingnessParams
from .model import MixtureParams, PartialSample
from .study import RECell, StudyConfig


# ---------------------------------------------------------------------------
# metadata headers
# ---------------------------------------------------------------------------

def metadata_lines(**fields) -> list[str]:
    header = {"version": __version__}
    header.update(fields)
    return [f"# {k}: {v}" for k, v in header.items()]


def _write_csv(path, rows: Iterable[Sequence], header: Sequence[str], meta: dict) -> None:
    with open(path, "w", newline="") as fh:
        for line in metadata_lines(**meta):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _open_skip_comments(path) -> _io.StringIO:
    with open(path, "r", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return _io.StringIO("".join(lines))


# ---------------------------------------------------------------------------
# samples and sidecars
# ---------------------------------------------------------------------------

def write_sample_csv(path, sample: PartialSample, **meta) -> None:
    header = [f"y{i + 1}" for i in range(sample.p)] + ["label"]
    rows = []
    for j in range(sample.n):
        row = [repr(float(v)) for v in sample.features[j]]
        row.append("" if sample.missing_flags[j] else str(int(sample.labels[j])))
        rows.append(row)
    _write_csv(path, rows, header, meta)


def read_sample_csv(path) -> PartialSample:
    reader = csv.reader(_open_skip_comments(path))
    header = next(reader, None)
    if not header or header[-1] != "label" or len(header) < 2:
        raise ContractError("sample CSV needs a header row y1..yp,label")
    p = len(header) - 1
    feats, labels, flags = [], [], []
    for row in reader:
        if not row:
            continue
        if len(row) != p + 1:
            raise ContractError(f"row has {len(row)} cells, expected {p + 1}")
        feats.append([float(v) for v in row[:p]])
        cell = row[p].strip()
        if cell:
            labels.append(int(cell))
            flags.append(False)
        else:
            labels.append(0)
            flags.append(True)
    return PartialSample(np.asarray(feats, dtype=float).reshape(len(flags), p),
                         np.asarray(labels), np.asarray(flags))


def write_sidecar_csv(path, truth, **meta) -> None:
    rows = [[j, int(v)] for j, v in enumerate(np.asarray(truth, dtype=int))]
    _write_csv(path, rows, ["row_index", "true_label"], meta)


def read_sidecar_csv(path) -> np.ndarray:
    reader = csv.reader(_open_skip_comments(path))
    header = next(reader, None)
    if header != ["row_index", "true_label"]:
        raise ContractError("sidecar CSV needs the header row_index,true_label")
    pairs = [(int(r[0]), int(r[1])) for r in reader if r]
    out = np.zeros(len(pairs), dtype=int)
    for j, v in pairs:
        out[j] = v
    return out


# ---------------------------------------------------------------------------
# fit documents and error reports
# ---------------------------------------------------------------------------

def _mixture_to_dict(theta: MixtureParams) -> dict:
    return {
        "weights": theta.weights.tolist(),
        "means": theta.means.tolist(),
        "covariances": theta.covariances.tolist(),
    }


def _mixture_from_dict(d: dict) -> MixtureParams:
    return MixtureParams(np.asarray(d["weights"]), np.asarray(d["means"]),
                         np.asarray(d["covariances"]))


def fit_result_to_document(fit: FitResult, **meta) -> str:
    doc = {
        "metadata": dict({"version": __version__}, **meta),
        "model": _mixture_to_dict(fit.theta_hat),
        "missingness": None if fit.xi_hat is None else {
            "xi0": fit.xi_hat.xi0, "xi1": fit.xi_hat.xi1, "form": fit.xi_hat.form.value,
        },
        "final_loglik": fit.final_loglik,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "loglik_trace": list(fit.loglik_trace),
        "method": fit.method,
    }
    return json.dumps(doc, indent=2)


def fit_result_from_document(text: str) -> FitResult:
    doc = json.loads(text)
    xi = doc.get("missingness")
    return FitResult(
        theta_hat=_mixture_from_dict(doc["model"]),
        xi_hat=None if xi is None else MissingnessParams(xi["xi0"], xi["xi1"], Form(xi["form"])),
        final_loglik=doc["final_loglik"],
        iterations=doc["iterations"],
        converged=doc["converged"],
        loglik_trace=tuple(doc["loglik_trace"]),
        method=doc.get("method", ""),
    )


def error_report_record(report: ErrorReport) -> str:
    return report.to_record()


# ---------------------------------------------------------------------------
# curve and study CSVs
# ---------------------------------------------------------------------------

def write_are_curve_csv(path, points: Sequence[AreCurvePoint], **meta) -> None:
    header = ["delta", "gamma", "are_full_vs_cc", "are_full_vs_ig", "u0", "a0",
              "err_estimate", "flags"]
    rows = [
        [repr(pt.delta), repr(pt.gamma), repr(pt.are_full_vs_cc), repr(pt.are_full_vs_ig),
         repr(pt.u0), repr(pt.a0), repr(pt.quadrature_error_estimate), pt.flags]
        for pt in points
    ]
    _write_csv(path, rows, header, meta)


def write_study_csv(path, cells: Sequence[RECell], **meta) -> None:
    header = ["label", "re_full_vs_cc", "re_full_vs_ig", "se_full_vs_cc", "se_full_vs_ig",
              "missing_proportion", "reference_error", "n_records", "n_failed",
              "n_nonconverged", "flags"]
    rows = [
        [c.label, repr(c.re_full_vs_cc), repr(c.re_full_vs_ig), repr(c.se_full_vs_cc),
         repr(c.se_full_vs_ig), repr(c.missing_proportion), repr(c.reference),
         c.n_records, json.dumps(c.n_failed), json.dumps(c.n_nonconverged), c.flags]
        for c in cells
    ]
    _write_csv(path, rows, header, meta)


# ---------------------------------------------------------------------------
# study config files (INI: [model], [missingness], [study])
# ---------------------------------------------------------------------------

def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def parse_study_config(path) -> StudyConfig:
    """Read one study cell from an INI config file.

    ``[model]`` holds g, p, weights, cov_scales, and means (rows separated by
    ';'); ``[missingness]`` holds form, xi0, xi1; ``[study]`` holds n,
    replications, and the optional knobs (holdout_fraction, seed, estimators,
    bootstrap_resamples, reference, n_ref, equal_covariance_fit, label).
    """
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ContractError(f"cannot read config file {path}")
    try:
        model = cp["model"]
        miss = cp["missingness"]
        study = cp["study"]
        g, p = model.getint("g"), model.getint("p")
        means = [_parse_floats(r) for r in model["means"].split(";")]
        xi = MissingnessParams(miss.getfloat("xi0"), miss.getfloat("xi1"),
                               Form(miss.get("form", "entropy").strip().lower()))
        return StudyConfig(
            g=g,
            p=p,
            means=np.asarray(means, dtype=float),
            cov_scales=np.asarray(_parse_floats(model["cov_scales"])),
            weights=np.asarray(_parse_floats(model["weights"])),
            xi=xi,
            n=study.getint("n"),
            B=study.getint("replications"),
            holdout_fraction=study.getfloat("holdout_fraction", 0.2),
            seed=study.getint("seed", 0),
            estimators=tuple(study.get("estimators", "cc, ig, full").replace(",", " ").split()),
            bootstrap_resamples=study.getint("bootstrap_resamples", 1000),
            reference=study.get("reference", "auto"),
            n_ref=study.getint("n_ref", 1_000_000),
            equal_covariance_fit=study.getboolean("equal_covariance_fit", False),
            error_evaluation=study.get("error_evaluation", "conditional"),
            label=study.get("label", ""),
        )
    except (KeyError, ValueError) as exc:
        raise ContractError(f"malformed study config {path}: {exc}") from exc
