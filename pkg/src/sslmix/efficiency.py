"""Asymptotic relative efficiency for the canonical two-class model.

All quantities live in the equal-prior canonical model: classes at
+-(delta/2) e1 with identity covariance, labels hidden through the
squared-discriminant logistic mechanism q1(y1) = logistic(xi0 + xi1 d^2)
with d = delta * y1. Everything reduces to one-dimensional integrals against
the scalar marginal f(y1) = (phi(y1 - delta/2) + phi(y1 + delta/2)) / 2.

The first-order expected excess error of a plug-in allocation rule is
inversely proportional to a scalar information summary; the ratios of those
summaries are the efficiency measures reported here:

* complete-data scalar: 1 / (4 + delta^2),
* full-likelihood scalar u0 = (4 + delta^2)^{-1} - gd0 + b0,
* mechanism-ignoring scalar a0 = (4 + delta^2)^{-1} - gd0,

where gd0 integrates tau1 tau2 q1 f (the labeled-information density lost on
the points that actually go missing) and b0 integrates the information the
flags themselves carry. The efficiency of the full rule over the ignoring
rule is u0 / a0 = 1 + b0 / a0 >= 1, and over the complete-data rule it is
u0 * (4 + delta^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import expit

from .errors import ContractError, DomainError, QuadratureError, UnsupportedError
from .missing import Form, MissingnessParams, gamma_expected
from .model import CanonicalTwoClass

_SQRT_2PI = float(np.sqrt(2.0 * np.pi))


def _phi(y):
    return np.exp(-0.5 * y * y) / _SQRT_2PI


def _f1(y, delta):
    return 0.5 * (_phi(y - delta / 2.0) + _phi(y + delta / 2.0))


def _require_discriminant(xi: MissingnessParams) -> None:
    if xi.form is not Form.DISCRIMINANT:
        raise UnsupportedError("efficiency quantities are defined for the squared-discriminant form")


def _breakpoints(delta: float, xi: MissingnessParams | None) -> list[float]:
    """Initial subdivision points marking the integrands' narrow features.

    The posterior product concentrates within ~1/delta of the boundary and
    the mechanism's q(1-q) factor within a band around the root of
    xi0 + xi1 d^2; without these hints the global adaptive scheme can step
    over the spikes entirely at large separation.
    """
    hi = delta / 2.0 + 10.0
    pts = {0.0, min(1.0 / delta, hi / 2), delta / 2.0}
    if xi is not None and xi.xi1 < 0.0 < xi.xi0:
        root = float(np.sqrt(-xi.xi0 / xi.xi1) / delta)
        pts.update(p for p in (root / 2, root, 2 * root) if p < hi)
    out = sorted(p for p in pts if 0.0 < p < hi)
    return [-p for p in reversed(out)] + [0.0] + out


def _quad(fun, delta: float, tol: float, xi: MissingnessParams | None = None) -> tuple[float, float]:
    hi = delta / 2.0 + 10.0
    out = integrate.quad(fun, -hi, hi, epsabs=tol, epsrel=0.0, limit=200,
                         points=_breakpoints(delta, xi), full_output=1)
    if len(out) > 3:
        raise QuadratureError(f"adaptive refinement did not converge: {out[3]}")
    return float(out[0]), float(out[1])


def quad_c0(delta: float, *, tol: float = 1e-9) -> float:
    """Integral of phi(y) exp(-delta^2/8) / cosh(delta*y/2).

    Evaluated in log space so large arguments of cosh cannot overflow.
    """
    if delta <= 0:
        raise ContractError("delta must be positive")

    def integrand(y):
        a = abs(0.5 * delta * y)
        log_cosh = a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)
        return np.exp(-0.5 * y * y - delta * delta / 8.0 - log_cosh) / _SQRT_2PI

    return _quad(integrand, delta, tol)[0]


def quad_b0(delta: float, xi: MissingnessParams, *, tol: float = 1e-9) -> float:
    """Integral of 4 xi1^2 delta^2 y^2 q1(y)(1 - q1(y)) f(y)."""
    if delta <= 0:
        raise ContractError("delta must be positive")
    _require_discriminant(xi)

    def integrand(y):
        q = expit(xi.xi0 + xi.xi1 * (delta * y) ** 2)
        return 4.0 * xi.xi1 ** 2 * delta ** 2 * y * y * q * (1.0 - q) * _f1(y, delta)

    return _quad(integrand, delta, tol, xi)[0]


def quad_gamma_d0(delta: float, xi: MissingnessParams, *, tol: float = 1e-9) -> float:
    """Integral of tau1(y) tau2(y) q1(y) f(y) -- the product gamma * d0.

    The expected missing proportion gamma cancels against the 1/gamma inside
    d0 wherever the quantity is used, so the product is integrated directly
    and gamma is never divided out (no 0/0 at a saturated-off mechanism).
    """
    if delta <= 0:
        raise ContractError("delta must be positive")
    _require_discriminant(xi)

    def integrand(y):
        t1 = expit(delta * y)
        q = expit(xi.xi0 + xi.xi1 * (delta * y) ** 2)
        return t1 * (1.0 - t1) * q * _f1(y, delta)

    return _quad(integrand, delta, tol, xi)[0]


def u0_a0(delta: float, xi: MissingnessParams, *, tol: float = 1e-9) -> tuple[float, float]:
    """The full-likelihood and mechanism-ignoring information scalars.

    u0 = (4 + delta^2)^{-1} - gd0 + b0 and a0 = (4 + delta^2)^{-1} - gd0.
    With the mechanism saturated off both reduce to the complete-data scalar
    (4 + delta^2)^{-1}. A nonpositive a0 (possible only in degenerate corner
    cases) raises DomainError rather than producing a negative efficiency.
    """
    icc = 1.0 / (4.0 + delta * delta)
    gd0 = quad_gamma_d0(delta, xi, tol=tol)
    b0 = quad_b0(delta, xi, tol=tol)
    u0 = icc - gd0 + b0
    a0 = icc - gd0
    if a0 <= 0.0:
        raise DomainError(f"nonpositive information scalar a0={a0!r} at delta={delta}")
    return u0, a0


def are_full_vs_ig(delta: float, xi: MissingnessParams, *, tol: float = 1e-9) -> float:
    """Efficiency of the full-likelihood rule over the mechanism-ignoring rule.

    Dimension-free ratio u0 / a0; always >= 1 (the flags can only add
    information) and -> 1 at both very small and very large separation.
    """
    u0, a0 = u0_a0(delta, xi, tol=tol)
    return u0 / a0


def are_full_vs_cc(delta: float, xi: MissingnessParams, *, tol: float = 1e-9) -> float:
    """Efficiency of the full-likelihood rule over the complete-data rule.

    u0 * (4 + delta^2): the complete-data scalar is the saturated-off limit
    of u0. Below 1 under heavy overlap with many missing labels, above 1 for
    moderate separation, -> 1 as separation grows.
    """
    if delta <= 0:
        raise ContractError("delta must be positive")
    _require_discriminant(xi)
    icc = 1.0 / (4.0 + delta * delta)
    u0 = icc - quad_gamma_d0(delta, xi, tol=tol) + quad_b0(delta, xi, tol=tol)
    return u0 * (4.0 + delta * delta)


@dataclass(frozen=True)
class AreCurvePoint:
    """One grid point of an efficiency curve (plot-ready)."""

    delta: float
    gamma: float
    are_full_vs_ig: float
    are_full_vs_cc: float
    u0: float
    a0: float
    quadrature_error_estimate: float
    flags: str = ""


def are_curve(deltas, xi: MissingnessParams, *, tol: float = 1e-9) -> list[AreCurvePoint]:
    """Evaluate both efficiency ratios and gamma over a grid of separations.

    Grid values must be strictly increasing. Failures (nonconvergent
    quadrature, out-of-domain a0) are recorded in the point's flags instead
    of aborting the curve; such rows carry NaNs.
    """
    deltas = [float(d) for d in deltas]
    if not deltas:
        raise ContractError("a nonempty delta grid is required")
    if any(b <= a for a, b in zip(deltas, deltas[1:])):
        raise ContractError("delta grid must be strictly increasing")
    _require_discriminant(xi)
    points = []
    for delta in deltas:
        try:
            icc = 1.0 / (4.0 + delta * delta)
            hi = delta / 2.0 + 10.0

            def gd0_int(y):
                t1 = expit(delta * y)
                return t1 * (1.0 - t1) * expit(xi.xi0 + xi.xi1 * (delta * y) ** 2) * _f1(y, delta)

            def b0_int(y):
                q = expit(xi.xi0 + xi.xi1 * (delta * y) ** 2)
                return 4.0 * xi.xi1 ** 2 * delta ** 2 * y * y * q * (1.0 - q) * _f1(y, delta)

            errs = []
            vals = []
            for fn in (gd0_int, b0_int):
                val, err = _quad(fn, delta, tol, xi)
                vals.append(val)
                errs.append(err)
            gd0, b0 = vals
            u0, a0 = icc - gd0 + b0, icc - gd0
            gamma = gamma_expected(CanonicalTwoClass(delta, p=1), xi, "quadrature", tol=tol).value
            err = max(errs)
            flags = "" if err <= tol else "quadrature-error-above-tolerance"
            if a0 <= 0.0:
                points.append(AreCurvePoint(delta, gamma, np.nan, u0 * (4 + delta * delta),
                                            u0, a0, err, "a0-nonpositive"))
            else:
                points.append(AreCurvePoint(delta, gamma, u0 / a0, u0 * (4 + delta * delta),
                                            u0, a0, err, flags))
        except (QuadratureError, DomainError) as exc:
            points.append(AreCurvePoint(delta, np.nan, np.nan, np.nan, np.nan, np.nan,
                                        np.nan, type(exc).__name__))
    return points
