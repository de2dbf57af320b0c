"""
Holding Threshold Solver
========================

Solves the scalar fixed point

    c = 1/2 * integral (c + b)^+ dm,    c >= 0

whose root c(t, m) decides which competitors are held (those with b + c >= 0).
F(c) = c - 1/2 sum_j w_j (c + b_j)^+ is piecewise linear, increasing with
slope in [1/2, 1], negative at 0 and nonnegative at 2 sum_j w_j b_j^+, so:

1. Atomic measures are solved exactly on the linear piece containing the root
2. Bisection on [0, 2 sum w b^+] is the fallback
3. The Gaussian / OU closed form is solved with a bracketed Newton iteration
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from config import SolverConfig
from errors import InvalidMeasureError, ThresholdSolverError
from measures import WEIGHT_SUM_TOL, GaussianSpec, gaussian_pdf_cdf

logger = logging.getLogger(__name__)

EXACT_PIECEWISE = "exact_piecewise"
BISECTION = "bisection"
NEWTON_SAFEGUARDED = "newton_safeguarded"

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class ThresholdResult:
    c: float
    residual: float
    iterations: int
    method: str


def _check_tol(tol: float):
    if not tol > 0:
        raise ThresholdSolverError(f"tolerance must be positive, got {tol}")


def _check_inputs(b_values: ArrayLike, weights: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    b = np.asarray(b_values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if b.size == 0:
        raise InvalidMeasureError("threshold needs at least one drift value")
    if w.shape != b.shape:
        raise InvalidMeasureError(f"got {w.size} weights for {b.size} drift values")
    if not np.all(np.isfinite(b)):
        raise InvalidMeasureError("drift values must be finite")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidMeasureError("weights must be finite and non-negative")
    total = float(np.sum(w))
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise InvalidMeasureError(f"weights sum to {total!r}, expected 1")
    return b, w


def threshold_residual(c: float, b_values: ArrayLike, weights: ArrayLike) -> float:
    """F(c) = c - 1/2 sum_j w_j (c + b_j)^+"""
    b = np.asarray(b_values, dtype=float)
    w = np.asarray(weights, dtype=float)
    return float(c - 0.5 * np.sum(w * np.maximum(c + b, 0.0)))


def c_upper_bound(b_values: ArrayLike, weights: ArrayLike) -> float:
    """2 sum_j w_j b_j^+, an upper bound for the threshold"""
    b = np.asarray(b_values, dtype=float)
    w = np.asarray(weights, dtype=float)
    return float(2.0 * np.sum(w * np.maximum(b, 0.0)))


def _bisect(b: np.ndarray, w: np.ndarray, tol: float, max_iterations: int) -> ThresholdResult:
    lo, hi = 0.0, c_upper_bound(b, w)
    if threshold_residual(lo, b, w) >= -tol:
        return ThresholdResult(0.0, threshold_residual(0.0, b, w), 0, BISECTION)

    mid, f_mid = hi, threshold_residual(hi, b, w)
    for iteration in range(1, max_iterations + 1):
        mid = 0.5 * (lo + hi)
        f_mid = threshold_residual(mid, b, w)
        if abs(f_mid) <= tol:
            return ThresholdResult(mid, f_mid, iteration, BISECTION)
        if mid in (lo, hi):
            raise ThresholdSolverError(
                f"bisection bracket collapsed at c={mid!r} with |F(c)|={abs(f_mid):.3e} above tol={tol:g}"
            )
        if f_mid < 0:
            lo = mid
        else:
            hi = mid

    raise ThresholdSolverError(
        f"bisection did not reach |F(c)| <= {tol:g} in {max_iterations} iterations "
        f"(c={mid!r}, F={f_mid!r})"
    )


def _exact_piecewise(b: np.ndarray, w: np.ndarray) -> Tuple[float, float]:
    # With the k largest drifts active, F(c) = (1 - W_k/2) c - S_k/2
    order = np.argsort(-b, kind="stable")
    b_desc = b[order]
    w_desc = w[order]
    W = np.concatenate(([0.0], np.cumsum(w_desc)))
    S = np.concatenate(([0.0], np.cumsum(w_desc * b_desc)))
    candidates = S / (2.0 - W)
    slack = 64.0 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(b))))

    valid = candidates >= 0.0
    valid[1:] &= candidates[1:] + b_desc >= -slack
    valid[:-1] &= candidates[:-1] + b_desc <= slack
    hits = np.flatnonzero(valid)
    if hits.size == 0:
        return math.nan, math.nan
    k = int(hits[0])
    return float(candidates[k]), float(1.0 - 0.5 * W[k])


def solve_c_empirical(
    b_values: ArrayLike,
    weights: ArrayLike,
    tol: float = SolverConfig.THRESHOLD_TOL,
    method: str = EXACT_PIECEWISE,
) -> ThresholdResult:
    """
    Unique root of c = 1/2 sum_j w_j (c + b_j)^+ over c >= 0.

    The exact solve locates the linear piece of F holding the root from the
    sorted drifts, then applies one Newton correction with the piece slope to
    absorb cumulative-sum rounding. Bisection is used when no piece validates
    or when requested explicitly.
    """
    _check_tol(tol)
    b, w = _check_inputs(b_values, weights)
    upper = c_upper_bound(b, w)

    if method == BISECTION:
        return _bisect(b, w, tol, SolverConfig.MAX_ITERATIONS)
    if method != EXACT_PIECEWISE:
        raise ThresholdSolverError(f"unknown threshold method: {method!r}")

    if upper == 0.0:
        return ThresholdResult(0.0, 0.0, 0, EXACT_PIECEWISE)

    c, slope = _exact_piecewise(b, w)
    if math.isnan(c):
        logger.warning("No linear piece validated for %d atoms, falling back to bisection", b.size)
        return _bisect(b, w, tol, SolverConfig.MAX_ITERATIONS)

    residual = threshold_residual(c, b, w)
    if residual != 0.0:
        polished = min(max(c - residual / slope, 0.0), upper)
        polished_residual = threshold_residual(polished, b, w)
        if abs(polished_residual) < abs(residual):
            c, residual = polished, polished_residual

    if abs(residual) > tol:
        logger.warning("Exact threshold residual %.3e above tolerance, falling back to bisection", residual)
        return _bisect(b, w, tol, SolverConfig.MAX_ITERATIONS)

    logger.debug("Threshold c=%.17g over %d atoms (residual %.3e)", c, b.size, residual)
    return ThresholdResult(c, residual, 1, EXACT_PIECEWISE)


def safeguarded_newton(
    func: Callable[[float], float],
    dfunc: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float,
    max_iterations: int = SolverConfig.MAX_ITERATIONS,
) -> Tuple[float, int]:
    """
    Newton-Raphson kept inside a sign-changing bracket [lo, hi].

    A bisection step replaces the Newton step whenever the Newton iterate
    leaves the bracket or does not halve the previous step. Stops when
    |func| <= tol and raises ThresholdSolverError if the bracket collapses
    first. Returns (root, iterations).
    """
    f_lo, f_hi = func(lo), func(hi)
    if (f_lo > 0.0 and f_hi > 0.0) or (f_lo < 0.0 and f_hi < 0.0):
        raise ThresholdSolverError(
            f"root not bracketed: f({lo!r})={f_lo!r}, f({hi!r})={f_hi!r}"
        )
    if abs(f_lo) <= tol:
        return lo, 0
    if abs(f_hi) <= tol:
        return hi, 0

    # orient so that f(x_neg) < 0 < f(x_pos)
    x_neg, x_pos = (lo, hi) if f_lo < 0.0 else (hi, lo)
    x = 0.5 * (lo + hi)
    step_old = abs(hi - lo)
    step = step_old
    f, df = func(x), dfunc(x)

    for iteration in range(1, max_iterations + 1):
        out_of_bracket = ((x - x_pos) * df - f) * ((x - x_neg) * df - f) > 0.0
        if out_of_bracket or abs(2.0 * f) > abs(step_old * df):
            step_old = step
            step = 0.5 * (x_pos - x_neg)
            x = x_neg + step
        else:
            step_old = step
            step = f / df
            x = x - step

        f, df = func(x), dfunc(x)
        if abs(f) <= tol:
            return x, iteration
        if step == 0.0 or x in (x_neg, x_pos):
            raise ThresholdSolverError(
                f"safeguarded Newton stalled at x={x!r} with |f|={abs(f):.3e} above tol={tol:g}"
            )
        if f < 0.0:
            x_neg = x
        else:
            x_pos = x

    raise ThresholdSolverError(
        f"safeguarded Newton did not converge in {max_iterations} iterations (x={x!r}, f={f!r})"
    )


def solve_c_gaussian_ou(
    theta: float,
    mbar: float,
    mu_mean: float,
    mu_var: float,
    tol: float = SolverConfig.THRESHOLD_TOL,
) -> ThresholdResult:
    """
    Threshold for OU drift b(x) = theta (mbar - x) under the law N(mu_mean, mu_var).

    Root of H(x) = x - 1/2 theta v f0(k) - 1/2 (x - theta (mu_mean - mbar)) F0(k)
    with k = x / theta + mbar and f0, F0 the density and distribution function
    of N(mu_mean, v). H'(x) = 1 - 1/2 F0(k).
    """
    _check_tol(tol)
    if not theta > 0:
        raise ThresholdSolverError(f"theta must be positive, got {theta}")
    if not mu_var > 0:
        raise ThresholdSolverError(f"initial variance must be positive, got {mu_var}")
    if not (math.isfinite(mbar) and math.isfinite(mu_mean)):
        raise ThresholdSolverError("mbar and initial mean must be finite")

    law = GaussianSpec(mu_mean, mu_var)
    shift = theta * (mu_mean - mbar)

    def h(x: float) -> float:
        pdf, cdf = gaussian_pdf_cdf(x / theta + mbar, law)
        return x - 0.5 * theta * mu_var * pdf - 0.5 * (x - shift) * cdf

    def dh(x: float) -> float:
        _, cdf = gaussian_pdf_cdf(x / theta + mbar, law)
        return 1.0 - 0.5 * cdf

    # 2 E[b^+] = -4 H(0)
    h0 = h(0.0)
    upper = -4.0 * h0
    if upper <= 0.0 or h0 >= -tol:
        return ThresholdResult(0.0, h0, 0, NEWTON_SAFEGUARDED)

    c, iterations = safeguarded_newton(h, dh, 0.0, upper, tol)
    c = min(max(c, 0.0), upper)
    residual = h(c)
    logger.debug("Gaussian threshold c=%.17g after %d iterations", c, iterations)
    return ThresholdResult(c, residual, iterations, NEWTON_SAFEGUARDED)
