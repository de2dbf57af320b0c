"""
Equilibrium Coefficient Maps
============================

Given the threshold c(t, m), the mean-field equilibrium has

    B(t, x, m)  = 1/2 (b + c)^+ - (b + c)^-
    Sigma(t, x, m) = sigma / 2 if b + c >= 0 else sigma
    pi*(t, x, m)   = 1 if b + c >= 0 else 0

The tie b + c = 0 belongs to the held branch. All maps are vectorized over
atoms; reductions use numpy's pairwise summation.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import SolverConfig
from measures import Measure1D
from models import CoefficientModel, eval_b, eval_sigma
from threshold import ThresholdResult, solve_c_empirical

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]


def _shape_like(values: np.ndarray, like) -> Union[float, np.ndarray]:
    return float(values) if np.ndim(like) == 0 else values


def equilibrium_drift(b: ArrayLike, c: float) -> Union[float, np.ndarray]:
    """1/2 (b + c)^+ - (b + c)^-"""
    s = np.asarray(b, dtype=float) + c
    return _shape_like(np.where(s >= 0.0, 0.5 * s, s), b)


def equilibrium_vol(b: ArrayLike, c: float, sigma: ArrayLike) -> Union[float, np.ndarray]:
    """sigma / 2 on the held region b + c >= 0, sigma elsewhere"""
    s = np.asarray(b, dtype=float) + c
    sig = np.asarray(sigma, dtype=float)
    vol = np.where(s >= 0.0, 0.5 * sig, sig)
    return float(vol) if vol.ndim == 0 else vol


def optimal_holding(b: ArrayLike, c: float) -> Union[int, np.ndarray]:
    """Bang-bang holding indicator 1_{b + c >= 0}"""
    held = (np.asarray(b, dtype=float) + c >= 0.0).astype(np.int8)
    return int(held) if np.ndim(b) == 0 else held


@dataclass(frozen=True)
class EquilibriumFields:
    c: float
    b_vals: np.ndarray
    B_vals: np.ndarray
    Sigma_vals: np.ndarray
    holding: np.ndarray
    threshold: Optional[ThresholdResult] = None

    def to_frame(self, m: Measure1D) -> pd.DataFrame:
        return pd.DataFrame({
            "atom": m.atoms,
            "weight": m.weights,
            "b": self.b_vals,
            "B": self.B_vals,
            "Sigma": self.Sigma_vals,
            "holding": self.holding,
        })


def fields_from_values(b_vals: np.ndarray, sigma_vals: np.ndarray, weights: np.ndarray,
                       tol: float = SolverConfig.THRESHOLD_TOL) -> EquilibriumFields:
    """Equilibrium fields from drift and volatility values already evaluated at the atoms"""
    b_vals = np.asarray(b_vals, dtype=float)
    sigma_vals = np.asarray(sigma_vals, dtype=float)
    result = solve_c_empirical(b_vals, weights, tol)
    c = result.c
    return EquilibriumFields(
        c=c,
        b_vals=b_vals,
        B_vals=equilibrium_drift(b_vals, c),
        Sigma_vals=equilibrium_vol(b_vals, c, sigma_vals),
        holding=optimal_holding(b_vals, c),
        threshold=result,
    )


def compute_fields(model: CoefficientModel, t: float, m: Measure1D,
                   tol: float = SolverConfig.THRESHOLD_TOL) -> EquilibriumFields:
    """Evaluate b and sigma at every atom of m, solve c(t, m) and map B, Sigma, pi*"""
    b_vals = np.asarray(eval_b(model, t, m.atoms, m), dtype=float)
    sigma_vals = np.asarray(eval_sigma(model, t, m.atoms, m), dtype=float)
    fields = fields_from_values(b_vals, sigma_vals, m.weights, tol)
    logger.debug("t=%g: c=%.17g, %d of %d atoms held", t, fields.c, int(fields.holding.sum()), m.size)
    return fields


def consistency_residuals(fields: EquilibriumFields, weights: ArrayLike) -> Tuple[float, float]:
    """
    Identification residuals of a set of fields.

    r1 = |sum_j w_j B_j^+ - c|
    r2 = max_j |B_j (1 + holding_j) - (b_j + sum_k w_k B_k^+)|
    """
    w = np.asarray(weights, dtype=float)
    held_mass = float(np.sum(w * np.maximum(fields.B_vals, 0.0)))
    r1 = abs(held_mass - fields.c)
    r2 = float(np.max(np.abs(fields.B_vals * (1.0 + fields.holding) - (fields.b_vals + held_mass))))
    return r1, r2


def drift_profile(model: CoefficientModel, t: float, m: Measure1D, grid: Sequence[float],
                  tol: float = SolverConfig.THRESHOLD_TOL) -> pd.DataFrame:
    """b, B, Sigma and holding on a state grid, with c solved from the measure m"""
    c = solve_c_empirical(eval_b(model, t, m.atoms, m), m.weights, tol).c
    return profile_for_threshold(model, t, c, grid)


def profile_for_threshold(model: CoefficientModel, t: float, c: float, grid: Sequence[float]) -> pd.DataFrame:
    x = np.asarray(grid, dtype=float)
    b = np.asarray(eval_b(model, t, x), dtype=float)
    sigma = np.asarray(eval_sigma(model, t, x), dtype=float)
    return pd.DataFrame({
        "x": x,
        "b": b,
        "B": equilibrium_drift(b, c),
        "Sigma": equilibrium_vol(b, c, sigma),
        "holding": optimal_holding(b, c),
        "c": np.full(x.size, c),
    })
