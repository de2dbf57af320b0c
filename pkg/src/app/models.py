"""
Provisions Coefficient Models
=============================

Parametric drift b(t, x, m) and volatility sigma(t, x, m) of the provisions
(idiosyncratic risk) process:

- OU:           b = theta (mbar - x),  sigma = sigbar
- ConstantSign: b = b0,                sigma = sig0
- Tabulated:    piecewise-linear tables in x (or in t), clamped at the ends

The measure argument is accepted for the general b(t, x, m) signature but the
shipped variants do not depend on it. Volatility is floored at sigma_floor at
evaluation time; validate_assumptions reports raw values below the floor.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import SolverConfig
from errors import InvalidStateError, ModelAssumptionError
from measures import Measure1D

logger = logging.getLogger(__name__)

StateLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class OUVariant:
    theta: float
    mbar: float
    sigbar: float
    kind: str = field(default="ou", init=False)

    def __post_init__(self):
        if not self.theta > 0:
            raise ModelAssumptionError(f"OU theta must be positive, got {self.theta}")
        if not self.sigbar > 0:
            raise ModelAssumptionError(f"OU sigbar must be positive, got {self.sigbar}")
        if not math.isfinite(self.mbar):
            raise ModelAssumptionError("OU mbar must be finite")


@dataclass(frozen=True)
class ConstantSignVariant:
    b0: float
    sig0: float
    kind: str = field(default="constant_sign", init=False)

    def __post_init__(self):
        if not math.isfinite(self.b0):
            raise ModelAssumptionError("constant drift must be finite")
        if not self.sig0 > 0:
            raise ModelAssumptionError(f"constant volatility must be positive, got {self.sig0}")


@dataclass(frozen=True)
class TabulatedVariant:
    grid: Tuple[float, ...]
    b_values: Tuple[float, ...]
    sigma_values: Tuple[float, ...]
    time_dependent: bool = False
    kind: str = field(default="tabulated", init=False)

    def __post_init__(self):
        grid = tuple(float(v) for v in self.grid)
        b_values = tuple(float(v) for v in self.b_values)
        sigma_values = tuple(float(v) for v in self.sigma_values)
        if len(grid) == 0:
            raise ModelAssumptionError("tabulated model needs a non-empty grid")
        if len(b_values) != len(grid) or len(sigma_values) != len(grid):
            raise ModelAssumptionError(
                f"table lengths differ: grid {len(grid)}, b {len(b_values)}, sigma {len(sigma_values)}"
            )
        if not all(np.isfinite(grid + b_values + sigma_values)):
            raise ModelAssumptionError("table entries must be finite")
        if any(hi <= lo for lo, hi in zip(grid, grid[1:])):
            raise ModelAssumptionError("tabulated grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "b_values", b_values)
        object.__setattr__(self, "sigma_values", sigma_values)


Variant = Union[OUVariant, ConstantSignVariant, TabulatedVariant]


@dataclass(frozen=True)
class CoefficientModel:
    """Provisions coefficients with a volatility floor and an optional drift clip"""
    variant: Variant
    sigma_floor: float = SolverConfig.SIGMA_FLOOR
    drift_bound: Optional[float] = None

    def __post_init__(self):
        if not self.sigma_floor > 0:
            raise ModelAssumptionError(f"sigma_floor must be positive, got {self.sigma_floor}")
        if self.drift_bound is not None and not self.drift_bound > 0:
            raise ModelAssumptionError(f"drift_bound must be positive, got {self.drift_bound}")

    @property
    def kind(self) -> str:
        return self.variant.kind

    @property
    def is_bounded(self) -> bool:
        """Drift and volatility bounded on the whole state space"""
        if self.drift_bound is not None:
            return True
        return not isinstance(self.variant, OUVariant)


def _check_state(x: StateLike) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidStateError("coefficients evaluated at a non-finite state")
    return arr


def _scalar_or_array(values: np.ndarray, x: StateLike) -> StateLike:
    return float(values) if np.ndim(x) == 0 else values


def _raw_b(model: CoefficientModel, t: float, x: np.ndarray) -> np.ndarray:
    v = model.variant
    if isinstance(v, OUVariant):
        return v.theta * (v.mbar - x)
    if isinstance(v, ConstantSignVariant):
        return np.full(x.shape, v.b0)
    if v.time_dependent:
        return np.full(x.shape, np.interp(t, v.grid, v.b_values))
    return np.interp(x, v.grid, v.b_values)


def _raw_sigma(model: CoefficientModel, t: float, x: np.ndarray) -> np.ndarray:
    v = model.variant
    if isinstance(v, OUVariant):
        return np.full(x.shape, v.sigbar)
    if isinstance(v, ConstantSignVariant):
        return np.full(x.shape, v.sig0)
    if v.time_dependent:
        return np.full(x.shape, np.interp(t, v.grid, v.sigma_values))
    return np.interp(x, v.grid, v.sigma_values)


def eval_b(model: CoefficientModel, t: float, x: StateLike, m: Optional[Measure1D] = None) -> StateLike:
    """Provisions drift b(t, x, m); vectorized over x"""
    arr = _check_state(x)
    values = _raw_b(model, t, arr)
    if model.drift_bound is not None:
        values = np.clip(values, -model.drift_bound, model.drift_bound)
    return _scalar_or_array(values, x)


def eval_sigma(model: CoefficientModel, t: float, x: StateLike, m: Optional[Measure1D] = None) -> StateLike:
    """Provisions volatility sigma(t, x, m) >= sigma_floor; vectorized over x"""
    arr = _check_state(x)
    values = np.maximum(_raw_sigma(model, t, arr), model.sigma_floor)
    return _scalar_or_array(values, x)


def growth_bounds(model: CoefficientModel) -> Tuple[float, float]:
    """Constants (g, s) with |b(t, x)| <= g (1 + |x|) and sigma <= s"""
    v = model.variant
    if isinstance(v, OUVariant):
        g = v.theta * max(1.0, abs(v.mbar))
        s = v.sigbar
    elif isinstance(v, ConstantSignVariant):
        g, s = abs(v.b0), v.sig0
    else:
        g = max(abs(b) for b in v.b_values)
        s = max(v.sigma_values)
    if model.drift_bound is not None:
        g = min(g, model.drift_bound)
    return g, max(s, model.sigma_floor)


def declared_drift_sign(model: CoefficientModel) -> Optional[str]:
    """'negative' / 'nonnegative' when the sign is fixed by construction"""
    v = model.variant
    if isinstance(v, ConstantSignVariant):
        return "negative" if v.b0 < 0 else "nonnegative"
    if isinstance(v, TabulatedVariant):
        if all(b < 0 for b in v.b_values):
            return "negative"
        if all(b >= 0 for b in v.b_values):
            return "nonnegative"
    return None


@dataclass
class ValidationReport:
    """Outcome of the standing-assumption checks on a sample grid"""
    passed: bool
    violations: List[Tuple[float, float]]
    drift_sign: str
    constant_sign: bool
    bounded: bool
    drift_growth: float
    sigma_max: float
    messages: List[str] = field(default_factory=list)


def validate_assumptions(model: CoefficientModel, sample_grid: Sequence[float], t: float = 0.0) -> ValidationReport:
    """
    Check the volatility floor on the sample grid and classify the drift sign.

    For time-dependent tables the sample grid is read as times.
    """
    grid = np.asarray(sample_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ModelAssumptionError("validation needs a non-empty sample grid")
    grid = _check_state(grid)

    v = model.variant
    if isinstance(v, TabulatedVariant) and v.time_dependent:
        raw_sigma = np.interp(grid, v.grid, v.sigma_values)
        drift = np.interp(grid, v.grid, v.b_values)
        states = np.zeros_like(grid)
    else:
        raw_sigma = _raw_sigma(model, t, grid)
        drift = np.asarray(eval_b(model, t, grid), dtype=float)
        states = grid

    bad = raw_sigma < model.sigma_floor
    violations = [(float(x), float(s)) for x, s in zip(grid[bad], raw_sigma[bad])]
    messages = [
        f"sigma={s:g} below floor {model.sigma_floor:g} at grid point {x:g}" for x, s in violations
    ]

    declared = declared_drift_sign(model)
    if declared is not None:
        drift_sign, constant_sign = declared, True
    elif np.all(drift < 0):
        drift_sign, constant_sign = "negative", False
    elif np.all(drift >= 0):
        drift_sign, constant_sign = "nonnegative", False
    else:
        drift_sign, constant_sign = "mixed", False
    if drift_sign == "negative":
        messages.append("drift negative everywhere" if constant_sign else "drift negative on the sample grid")
    elif drift_sign == "nonnegative":
        messages.append("drift nonnegative everywhere" if constant_sign else "drift nonnegative on the sample grid")

    report = ValidationReport(
        passed=not violations,
        violations=violations,
        drift_sign=drift_sign,
        constant_sign=constant_sign,
        bounded=model.is_bounded,
        drift_growth=float(np.max(np.abs(drift) / (1.0 + np.abs(states)))),
        sigma_max=float(np.max(np.maximum(raw_sigma, model.sigma_floor))),
        messages=messages,
    )
    if not report.passed:
        logger.warning("Model %s violates the volatility floor at %d grid points", model.kind, len(violations))
    return report


def model_from_dict(block: Dict[str, Any]) -> CoefficientModel:
    """Build a model from a configuration block ({"kind": "ou", "theta": ...})"""
    block = dict(block)
    kind = block.pop("kind", None)
    sigma_floor = block.pop("sigma_floor", None)
    drift_bound = block.pop("drift_bound", None)
    try:
        if kind == "ou":
            variant = OUVariant(theta=block["theta"], mbar=block["mbar"], sigbar=block["sigbar"])
        elif kind == "constant_sign":
            variant = ConstantSignVariant(b0=block["b0"], sig0=block["sig0"])
        elif kind == "tabulated":
            variant = TabulatedVariant(
                grid=tuple(block["grid"]),
                b_values=tuple(block["b_values"]),
                sigma_values=tuple(block["sigma_values"]),
                time_dependent=bool(block.get("time_dependent", False)),
            )
        else:
            raise ModelAssumptionError(f"unknown model kind: {kind!r}")
    except KeyError as e:
        raise ModelAssumptionError(f"model of kind {kind!r} is missing parameter {e.args[0]!r}") from e

    return CoefficientModel(
        variant=variant,
        sigma_floor=SolverConfig.SIGMA_FLOOR if sigma_floor is None else float(sigma_floor),
        drift_bound=None if drift_bound is None else float(drift_bound),
    )


def model_to_dict(model: CoefficientModel) -> Dict[str, Any]:
    """Echo a model as a configuration block"""
    v = model.variant
    if isinstance(v, OUVariant):
        block = {"kind": "ou", "theta": v.theta, "mbar": v.mbar, "sigbar": v.sigbar}
    elif isinstance(v, ConstantSignVariant):
        block = {"kind": "constant_sign", "b0": v.b0, "sig0": v.sig0}
    else:
        block = {
            "kind": "tabulated",
            "grid": list(v.grid),
            "b_values": list(v.b_values),
            "sigma_values": list(v.sigma_values),
            "time_dependent": v.time_dependent,
        }
    block["sigma_floor"] = model.sigma_floor
    block["drift_bound"] = model.drift_bound
    return block
