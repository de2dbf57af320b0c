"""
Atomic Measures on the Real Line
================================

Weighted atomic probability measures (empirical laws of particle systems),
the quadratic Wasserstein distance between them, Gaussian kernel density
tables and the normal-law primitives used by the threshold solver.

All functions are pure and safe to call from any number of threads.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from errors import InvalidMeasureError

WEIGHT_SUM_TOL = 1e-12

# Grid points per chunk when evaluating kernel mixtures
_KDE_CHUNK_CELLS = 4_000_000

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class Measure1D:
    """Weighted atomic probability measure; duplicated atoms are allowed"""
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        weights = np.array(self.weights, dtype=float)

        if atoms.ndim != 1 or atoms.size == 0:
            raise InvalidMeasureError("a measure needs at least one atom")
        if weights.shape != atoms.shape:
            raise InvalidMeasureError(
                f"atoms and weights differ in length ({atoms.size} vs {weights.size})"
            )
        if not np.all(np.isfinite(atoms)):
            raise InvalidMeasureError("atoms must be finite")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InvalidMeasureError("weights must be finite and non-negative")
        total = float(np.sum(weights))
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidMeasureError(f"weights sum to {total!r}, expected 1")

        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return int(self.atoms.size)


@dataclass(frozen=True)
class GaussianSpec:
    """Normal law N(mean, variance)"""
    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
            raise InvalidMeasureError("Gaussian parameters must be finite")
        if self.variance <= 0:
            raise InvalidMeasureError(f"variance must be positive, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def empirical_from_samples(values: ArrayLike, weights: Optional[ArrayLike] = None) -> Measure1D:
    """Build a measure from samples, normalizing weights (uniform when omitted)"""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise InvalidMeasureError("cannot build a measure from an empty sample")
    if not np.all(np.isfinite(values)):
        raise InvalidMeasureError("sample values must be finite")

    if weights is None:
        return Measure1D(values, np.full(values.size, 1.0 / values.size))

    weights = np.asarray(weights, dtype=float).ravel()
    if weights.size != values.size:
        raise InvalidMeasureError(
            f"got {weights.size} weights for {values.size} values"
        )
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise InvalidMeasureError("weights must be finite and non-negative")
    total = float(np.sum(weights))
    if total <= 0:
        raise InvalidMeasureError("weights are all zero")
    return Measure1D(values, weights / total)


def measure_moments(m: Measure1D) -> Tuple[float, float]:
    """Weighted mean and variance"""
    mean = float(np.sum(m.weights * m.atoms))
    variance = float(np.sum(m.weights * (m.atoms - mean) ** 2))
    return mean, variance


def _quantile_steps(m: Measure1D) -> Tuple[np.ndarray, np.ndarray]:
    order = np.argsort(m.atoms, kind="stable")
    return m.atoms[order], np.cumsum(m.weights[order])


def wasserstein2(m1: Measure1D, m2: Measure1D) -> float:
    """
    Quadratic Wasserstein distance through the quantile coupling.

    Both quantile functions are step functions; on the merged partition of
    [0, 1] by their cumulative weights each is constant, so the integral of
    (Q1 - Q2)^2 is an exact finite sum.
    """
    x1, cw1 = _quantile_steps(m1)
    x2, cw2 = _quantile_steps(m2)

    breaks = np.union1d(cw1, cw2)
    breaks = breaks[(breaks > 0.0) & (breaks < 1.0)]
    edges = np.concatenate(([0.0], breaks, [1.0]))
    widths = np.diff(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])

    # Q(u) = inf{x : F(x) >= u}
    q1 = x1[np.minimum(np.searchsorted(cw1, mids, side="left"), x1.size - 1)]
    q2 = x2[np.minimum(np.searchsorted(cw2, mids, side="left"), x2.size - 1)]
    return math.sqrt(max(float(np.sum(widths * (q1 - q2) ** 2)), 0.0))


def silverman_bandwidth(m: Measure1D) -> float:
    """Rule-of-thumb bandwidth 1.06 * std * n^(-1/5)"""
    _, variance = measure_moments(m)
    std = math.sqrt(variance)
    if std <= 0:
        return 1.0
    return 1.06 * std * m.size ** (-0.2)


def kde_density(m: Measure1D, bandwidth: Optional[float], grid: ArrayLike) -> np.ndarray:
    """Gaussian-kernel mixture sum_j w_j phi((x - a_j)/h)/h on the grid"""
    if bandwidth is None:
        bandwidth = silverman_bandwidth(m)
    if not bandwidth > 0:
        raise InvalidMeasureError(f"bandwidth must be positive, got {bandwidth}")

    grid = np.asarray(grid, dtype=float).ravel()
    density = np.empty(grid.size)
    chunk = max(1, _KDE_CHUNK_CELLS // m.size)
    for start in range(0, grid.size, chunk):
        block = grid[start:start + chunk]
        z = (block[:, None] - m.atoms[None, :]) / bandwidth
        density[start:start + chunk] = stats.norm.pdf(z) @ m.weights / bandwidth
    return density


def default_grid(m: Measure1D, bandwidth: float, points: int, padding: float = 8.0) -> np.ndarray:
    """Uniform grid spanning the support padded by `padding` bandwidths"""
    low = float(np.min(m.atoms)) - padding * bandwidth
    high = float(np.max(m.atoms)) + padding * bandwidth
    return np.linspace(low, high, points)


def gaussian_pdf_cdf(x: Union[float, np.ndarray], law: GaussianSpec):
    """Density and distribution function of the normal law at x"""
    pdf = stats.norm.pdf(x, loc=law.mean, scale=law.std)
    cdf = stats.norm.cdf(x, loc=law.mean, scale=law.std)
    if np.ndim(pdf) == 0:
        return float(pdf), float(cdf)
    return pdf, cdf


def gaussian_quantile_measure(law: GaussianSpec, n: int) -> Measure1D:
    """Deterministic n-atom discretization at the midpoint quantiles (k - 1/2)/n"""
    if n < 1:
        raise InvalidMeasureError("need at least one quantile atom")
    u = (np.arange(n) + 0.5) / n
    return empirical_from_samples(stats.norm.ppf(u, loc=law.mean, scale=law.std))


def sample_initial(initial: Union[GaussianSpec, Measure1D], n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n iid initial states from a Gaussian law or an atomic measure"""
    if isinstance(initial, GaussianSpec):
        return initial.mean + initial.std * rng.standard_normal(n)
    return rng.choice(initial.atoms, size=n, replace=True, p=initial.weights)
