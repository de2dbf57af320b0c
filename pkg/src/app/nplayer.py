"""
Finite-N Mutual Holding Game
============================

N players with states X^i hold fractions gamma^{i,j} / N of each other. The
state dynamics M(Gamma) dX = b dt + diag(sigma) dW give

    B = M(Gamma)^{-1} b,    Sigma = M(Gamma)^{-1} diag(sigma)

with M_ii = 1 + (1/N) sum_j gamma^{j,i} - gamma^{i,i} / N and
M_ik = -gamma^{i,k} / N. Under the mean-field induced strategy every row is
the same profile pi (pi^j = 1_{b^j + c >= 0}), M = diag(1 + pi) - (1/N) 1 pi^T,
and Sherman-Morrison gives

    M^{-1}_{ij} = [1_{i=j} + A^j / N] / (1 + pi^i),
    A^j = (pi^j / (1 + pi^j)) / (1 - (1/N) sum_k pi^k / (1 + pi^k)).

Replacing row i by a deviation beta keeps an O(N) inverse (apply_inverse).
The epsilon-Nash gap is estimated by reweighting the deviated system with
the discrete Girsanov density of the deviating player.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from config import SimulationDefaults, SolverConfig
from deviations import DeviationStrategy
from equilibrium import optimal_holding
from errors import CoefficientError, ConfigError, ModelAssumptionError, SimulationError
from mfsim import (
    ParticleEnsemble,
    ParticleStepper,
    SimConfig,
    initial_states,
    step_normals,
)
from models import CoefficientModel, eval_b, eval_sigma
from threshold import solve_c_empirical

logger = logging.getLogger(__name__)

LINEAR_SOLVE = "linear_solve"
CLOSED_FORM = "closed_form"

Utility = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class HoldingMatrix:
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.shape[0] == 0:
            raise ModelAssumptionError(f"holding matrix must be square and non-empty, got shape {entries.shape}")
        if not np.all((entries >= 0.0) & (entries <= 1.0)):
            raise ModelAssumptionError("holding fractions must lie in [0, 1]")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    @classmethod
    def from_profile(cls, pi: Sequence[float]) -> "HoldingMatrix":
        """Column-constant matrix whose every row is pi"""
        pi = np.asarray(pi, dtype=float)
        return cls(np.tile(pi, (pi.size, 1)))

    def is_column_constant(self) -> bool:
        return bool(np.all(self.entries == self.entries[0]))

    def with_row(self, i: int, beta: Sequence[float]) -> "HoldingMatrix":
        """Gamma^{-i}(beta): row i replaced by beta"""
        entries = self.entries.copy()
        entries[i] = np.asarray(beta, dtype=float)
        return HoldingMatrix(entries)


@dataclass(frozen=True)
class GameCoefficients:
    B: np.ndarray
    Sigma: np.ndarray
    method: str


# Coefficient algebra

def holding_profile(model: CoefficientModel, t: float, states: Sequence[float],
                    tol: float = SolverConfig.THRESHOLD_TOL) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """(pi, b, sigma, c) at the given player states under the empirical law"""
    x = np.asarray(states, dtype=float).ravel()
    if x.size == 0:
        raise ModelAssumptionError("the game needs at least one player")
    b = np.asarray(eval_b(model, t, x), dtype=float)
    sigma = np.asarray(eval_sigma(model, t, x), dtype=float)
    c = solve_c_empirical(b, np.full(x.size, 1.0 / x.size), tol).c
    return optimal_holding(b, c).astype(float), b, sigma, c


def mfg_induced_strategy(model: CoefficientModel, t: float, states: Sequence[float],
                         tol: float = SolverConfig.THRESHOLD_TOL) -> HoldingMatrix:
    """pi^{i,j} = 1_{b(t, x^j, m^N) + c(t, m^N) >= 0}, identical across rows"""
    pi, _, _, _ = holding_profile(model, t, states, tol)
    return HoldingMatrix.from_profile(pi)


def interaction_matrix(gamma: HoldingMatrix) -> np.ndarray:
    n = gamma.n
    g = gamma.entries
    m = -g / n
    m[np.diag_indices(n)] += 1.0 + g.sum(axis=0) / n
    return m


def _check_vectors(n: int, b_vec, sigma_vec) -> Tuple[np.ndarray, np.ndarray]:
    b = np.asarray(b_vec, dtype=float).ravel()
    sigma = np.asarray(sigma_vec, dtype=float).ravel()
    if b.size != n or sigma.size != n:
        raise ModelAssumptionError(f"expected drift and volatility vectors of length {n}, got {b.size} and {sigma.size}")
    return b, sigma


def game_coefficients_solve(gamma: HoldingMatrix, b_vec, sigma_vec) -> GameCoefficients:
    """Dense LU solve of M(Gamma) [B | Sigma] = [b | diag(sigma)]"""
    n = gamma.n
    b, sigma = _check_vectors(n, b_vec, sigma_vec)
    m = interaction_matrix(gamma)

    off_diagonal = np.abs(m).sum(axis=1) - np.abs(np.diag(m))
    if np.any(np.diag(m) - off_diagonal <= 0.0):
        raise CoefficientError("interaction matrix lost strict diagonal dominance")
    try:
        solution = linalg.solve(m, np.column_stack((b, np.diag(sigma))), check_finite=True)
    except linalg.LinAlgError as e:
        raise CoefficientError(f"singular interaction matrix: {e}") from e
    return GameCoefficients(solution[:, 0], solution[:, 1:], LINEAR_SOLVE)


def _closed_form_weights(pi: np.ndarray) -> np.ndarray:
    n = pi.shape[-1]
    ratio = pi / (1.0 + pi)
    return ratio / (1.0 - np.sum(ratio, axis=-1, keepdims=True) / n)


def closed_form_apply(pi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """M(Pi)^{-1} v for a column-constant profile pi, in O(N)"""
    n = pi.shape[-1]
    a = _closed_form_weights(pi)
    return (v + np.sum(a * v, axis=-1, keepdims=True) / n) / (1.0 + pi)


def game_coefficients_closed_form(pi_vec: Sequence[float], b_vec, sigma_vec, check: bool = False,
                                  tol: float = SolverConfig.COEFFICIENT_CHECK_TOL) -> GameCoefficients:
    """
    B and Sigma from the explicit inverse of M(Pi).

    Sigma^{i,j} = [sigma_i 1_{i=j} + A^j sigma_j / N] / (1 + pi^i). With
    check=True the result is compared against the dense solve.
    """
    pi = np.asarray(pi_vec, dtype=float).ravel()
    n = pi.size
    b, sigma = _check_vectors(n, b_vec, sigma_vec)
    a = _closed_form_weights(pi)

    B = closed_form_apply(pi, b)
    Sigma = (np.diag(sigma) + (a * sigma)[None, :] / n) / (1.0 + pi)[:, None]
    coefficients = GameCoefficients(B, Sigma, CLOSED_FORM)

    if check:
        reference = game_coefficients_solve(HoldingMatrix.from_profile(pi), b, sigma)
        discrepancy = coefficient_discrepancy(coefficients, reference)
        if discrepancy > tol:
            raise CoefficientError(f"closed form differs from the dense solve by {discrepancy:.3e}")
    return coefficients


def coefficient_discrepancy(first: GameCoefficients, second: GameCoefficients) -> float:
    """Max relative discrepancy of drift and diffusion"""
    drift_scale = max(1.0, float(np.max(np.abs(second.B))))
    vol_scale = max(1.0, float(np.max(np.abs(second.Sigma))))
    return max(
        float(np.max(np.abs(first.B - second.B))) / drift_scale,
        float(np.max(np.abs(first.Sigma - second.Sigma))) / vol_scale,
    )


def defining_equation_residuals(gamma: HoldingMatrix, coeffs: GameCoefficients, b_vec, sigma_vec) -> Tuple[float, float]:
    """Max absolute residuals of the drift and volatility defining equations"""
    n = gamma.n
    b, sigma = _check_vectors(n, b_vec, sigma_vec)
    g = gamma.entries
    held_by = g.sum(axis=0)

    drift = coeffs.B - (g @ coeffs.B / n - held_by * coeffs.B / n + b)
    vol = coeffs.Sigma - (g @ coeffs.Sigma / n - held_by[:, None] * coeffs.Sigma / n + np.diag(sigma))
    return float(np.max(np.abs(drift))), float(np.max(np.abs(vol)))


def apply_inverse(pi: np.ndarray, i: int, beta: np.ndarray, v: np.ndarray) -> np.ndarray:
    """
    M(Pi^{-i}(beta))^{-1} v in O(N), Pi column-constant with profile pi.

    With r^j = 1 + (N-1) pi^j / N and a^{i,j} = (pi^j + beta^j pi^i / (N r^i)) / (r^j + beta^j / N):

        A     = (1/N) sum_{j != i} a^{i,j} (v^j + pi^i v^i / (N r^i)) / (1 - (1/N) sum_{j != i} a^{i,j})
        y^k   = (A + pi^i v^i / (N r^i) + v^k) / (r^k + beta^k / N),   k != i
        y^i   = ((1/N) sum_{j != i} beta^j y^j + v^i) / r^i
    """
    pi = np.asarray(pi, dtype=float)
    beta = np.asarray(beta, dtype=float)
    v = np.asarray(v, dtype=float)
    n = pi.size

    r = 1.0 + (n - 1) * pi / n
    denom = r + beta / n
    own = pi[i] / r[i]
    shift = own * v[i] / n

    a = (pi + beta * own / n) / denom
    a[i] = 0.0
    big_a = (np.sum(a * (v + shift)) / n) / (1.0 - np.sum(a) / n)

    y = (big_a + shift + v) / denom
    others = beta.copy()
    others[i] = 0.0
    y[i] = (np.sum(others * y) / n + v[i]) / r[i]
    return y


def deviated_coefficients(gamma: HoldingMatrix, i: int, beta: Sequence[float], b_vec, sigma_vec) -> GameCoefficients:
    """Coefficients under Gamma^{-i}(beta) by the dense solve"""
    return game_coefficients_solve(gamma.with_row(i, beta), b_vec, sigma_vec)


def deviated_coefficients_closed_form(pi: Sequence[float], i: int, beta: Sequence[float], b_vec, sigma_vec) -> GameCoefficients:
    """Coefficients under Pi^{-i}(beta) by the explicit inverse, column by column for Sigma"""
    pi = np.asarray(pi, dtype=float).ravel()
    beta = np.asarray(beta, dtype=float).ravel()
    b, sigma = _check_vectors(pi.size, b_vec, sigma_vec)

    B = apply_inverse(pi, i, beta, b)
    columns = []
    for q in range(pi.size):
        unit = np.zeros(pi.size)
        unit[q] = sigma[q]
        columns.append(apply_inverse(pi, i, beta, unit))
    return GameCoefficients(B, np.column_stack(columns), CLOSED_FORM)


# Simulation

@dataclass(frozen=True)
class NPlayerPathRecord:
    """States, holding profiles and Brownian increments of one N-player run"""
    times: np.ndarray
    states: np.ndarray
    pi: np.ndarray
    increments: np.ndarray
    seed: int
    model: CoefficientModel
    threshold_tol: float

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass(frozen=True)
class NPlayerRun:
    ensemble: ParticleEnsemble
    record: NPlayerPathRecord

    def holding_trace(self, step: int) -> HoldingMatrix:
        return HoldingMatrix.from_profile(self.record.pi[step])


def _closed_form_step(pi: np.ndarray, b: np.ndarray, sigma: np.ndarray, noise: np.ndarray,
                      step: int) -> Tuple[np.ndarray, np.ndarray]:
    drift = closed_form_apply(pi, b)
    diffusion = closed_form_apply(pi, sigma * noise)
    if np.all(np.isfinite(drift)) and np.all(np.isfinite(diffusion)):
        return drift, diffusion

    logger.warning("Closed-form coefficients non-finite at step %d, falling back to the dense solve", step)
    coefficients = game_coefficients_solve(HoldingMatrix.from_profile(pi), b, sigma)
    return coefficients.B, coefficients.Sigma @ noise


def simulate_nplayer(cfg: SimConfig) -> NPlayerRun:
    """
    Euler scheme of the N-player system under the mean-field induced strategy.

    Pi is frozen over each step. The diffusion term Sigma xi is evaluated as
    M(Pi)^{-1}(sigma * xi), so a run with no holding reproduces the provisions
    paths exactly.
    """
    n = cfg.n_particles
    times = cfg.times
    dt = cfg.dt
    sqrt_dt = math.sqrt(dt)

    paths = np.empty((n, cfg.n_steps + 1))
    pi_trace = np.empty((cfg.n_steps, n), dtype=np.int8)
    increments = np.empty((cfg.n_steps, n))
    thresholds = np.empty(cfg.n_steps)
    held = np.empty(cfg.n_steps)

    x = initial_states(cfg.initial, n, cfg.seed)
    paths[:, 0] = x
    with ParticleStepper(n, cfg.threads) as stepper:
        for k in range(cfg.n_steps):
            pi, b, sigma, thresholds[k] = holding_profile(cfg.model, times[k], x, cfg.threshold_tol)
            noise = step_normals(cfg.seed, k, n)
            drift, diffusion = _closed_form_step(pi, b, sigma, noise, k)

            x = stepper.advance(x, drift, diffusion, None, dt, sqrt_dt)
            if not np.all(np.isfinite(x)):
                raise SimulationError("N-player simulation produced a non-finite state", step=k + 1)
            paths[:, k + 1] = x
            pi_trace[k] = pi
            increments[k] = noise * sqrt_dt
            held[k] = float(np.mean(pi))

    logger.info("Simulated %d players over %d steps (T=%g)", n, cfg.n_steps, cfg.horizon)
    ensemble = ParticleEnsemble("nplayer", times, paths, thresholds, held, cfg.seed, cfg.echo())
    record = NPlayerPathRecord(times, ensemble.paths, pi_trace, increments, cfg.seed, cfg.model, cfg.threshold_tol)
    return NPlayerRun(ensemble, record)


BetaLike = Union[DeviationStrategy, Sequence[float], np.ndarray]


def _beta_for(beta: BetaLike, pi: np.ndarray, states: np.ndarray) -> np.ndarray:
    if isinstance(beta, DeviationStrategy):
        return beta.beta(pi, states)
    values = np.asarray(beta, dtype=float)
    if values.shape != pi.shape or np.any((values < 0.0) | (values > 1.0)):
        raise ModelAssumptionError("deviation row must have one value in [0, 1] per player")
    return values


def _girsanov_intensity(pi: np.ndarray, i: int, beta: np.ndarray, b: np.ndarray, sigma: np.ndarray,
                        base_drift_i: float) -> float:
    unit = np.zeros(pi.size)
    unit[i] = sigma[i]
    deviated_vol = apply_inverse(pi, i, beta, unit)[i]
    return (apply_inverse(pi, i, beta, b)[i] - base_drift_i) / deviated_vol


def girsanov_weight(path_record: NPlayerPathRecord, i: int, beta: BetaLike, model: Optional[CoefficientModel] = None) -> float:
    """
    Discrete density Z_T = exp(sum psi dW^i - 1/2 psi^2 dt) along a stored path.

    psi = (B^i(Pi^{-i}(beta)) - B^i(Pi)) / Sigma^{i,i}(Pi^{-i}(beta)) at the
    recorded states. A null deviation gives exactly 1. An overflowing
    exponent gives inf; callers decide whether to exclude it.
    """
    model = model or path_record.model
    dt = path_record.dt
    log_z = 0.0
    for k in range(path_record.pi.shape[0]):
        x = path_record.states[:, k]
        pi = path_record.pi[k].astype(float)
        b = np.asarray(eval_b(model, path_record.times[k], x), dtype=float)
        sigma = np.asarray(eval_sigma(model, path_record.times[k], x), dtype=float)
        base_drift_i = apply_inverse(pi, i, pi, b)[i]
        psi = _girsanov_intensity(pi, i, _beta_for(beta, pi, x), b, sigma, base_drift_i)
        log_z += psi * path_record.increments[k, i] - 0.5 * psi ** 2 * dt
    return float(densities_from_log(np.array(log_z)))


def densities_from_log(log_z: np.ndarray) -> np.ndarray:
    """exp of log-densities; overflow maps to inf instead of raising"""
    with np.errstate(over="ignore"):
        return np.exp(np.asarray(log_z, dtype=float))


# epsilon-Nash gap

@dataclass
class NashGapReport:
    table: pd.DataFrame
    diagnostics: Dict[str, int] = field(default_factory=dict)

    COLUMNS = ("N", "deviation_name", "J_base", "J_dev", "gain", "se_gain", "eps_hat",
               "n_replications", "seed", "n_excluded")

    @property
    def eps_hat(self) -> Dict[int, float]:
        return {int(n): float(group["gain"].max()) for n, group in self.table.groupby("N")}

    @classmethod
    def merge(cls, reports: Sequence["NashGapReport"]) -> "NashGapReport":
        table = pd.concat([r.table for r in reports], ignore_index=True)
        diagnostics: Dict[str, int] = {}
        for r in reports:
            for key, value in r.diagnostics.items():
                diagnostics[key] = diagnostics.get(key, 0) + value
        return cls(table, diagnostics)


def _identity(x: np.ndarray) -> np.ndarray:
    return x


def deviation_gain(u_base: np.ndarray, u_dev: np.ndarray, z: np.ndarray) -> Tuple[float, float, float, int]:
    """
    (J_base, J_dev, se of the paired gain, excluded count) from per-replication
    utilities and Girsanov weights. Replications whose weighted deviated
    utility is not finite are left out of J_dev and the standard error.
    """
    u_base = np.asarray(u_base, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        weighted = np.asarray(z, dtype=float) * np.asarray(u_dev, dtype=float)
    finite = np.isfinite(weighted)
    n_excluded = int(weighted.size - finite.sum())

    diff = weighted[finite] - u_base[finite]
    j_base = float(np.mean(u_base))
    j_dev = float(np.mean(weighted[finite])) if finite.any() else math.nan
    se = float(np.std(diff, ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else math.nan
    return j_base, j_dev, se, n_excluded


def _nash_replication(cfg: SimConfig, deviations: Sequence[DeviationStrategy], replication: int,
                      player: int) -> Tuple[float, np.ndarray, np.ndarray]:
    """Terminal base state of the player, deviated terminal states and log-densities per deviation"""
    n = cfg.n_particles
    dt = cfg.dt
    sqrt_dt = math.sqrt(dt)
    i = player

    x = initial_states(cfg.initial, n, cfg.seed, replication)
    ys = [x.copy() for _ in deviations]
    log_z = np.zeros(len(deviations))

    for k in range(cfg.n_steps):
        t = cfg.times[k]
        pi, b, sigma, _ = holding_profile(cfg.model, t, x, cfg.threshold_tol)
        noise = step_normals(cfg.seed, k, n, replication)

        drift = apply_inverse(pi, i, pi, b)
        diffusion = apply_inverse(pi, i, pi, sigma * noise)

        for d, deviation in enumerate(deviations):
            beta = deviation.beta(pi, x)
            psi = _girsanov_intensity(pi, i, beta, b, sigma, drift[i])

            y = ys[d]
            b_y = np.asarray(eval_b(cfg.model, t, y), dtype=float)
            sigma_y = np.asarray(eval_sigma(cfg.model, t, y), dtype=float)
            unit = np.zeros(n)
            unit[i] = sigma_y[i]
            correction = apply_inverse(pi, i, beta, unit)
            ys[d] = (y + apply_inverse(pi, i, beta, b_y) * dt
                     + apply_inverse(pi, i, beta, sigma_y * noise) * sqrt_dt
                     - correction * (psi * dt))
            log_z[d] += psi * noise[i] * sqrt_dt - 0.5 * psi ** 2 * dt

        x = x + drift * dt + diffusion * sqrt_dt
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"nash-gap replication {replication} produced a non-finite state", step=k + 1)

    return float(x[i]), np.array([y[i] for y in ys]), log_z


def nash_gap_estimate(
    cfg: SimConfig,
    deviations: Sequence[DeviationStrategy],
    replications: int = SimulationDefaults.REPLICATIONS,
    utility: Optional[Utility] = None,
    average_over_players: bool = False,
) -> NashGapReport:
    """
    Monte-Carlo gains of unilateral deviations from the induced strategy.

    Player 1 deviates by default; with average_over_players the deviating
    player rotates with the replication index. Each replication uses its own
    initial and noise substreams, so the report does not depend on threads.
    """
    if not deviations:
        raise ConfigError("nash-gap needs at least one deviation")
    if replications < SimulationDefaults.MIN_REPLICATIONS:
        raise ConfigError(
            f"nash-gap needs at least {SimulationDefaults.MIN_REPLICATIONS} replications, got {replications}"
        )
    if not cfg.model.is_bounded:
        raise ModelAssumptionError(
            "nash-gap requires bounded coefficients; set drift_bound on the model"
        )
    utility = utility or _identity
    n = cfg.n_particles

    def run(replication: int):
        player = replication % n if average_over_players else 0
        return _nash_replication(cfg, deviations, replication, player)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run, range(replications)))
    else:
        results = [run(r) for r in range(replications)]

    u_base = np.asarray(utility(np.array([r[0] for r in results])), dtype=float)
    u_dev = np.asarray(utility(np.array([r[1] for r in results])), dtype=float)
    z = densities_from_log(np.array([r[2] for r in results]))

    rows = []
    excluded_total = 0
    for d, deviation in enumerate(deviations):
        j_base, j_dev, se, n_excluded = deviation_gain(u_base, u_dev[:, d], z[:, d])
        excluded_total += n_excluded
        if n_excluded:
            logger.warning("N=%d %s: excluded %d non-finite weights", n, deviation.name, n_excluded)
        rows.append({
            "N": n,
            "deviation_name": deviation.name,
            "J_base": j_base,
            "J_dev": j_dev,
            "gain": j_dev - j_base,
            "se_gain": se,
            "n_replications": replications,
            "seed": cfg.seed,
            "n_excluded": n_excluded,
        })

    table = pd.DataFrame(rows)
    table["eps_hat"] = table["gain"].max()
    table = table[list(NashGapReport.COLUMNS)]
    logger.info("N=%d: eps_hat=%.6g over %d replications", n, float(table["eps_hat"].iloc[0]), replications)
    return NashGapReport(table, {"excluded_weights": excluded_total})
