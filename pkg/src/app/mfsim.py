"""
Mean-Field Particle Simulation
==============================

Euler-Maruyama particle schemes for:
1. The equilibrium McKean-Vlasov dynamics dX = B(t, X, m_t) dt + Sigma(t, X, m_t) dW,
   with m_t the empirical law of the particles and c(t, m_t) solved every step
2. The provisions baseline dP = b dt + sigma dW (no holding)
3. The one-step illustration from the OU invariant law with Delta = T

Noise is drawn from counter-based Philox streams keyed by (kind, replication,
step), so every simulator consumes the same normal variate for a given
(particle, step) and results do not depend on the worker-thread count.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import SimulationDefaults, SolverConfig
from deviations import DeviationStrategy
from equilibrium import equilibrium_drift, equilibrium_vol, fields_from_values
from errors import ConfigError, SimulationError
from measures import (
    GaussianSpec,
    Measure1D,
    default_grid,
    empirical_from_samples,
    gaussian_quantile_measure,
    kde_density,
    sample_initial,
    silverman_bandwidth,
    wasserstein2,
)
from models import CoefficientModel, OUVariant, eval_b, eval_sigma, growth_bounds, model_to_dict
from threshold import solve_c_gaussian_ou

logger = logging.getLogger(__name__)

# Philox stream kinds
NOISE_STREAM = 0
INITIAL_STREAM = 1
SEED_STREAM = 2

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
QUANTILE_COLUMNS = ("q05", "q25", "median", "q75", "q95")

ENVELOPE_SLACK = 1.5

InitialLaw = Union[GaussianSpec, Measure1D]
Utility = Callable[[np.ndarray], np.ndarray]


def stream_generator(seed: int, kind: int, replication: int = 0, step: int = 0) -> np.random.Generator:
    """Independent Philox generator for one (kind, replication, step) cell"""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(kind, replication, step)))
    )


def step_normals(seed: int, step: int, n: int, replication: int = 0) -> np.ndarray:
    """Standard normals driving particles 0..n-1 over Euler step `step`"""
    return stream_generator(seed, NOISE_STREAM, replication, step).standard_normal(n)


def initial_states(initial: InitialLaw, n: int, seed: int, replication: int = 0) -> np.ndarray:
    return sample_initial(initial, n, stream_generator(seed, INITIAL_STREAM, replication))


def derived_seed(seed: int, index: int) -> int:
    """Fresh 63-bit seed for the index-th run of a multi-run job"""
    state = np.random.SeedSequence(seed, spawn_key=(SEED_STREAM, index)).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))


def describe_initial(initial: InitialLaw) -> Dict[str, Any]:
    if isinstance(initial, GaussianSpec):
        return {"kind": "gaussian", "mean": initial.mean, "variance": initial.variance}
    return {"kind": "atomic", "atoms": initial.atoms.tolist(), "weights": initial.weights.tolist()}


@dataclass(frozen=True)
class SimConfig:
    n_particles: int
    n_steps: int
    horizon: float
    seed: int
    model: CoefficientModel
    initial: InitialLaw
    threshold_tol: float = SolverConfig.THRESHOLD_TOL
    threads: int = SimulationDefaults.THREADS

    def __post_init__(self):
        if self.n_particles < 1:
            raise ConfigError(f"n_particles must be at least 1, got {self.n_particles}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be at least 1, got {self.n_steps}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not self.threshold_tol > 0:
            raise ConfigError(f"threshold_tol must be positive, got {self.threshold_tol}")
        if self.threads < 1:
            raise ConfigError(f"threads must be at least 1, got {self.threads}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def echo(self) -> Dict[str, Any]:
        return {
            "n_particles": self.n_particles,
            "n_steps": self.n_steps,
            "horizon": self.horizon,
            "seed": self.seed,
            "model": model_to_dict(self.model),
            "initial": describe_initial(self.initial),
            "threshold_tol": self.threshold_tol,
        }


@dataclass(frozen=True)
class ParticleEnsemble:
    kind: str
    times: np.ndarray
    paths: np.ndarray
    thresholds: np.ndarray
    held_fraction: np.ndarray
    seed: int
    config: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("times", "paths", "thresholds", "held_fraction"):
            getattr(self, name).setflags(write=False)

    @property
    def n_particles(self) -> int:
        return int(self.paths.shape[0])

    @property
    def terminal(self) -> np.ndarray:
        return self.paths[:, -1]


def _chunk_slices(n: int, threads: int) -> List[slice]:
    bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


class ParticleStepper:
    """
    Euler update X + drift dt + (vol xi) sqrt(dt), applied in contiguous
    particle chunks on a thread pool. Each element is computed by the same
    expression whatever the chunking.
    """

    def __init__(self, n: int, threads: int = 1):
        self.slices = _chunk_slices(n, threads)
        self.pool: Optional[ThreadPoolExecutor] = None
        if len(self.slices) > 1:
            self.pool = ThreadPoolExecutor(max_workers=len(self.slices))

    def __enter__(self) -> "ParticleStepper":
        return self

    def __exit__(self, *exc):
        if self.pool is not None:
            self.pool.shutdown(wait=True)

    def advance(self, x: np.ndarray, drift: np.ndarray, vol: np.ndarray, noise: Optional[np.ndarray],
                dt: float, sqrt_dt: float) -> np.ndarray:
        """One Euler step; with noise None, vol already holds the diffusion increment per unit sqrt(dt)"""
        out = np.empty_like(x)

        def work(sl: slice):
            diffusion = vol[sl] if noise is None else vol[sl] * noise[sl]
            out[sl] = x[sl] + drift[sl] * dt + diffusion * sqrt_dt

        if self.pool is None:
            work(slice(None))
        else:
            list(self.pool.map(work, self.slices))
        return out


CoefficientStep = Callable[[float, np.ndarray], Tuple[np.ndarray, np.ndarray, float, float]]


def _run_particles(cfg: SimConfig, kind: str, coefficients: CoefficientStep) -> ParticleEnsemble:
    n = cfg.n_particles
    times = cfg.times
    dt = cfg.dt
    sqrt_dt = math.sqrt(dt)

    paths = np.empty((n, cfg.n_steps + 1))
    thresholds = np.empty(cfg.n_steps)
    held = np.empty(cfg.n_steps)
    x = initial_states(cfg.initial, n, cfg.seed)
    paths[:, 0] = x

    with ParticleStepper(n, cfg.threads) as stepper:
        for k in range(cfg.n_steps):
            drift, vol, thresholds[k], held[k] = coefficients(times[k], x)
            noise = step_normals(cfg.seed, k, n)
            x = stepper.advance(x, drift, vol, noise, dt, sqrt_dt)
            if not np.all(np.isfinite(x)):
                raise SimulationError(f"{kind} simulation produced a non-finite state", step=k + 1)
            paths[:, k + 1] = x

    logger.info("Simulated %d %s particles over %d steps (T=%g)", n, kind, cfg.n_steps, cfg.horizon)
    return ParticleEnsemble(kind, times, paths, thresholds, held, cfg.seed, cfg.echo())


def simulate_equilibrium_mckv(cfg: SimConfig) -> ParticleEnsemble:
    """Interacting-particle scheme with c(t, m) solved from the full empirical law each step"""
    weights = np.full(cfg.n_particles, 1.0 / cfg.n_particles)

    def coefficients(t: float, x: np.ndarray):
        b = np.asarray(eval_b(cfg.model, t, x), dtype=float)
        sigma = np.asarray(eval_sigma(cfg.model, t, x), dtype=float)
        fields = fields_from_values(b, sigma, weights, cfg.threshold_tol)
        return fields.B_vals, fields.Sigma_vals, fields.c, float(np.mean(fields.holding))

    return _run_particles(cfg, "mckv", coefficients)


def simulate_provisions(cfg: SimConfig) -> ParticleEnsemble:
    """Independent provisions paths on the same noise streams as the equilibrium scheme"""

    def coefficients(t: float, x: np.ndarray):
        b = np.asarray(eval_b(cfg.model, t, x), dtype=float)
        sigma = np.asarray(eval_sigma(cfg.model, t, x), dtype=float)
        return b, sigma, math.nan, 0.0

    return _run_particles(cfg, "provisions", coefficients)


# One-step illustration

@dataclass(frozen=True)
class OneStepResult:
    params: Dict[str, Any]
    c: float
    x0: np.ndarray
    p_T: np.ndarray
    x_T: np.ndarray
    summary: pd.DataFrame
    densities: Optional[pd.DataFrame]


def _sample_variance(values: np.ndarray) -> float:
    return float(np.var(values, ddof=1)) if values.size > 1 else 0.0


def onestep_illustration(
    theta: float,
    mbar: float,
    sigbar: float,
    delta: float,
    n_samples: int,
    seed: int,
    grid_points: int = SimulationDefaults.GRID_POINTS,
    with_densities: bool = True,
    tol: float = SolverConfig.THRESHOLD_TOL,
) -> OneStepResult:
    """
    One Euler step of length Delta from the OU invariant law N(mbar, sigbar^2 / (2 theta)).

    The provisions sample P_T and the equilibrium sample X*_T share the same
    (X_0, Z) pairs; c is solved from the Gaussian closed form at t = 0.
    """
    OUVariant(theta, mbar, sigbar)
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    if n_samples < 2:
        raise ConfigError(f"n_samples must be at least 2, got {n_samples}")

    invariant = GaussianSpec(mbar, sigbar ** 2 / (2.0 * theta))
    c = solve_c_gaussian_ou(theta, mbar, invariant.mean, invariant.variance, tol).c

    x0 = initial_states(invariant, n_samples, seed)
    z = step_normals(seed, 0, n_samples)
    sqrt_delta = math.sqrt(delta)

    b = theta * (mbar - x0)
    p_T = x0 + b * delta + (sigbar * z) * sqrt_delta
    x_T = x0 + equilibrium_drift(b, c) * delta + (equilibrium_vol(b, c, sigbar) * z) * sqrt_delta

    diff = x_T - p_T
    summary = pd.DataFrame([{
        "theta": theta,
        "mbar": mbar,
        "sigbar": sigbar,
        "delta": delta,
        "n_samples": n_samples,
        "seed": seed,
        "c": c,
        "mean_P_T": float(np.mean(p_T)),
        "var_P_T": _sample_variance(p_T),
        "mean_X_T": float(np.mean(x_T)),
        "var_X_T": _sample_variance(x_T),
        "mean_diff": float(np.mean(diff)),
        "se_mean_diff": math.sqrt(_sample_variance(diff) / n_samples),
        "held_fraction": float(np.mean(b + c >= 0.0)),
    }])

    densities = None
    if with_densities:
        m_p = empirical_from_samples(p_T)
        m_x = empirical_from_samples(x_T)
        h_p, h_x = silverman_bandwidth(m_p), silverman_bandwidth(m_x)
        grid = default_grid(empirical_from_samples(np.concatenate((p_T, x_T))), max(h_p, h_x),
                            grid_points, SimulationDefaults.GRID_PADDING_BANDWIDTHS)
        densities = pd.DataFrame({
            "x": grid,
            "density_P_T": kde_density(m_p, h_p, grid),
            "density_X_T": kde_density(m_x, h_x, grid),
        })

    params = {"theta": theta, "mbar": mbar, "sigbar": sigbar, "delta": delta,
              "n_samples": n_samples, "seed": seed}
    return OneStepResult(params, c, x0, p_T, x_T, summary, densities)


def onestep_sweep(
    thetas: Sequence[float],
    mbars: Sequence[float],
    sigbars: Sequence[float],
    delta: float,
    n_samples: int,
    seed: int,
    threads: int = 1,
) -> pd.DataFrame:
    """One-step summaries over a (theta, mbar, sigbar) grid, all on common random numbers"""
    grid = [(th, mb, sb) for th in thetas for mb in mbars for sb in sigbars]

    def run(point):
        th, mb, sb = point
        return onestep_illustration(th, mb, sb, delta, n_samples, seed, with_densities=False).summary

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, grid))
    else:
        rows = [run(point) for point in grid]
    logger.info("One-step sweep over %d parameter points", len(grid))
    return pd.concat(rows, ignore_index=True)


# Summaries and diagnostics

@dataclass(frozen=True)
class EnsembleSummary:
    per_time: pd.DataFrame
    terminal_density: pd.DataFrame
    bandwidth: float


def summarize_ensemble(
    e: ParticleEnsemble,
    grid: Optional[Sequence[float]] = None,
    bandwidth: Optional[float] = None,
    grid_points: int = SimulationDefaults.GRID_POINTS,
) -> EnsembleSummary:
    """Per-time mean, variance and midpoint quantiles; Gaussian KDE of the terminal law"""
    frame = pd.DataFrame(e.paths)
    ddof = 1 if e.n_particles > 1 else 0
    per_time = pd.DataFrame({
        "t": e.times,
        "mean": frame.mean(axis=0).to_numpy(),
        "variance": frame.var(axis=0, ddof=ddof).to_numpy(),
    })
    quantiles = frame.quantile(list(QUANTILES), interpolation="midpoint").T.to_numpy()
    for j, name in enumerate(QUANTILE_COLUMNS):
        per_time[name] = quantiles[:, j]

    # step k coefficients apply on [t_k, t_k+1)
    per_time["c"] = np.append(e.thresholds, np.nan)
    per_time["held_fraction"] = np.append(e.held_fraction, np.nan)

    terminal = empirical_from_samples(e.terminal)
    h = silverman_bandwidth(terminal) if bandwidth is None else bandwidth
    if grid is None:
        grid = default_grid(terminal, h, grid_points, SimulationDefaults.GRID_PADDING_BANDWIDTHS)
    grid = np.asarray(grid, dtype=float)
    density = pd.DataFrame({"x": grid, "density": kde_density(terminal, h, grid)})
    return EnsembleSummary(per_time, density, h)


def cauchy_convergence_diagnostic(
    model: CoefficientModel,
    initial: InitialLaw,
    horizon: float,
    n_steps: int,
    seed: int,
    n_list: Sequence[int],
    fresh_seeds: bool = True,
    reference: Optional[GaussianSpec] = None,
    threads: int = 1,
    tol: float = SolverConfig.THRESHOLD_TOL,
) -> pd.DataFrame:
    """
    Terminal-law W2 distances between equilibrium runs of successive sizes.

    Each run gets its own derived seed unless fresh_seeds is False. With a
    Gaussian reference the distance to its quantile discretization is added.
    """
    n_list = [int(n) for n in n_list]
    if not n_list:
        raise ConfigError("convergence diagnostic needs at least one particle count")
    if any(later < earlier for earlier, later in zip(n_list, n_list[1:])):
        raise ConfigError(f"particle counts must be nondecreasing, got {n_list}")

    rows = []
    previous: Optional[Measure1D] = None
    for index, n in enumerate(n_list):
        run_seed = derived_seed(seed, index) if fresh_seeds else seed
        cfg = SimConfig(n, n_steps, horizon, run_seed, model, initial, tol, threads)
        terminal = empirical_from_samples(simulate_equilibrium_mckv(cfg).terminal)
        row = {
            "N": n,
            "seed": run_seed,
            "w2_previous": math.nan if previous is None else wasserstein2(previous, terminal),
            "w2_reference": math.nan,
        }
        if reference is not None:
            row["w2_reference"] = wasserstein2(terminal, gaussian_quantile_measure(reference, max(n, 1000)))
        rows.append(row)
        logger.info("Convergence run N=%d: W2 to previous %.6g", n, row["w2_previous"])
        previous = terminal
    return pd.DataFrame(rows)


def moment_envelope(ensemble: ParticleEnsemble, model: CoefficientModel,
                    slack: float = ENVELOPE_SLACK) -> pd.DataFrame:
    """Sample second moments against exp(K t)(1 + E|X_0|^2), K = 1 + 4g + 16g^2 + s^2"""
    g, s = growth_bounds(model)
    k = 1.0 + 4.0 * g + 16.0 * g ** 2 + s ** 2
    second = np.mean(ensemble.paths ** 2, axis=0)
    envelope = slack * np.exp(k * ensemble.times) * (1.0 + second[0])
    return pd.DataFrame({
        "t": ensemble.times,
        "second_moment": second,
        "envelope": envelope,
        "within": second <= envelope,
    })


@dataclass(frozen=True)
class DeviationValue:
    deviation_name: str
    J_base: float
    J_dev: float
    gain: float
    se_gain: float
    n_excluded: int


def _identity(x: np.ndarray) -> np.ndarray:
    return x


def representative_deviation_value(
    cfg: SimConfig,
    deviation: DeviationStrategy,
    utility: Optional[Utility] = None,
    ensemble: Optional[ParticleEnsemble] = None,
) -> DeviationValue:
    """
    Reweighted value of a representative agent deviating from pi* = 1_{B >= 0}.

    Along the equilibrium particles, psi(x) = sum_j w_j (beta - pi)_j B_j / sigma(x),
    and Z_T = exp(sum psi sqrt(dt) xi - 1/2 psi^2 dt) with xi the particle's own
    step noise. Gains are nonpositive up to Monte-Carlo error.
    """
    utility = utility or _identity
    if ensemble is None:
        ensemble = simulate_equilibrium_mckv(cfg)

    n = ensemble.n_particles
    weights = np.full(n, 1.0 / n)
    dt = cfg.dt
    sqrt_dt = math.sqrt(dt)
    log_z = np.zeros(n)

    for k in range(cfg.n_steps):
        t = ensemble.times[k]
        x = ensemble.paths[:, k]
        b = np.asarray(eval_b(cfg.model, t, x), dtype=float)
        sigma = np.asarray(eval_sigma(cfg.model, t, x), dtype=float)
        fields = fields_from_values(b, sigma, weights, cfg.threshold_tol)
        pi = fields.holding.astype(float)
        shift = float(np.sum(weights * (deviation.beta(pi, x) - pi) * fields.B_vals))
        psi = shift / sigma
        log_z += psi * sqrt_dt * step_normals(cfg.seed, k, n) - 0.5 * psi ** 2 * dt

    z = np.exp(log_z)
    u = np.asarray(utility(ensemble.terminal), dtype=float)
    finite = np.isfinite(z * u)
    n_excluded = int(n - finite.sum())
    if n_excluded:
        logger.warning("Excluded %d non-finite likelihood weights for deviation %s", n_excluded, deviation.name)

    diff = z[finite] * u[finite] - u[finite]
    j_base = float(np.mean(u))
    j_dev = float(np.mean(z[finite] * u[finite]))
    return DeviationValue(
        deviation_name=deviation.name,
        J_base=j_base,
        J_dev=j_dev,
        gain=j_dev - j_base,
        se_gain=math.sqrt(_sample_variance(diff) / max(diff.size, 1)),
        n_excluded=n_excluded,
    )
