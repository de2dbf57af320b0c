"""
Mutual Holding Laboratory - Command Line Driver
===============================================

Subcommands:
- solve-threshold       threshold c for drift samples or the Gaussian/OU closed form
- equilibrium-fields    B, Sigma and holding per atom of a measure
- simulate-mfg          equilibrium McKean-Vlasov particle system
- simulate-provisions   provisions baseline on the same noise
- onestep-figures       one-step illustration from the OU invariant law
- simulate-nplayer      finite-N cross-holding system
- nash-gap              Monte-Carlo epsilon-Nash gap over a deviation family
- convergence-diag      terminal-law W2 distances across particle counts

Settings come from an optional JSON file (--config) with flat flag overrides
and are validated before anything runs. Exit codes: 0 success, 2 invalid
configuration, 3 numerical failure.

Usage:
    python src/app/cli.py solve-threshold --b "-1,1" --weights "0.5,0.5"
    python src/app/cli.py onestep-figures --theta 1 --mbar -0.5 --sigbar 1 --delta 1 --n 100000 --seed 42
"""

import argparse
import json
import logging
import sys
import time
from typing import Any, Callable, Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from rich.logging import RichHandler

from config import OutputConfig, ParameterGrid, SimulationDefaults, SolverConfig, get_sweep_grid, validate_config
from deviations import DeviationStrategy, default_deviation_family, deviation_from_dict, deviation_to_dict
from equilibrium import compute_fields, consistency_residuals, profile_for_threshold
from errors import NUMERICAL_ERRORS, VALIDATION_ERRORS, ConfigError
from measures import GaussianSpec, Measure1D, gaussian_quantile_measure
from mfsim import (
    ParticleEnsemble,
    SimConfig,
    cauchy_convergence_diagnostic,
    moment_envelope,
    onestep_illustration,
    onestep_sweep,
    simulate_equilibrium_mckv,
    simulate_provisions,
    summarize_ensemble,
)
from models import CoefficientModel, OUVariant, model_from_dict, validate_assumptions
from nplayer import NashGapReport, nash_gap_estimate, simulate_nplayer
from reporting import ResultConsole, write_csv, write_manifest
from threshold import c_upper_bound, solve_c_empirical, solve_c_gaussian_ou

logger = logging.getLogger("cli")

SUBCOMMANDS = (
    "solve-threshold",
    "equilibrium-fields",
    "simulate-mfg",
    "simulate-provisions",
    "onestep-figures",
    "simulate-nplayer",
    "nash-gap",
    "convergence-diag",
)
STOCHASTIC = {"simulate-mfg", "simulate-provisions", "onestep-figures", "simulate-nplayer",
              "nash-gap", "convergence-diag"}

# Flags whose values are comma-separated lists that may start with "-"
LIST_FLAGS = ("--b", "--weights", "--atoms", "--n-list", "--deviations")


# Run configuration

class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Block):
    kind: Literal["ou", "constant_sign", "tabulated"] = "ou"
    theta: Optional[float] = ParameterGrid.DEFAULT_OU["theta"]
    mbar: Optional[float] = ParameterGrid.DEFAULT_OU["mbar"]
    sigbar: Optional[float] = ParameterGrid.DEFAULT_OU["sigbar"]
    b0: Optional[float] = None
    sig0: Optional[float] = None
    grid: Optional[List[float]] = None
    b_values: Optional[List[float]] = None
    sigma_values: Optional[List[float]] = None
    time_dependent: bool = False
    sigma_floor: Optional[float] = None
    drift_bound: Optional[float] = None

    def build(self) -> CoefficientModel:
        return model_from_dict(self.model_dump(exclude_none=True))


class InitialBlock(_Block):
    kind: Literal["gaussian", "atomic"] = "gaussian"
    mean: Optional[float] = None
    variance: Optional[float] = None
    atoms: Optional[List[float]] = None
    weights: Optional[List[float]] = None

    def build(self, model: CoefficientModel) -> Union[GaussianSpec, Measure1D]:
        """Gaussian or atomic law; Gaussian parameters default to the OU invariant law"""
        if self.kind == "atomic":
            if not self.atoms:
                raise ConfigError("initial.atoms is required for an atomic initial law")
            weights = self.weights or [1.0 / len(self.atoms)] * len(self.atoms)
            return Measure1D(np.asarray(self.atoms), np.asarray(weights))

        mean, variance = self.mean, self.variance
        v = model.variant
        if isinstance(v, OUVariant):
            mean = v.mbar if mean is None else mean
            variance = v.sigbar ** 2 / (2.0 * v.theta) if variance is None else variance
        return GaussianSpec(0.0 if mean is None else mean, 1.0 if variance is None else variance)


class SimulationBlock(_Block):
    seed: int = Field(ge=0, lt=2 ** 64)
    n_particles: int = Field(default=SimulationDefaults.N_PARTICLES, ge=1)
    n_steps: int = Field(default=SimulationDefaults.N_STEPS, ge=1)
    horizon: float = Field(default=SimulationDefaults.HORIZON, gt=0)
    threads: int = Field(default=SimulationDefaults.THREADS, ge=1)
    threshold_tol: float = Field(default=SolverConfig.THRESHOLD_TOL, gt=0)


class GridBlock(_Block):
    points: int = Field(default=SimulationDefaults.GRID_POINTS, ge=2)
    bandwidth: Optional[float] = Field(default=None, gt=0)


class ThresholdBlock(_Block):
    b: Optional[List[float]] = None
    weights: Optional[List[float]] = None
    mu_mean: Optional[float] = None
    mu_var: Optional[float] = Field(default=None, gt=0)
    tol: float = Field(default=SolverConfig.THRESHOLD_TOL, gt=0)


class FieldsBlock(_Block):
    t: float = 0.0
    atoms: Optional[List[float]] = None
    weights: Optional[List[float]] = None
    n_atoms: int = Field(default=1000, ge=1)


class OneStepBlock(_Block):
    delta: float = Field(default=1.0, gt=0)
    n_samples: int = Field(default=100_000, ge=2)
    sweep: bool = False


class DeviationBlock(_Block):
    kind: Literal["never_hold", "always_hold", "anti_bang_bang", "custom", "null"]
    name: str = ""
    table_x: Optional[List[float]] = None
    table_beta: Optional[List[float]] = None


class NashBlock(_Block):
    n_list: List[int] = Field(default_factory=lambda: [8, 32, 128])
    replications: int = Field(default=SimulationDefaults.REPLICATIONS, ge=SimulationDefaults.MIN_REPLICATIONS)
    deviations: Optional[List[DeviationBlock]] = None
    average_over_players: bool = False

    def build_deviations(self) -> List[DeviationStrategy]:
        if not self.deviations:
            return default_deviation_family()
        return [deviation_from_dict(d.model_dump(exclude_none=True)) for d in self.deviations]


class ConvergenceBlock(_Block):
    n_list: List[int] = Field(default_factory=lambda: [500, 1000, 2000, 4000, 8000])
    fresh_seeds: bool = True
    reference_mean: Optional[float] = None
    reference_variance: Optional[float] = Field(default=None, gt=0)


class RunConfig(_Block):
    subcommand: Literal[SUBCOMMANDS]
    run_id: Optional[str] = None
    output_dir: str = OutputConfig.OUTPUT_DIR
    model: ModelBlock = Field(default_factory=ModelBlock)
    initial: InitialBlock = Field(default_factory=InitialBlock)
    simulation: Optional[SimulationBlock] = None
    grid: GridBlock = Field(default_factory=GridBlock)
    threshold: ThresholdBlock = Field(default_factory=ThresholdBlock)
    measure: FieldsBlock = Field(default_factory=FieldsBlock)
    onestep: OneStepBlock = Field(default_factory=OneStepBlock)
    nash: NashBlock = Field(default_factory=NashBlock)
    convergence: ConvergenceBlock = Field(default_factory=ConvergenceBlock)

    @property
    def seed(self) -> Optional[int]:
        return None if self.simulation is None else self.simulation.seed


# Flag name -> dotted key in RunConfig; "n" depends on the subcommand
OVERRIDES: Dict[str, str] = {
    "run_id": "run_id",
    "output_dir": "output_dir",
    "model": "model.kind",
    "theta": "model.theta",
    "mbar": "model.mbar",
    "sigbar": "model.sigbar",
    "b0": "model.b0",
    "sig0": "model.sig0",
    "sigma_floor": "model.sigma_floor",
    "drift_bound": "model.drift_bound",
    "init_mean": "initial.mean",
    "init_var": "initial.variance",
    "seed": "simulation.seed",
    "steps": "simulation.n_steps",
    "horizon": "simulation.horizon",
    "threads": "simulation.threads",
    "grid_points": "grid.points",
    "bandwidth": "grid.bandwidth",
    "b": "threshold.b",
    "mu_mean": "threshold.mu_mean",
    "mu_var": "threshold.mu_var",
    "tol": "threshold.tol",
    "t": "measure.t",
    "atoms": "measure.atoms",
    "n_atoms": "measure.n_atoms",
    "delta": "onestep.delta",
    "sweep": "onestep.sweep",
    "replications": "nash.replications",
    "average_over_players": "nash.average_over_players",
    "same_seed": "convergence.fresh_seeds",
    "ref_mean": "convergence.reference_mean",
    "ref_var": "convergence.reference_variance",
}

N_KEYS = {
    "onestep-figures": "onestep.n_samples",
    "nash-gap": "nash.n_list",
    "convergence-diag": "convergence.n_list",
}


def _parse_list(text: str, cast: Callable[[str], Any] = float) -> List[Any]:
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse list {text!r}: {e}") from e


def _set_key(raw: Dict[str, Any], dotted: str, value: Any):
    node = raw
    *parents, leaf = dotted.split(".")
    for part in parents:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"config key {part!r} must be an object")
    node[leaf] = value


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """JSON config (optional) + flag overrides -> validated RunConfig"""
    raw: Dict[str, Any] = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {args.config!r}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        if raw.get("subcommand", args.subcommand) != args.subcommand:
            raise ConfigError(f"config file is for {raw['subcommand']!r}, not {args.subcommand!r}")
    raw["subcommand"] = args.subcommand

    options = vars(args)
    for dest, dotted in OVERRIDES.items():
        value = options.get(dest)
        if value is None or value is False:
            continue
        if dotted.startswith("simulation.") and args.subcommand not in STOCHASTIC:
            continue
        if dest in ("b", "atoms"):
            value = _parse_list(value)
        elif dest == "same_seed":
            value = False
        _set_key(raw, dotted, value)

    if options.get("weights") is not None:
        target = "measure.weights" if args.subcommand == "equilibrium-fields" else "threshold.weights"
        _set_key(raw, target, _parse_list(options["weights"]))
    if options.get("n") is not None:
        _set_key(raw, N_KEYS.get(args.subcommand, "simulation.n_particles"), options["n"])
    if options.get("n_list") is not None:
        _set_key(raw, N_KEYS.get(args.subcommand, "nash.n_list"), _parse_list(options["n_list"], int))
    if options.get("deviations") is not None:
        _set_key(raw, "nash.deviations", [{"kind": k.strip()} for k in options["deviations"].split(",") if k.strip()])

    if args.subcommand in STOCHASTIC and not isinstance(raw.get("simulation"), dict):
        raw["simulation"] = {}
    return RunConfig.model_validate(raw)


def manifest_config(cfg: RunConfig) -> Dict[str, Any]:
    """Validated configuration echo, with the nash-gap deviation family spelled out"""
    echo = cfg.model_dump(mode="json")
    if cfg.subcommand == "nash-gap":
        echo["nash"]["deviations"] = [deviation_to_dict(d) for d in cfg.nash.build_deviations()]
    return echo


def describe_validation_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        key = ".".join(str(p) for p in err["loc"])
        parts.append(f"{key}: {err['msg']}")
    return "; ".join(parts)


# Subcommand handlers: each returns {quantity: table}

Artifacts = Dict[str, pd.DataFrame]


def _sim_config(cfg: RunConfig, model: CoefficientModel, n_particles: Optional[int] = None) -> SimConfig:
    sim = cfg.simulation
    return SimConfig(
        n_particles=sim.n_particles if n_particles is None else n_particles,
        n_steps=sim.n_steps,
        horizon=sim.horizon,
        seed=sim.seed,
        model=model,
        initial=cfg.initial.build(model),
        threshold_tol=sim.threshold_tol,
        threads=sim.threads,
    )


def _report_assumptions(model: CoefficientModel, initial: Union[GaussianSpec, Measure1D], ui: ResultConsole):
    sample = initial.atoms if isinstance(initial, Measure1D) else gaussian_quantile_measure(initial, 101).atoms
    report = validate_assumptions(model, sample)
    ui.show_warnings([m for m in report.messages if "below floor" in m])
    for message in report.messages:
        logger.info("Model check: %s", message)


def handle_solve_threshold(cfg: RunConfig, ui: ResultConsole) -> Artifacts:
    block = cfg.threshold
    if block.b is not None:
        weights = block.weights
        if weights is None and block.b:
            weights = [1.0 / len(block.b)] * len(block.b)
        result = solve_c_empirical(block.b, weights, block.tol)
        upper = c_upper_bound(block.b, weights)
    else:
        model = cfg.model.build()
        v = model.variant
        if not isinstance(v, OUVariant):
            raise ConfigError("solve-threshold needs --b or an OU model for the Gaussian closed form")
        mu_mean = v.mbar if block.mu_mean is None else block.mu_mean
        mu_var = v.sigbar ** 2 / (2.0 * v.theta) if block.mu_var is None else block.mu_var
        result = solve_c_gaussian_ou(v.theta, v.mbar, mu_mean, mu_var, block.tol)
        upper = float("nan")

    ui.status(f"c={result.c:.12f}")
    ui.status(f"residual={result.residual:.3e} ({result.method}, {result.iterations} iterations)")
    table = pd.DataFrame([{
        "c": result.c,
        "residual": result.residual,
        "iterations": result.iterations,
        "method": result.method,
        "upper_bound": upper,
    }])
    return {"threshold": table}


def handle_equilibrium_fields(cfg: RunConfig, ui: ResultConsole) -> Artifacts:
    model = cfg.model.build()
    block = cfg.measure
    if block.atoms:
        weights = block.weights or [1.0 / len(block.atoms)] * len(block.atoms)
        m = Measure1D(np.asarray(block.atoms), np.asarray(weights))
    else:
        initial = cfg.initial.build(model)
        m = initial if isinstance(initial, Measure1D) else gaussian_quantile_measure(initial, block.n_atoms)

    fields = compute_fields(model, block.t, m, cfg.threshold.tol)
    r1, r2 = consistency_residuals(fields, m.weights)
    ui.status(f"📐 c={fields.c:.12f}  r1={r1:.3e}  r2={r2:.3e}")
    frame = fields.to_frame(m)
    ui.show_table(frame, "⚖️ Equilibrium fields")
    return {"fields": frame}


def _ensemble_artifacts(ensemble: ParticleEnsemble, model: CoefficientModel, cfg: RunConfig,
                        ui: ResultConsole) -> Artifacts:
    summary = summarize_ensemble(ensemble, bandwidth=cfg.grid.bandwidth, grid_points=cfg.grid.points)
    envelope = moment_envelope(ensemble, model)
    per_time = summary.per_time.copy()
    per_time["second_moment"] = envelope["second_moment"].to_numpy()
    per_time["moment_envelope"] = envelope["envelope"].to_numpy()
    if not envelope["within"].all():
        ui.show_warnings(["sample second moment left the growth envelope"])

    ui.show_table(per_time[["t", "mean", "variance", "median", "c", "held_fraction"]],
                  f"📈 {ensemble.kind} summary", max_rows=12)
    artifacts = {"summary": per_time, "terminal_density": summary.terminal_density}
    if ensemble.kind != "provisions":
        artifacts["thresholds"] = pd.DataFrame({
            "step": np.arange(ensemble.thresholds.size),
            "t": ensemble.times[:-1],
            "c": ensemble.thresholds,
            "held_fraction": ensemble.held_fraction,
        })
    return artifacts


def _simulate(cfg: RunConfig, ui: ResultConsole, simulator: Callable[[SimConfig], Any]) -> Artifacts:
    model = cfg.model.build()
    sim_cfg = _sim_config(cfg, model)
    _report_assumptions(model, sim_cfg.initial, ui)
    result = simulator(sim_cfg)
    ensemble = getattr(result, "ensemble", result)
    return _ensemble_artifacts(ensemble, model, cfg, ui)


def handle_simulate_mfg(cfg: RunConfig, ui: ResultConsole) -> Artifacts:
    return _simulate(cfg, ui, simulate_equilibrium_mckv)


def handle_simulate_provisions(cfg: RunConfig, ui: ResultConsole) -> Artifacts:
    return _simulate(cfg, ui, simulate_provisions)


def handle_simulate_nplayer(cfg: RunConfig, ui: ResultConsole) -> Artifacts:
    return _simulate(cfg, ui, simulate_nplayer)


def handle_onestep_figures(cfg: RunConfig, ui: ResultConsole) -> Artifacts:
    model = cfg.model.build()
    v = model.variant
    if not isinstance(v, OUVariant):
        raise ConfigError("onestep-figures needs an OU model (model.kind = 'ou')")
    block = cfg.onestep
    seed = cfg.simulation.seed

    result = onestep_illustration(v.theta, v.mbar, v.sigbar, block.delta, block.n_samples, seed,
                                  grid_points=cfg.grid.points)
    ui.show_table(result.summary, "🎯 One-step illustration")
    artifacts = {
        "densities": result.densities,
        "summary": result.summary,
        "drift_profile": profile_for_threshold(model, 0.0, result.c, result.densities["x"].to_numpy()),
    }
    if block.sweep:
        grid = get_sweep_grid()
        artifacts["sweep"] = onestep_sweep(grid["theta"], grid["mbar"], grid["sigbar"],
                                           block.delta, block.n_samples, seed, cfg.simulation.threads)
        ui.show_table(artifacts["sweep"][["theta", "mbar", "sigbar", "c", "var_P_T", "var_X_T", "mean_diff"]],
                      "🧮 Parameter sweep", max_rows=48)
    return artifacts


def handle_nash_gap(cfg: RunConfig, ui: ResultConsole) -> Artifacts:
    model = cfg.model.build()
    block = cfg.nash
    deviations = block.build_deviations()
    reports = []
    for n in block.n_list:
        ui.status(f"🎲 N={n}: {block.replications} replications, {len(deviations)} deviations")
        reports.append(nash_gap_estimate(_sim_config(cfg, model, n), deviations, block.replications,
                                         average_over_players=block.average_over_players))
    report = NashGapReport.merge(reports)
    ui.show_table(report.table, "🏁 Nash gap", max_rows=60)
    if report.diagnostics.get("excluded_weights"):
        ui.show_warnings([f"{report.diagnostics['excluded_weights']} non-finite weights excluded"])
    return {"nash_gap": report.table}


def handle_convergence_diag(cfg: RunConfig, ui: ResultConsole) -> Artifacts:
    model = cfg.model.build()
    sim = cfg.simulation
    block = cfg.convergence
    reference = None
    if block.reference_mean is not None and block.reference_variance is not None:
        reference = GaussianSpec(block.reference_mean, block.reference_variance)

    table = cauchy_convergence_diagnostic(model, cfg.initial.build(model), sim.horizon, sim.n_steps, sim.seed,
                                          block.n_list, block.fresh_seeds, reference, sim.threads,
                                          sim.threshold_tol)
    ui.show_table(table, "🔁 Convergence diagnostic")
    return {"convergence": table}


HANDLERS: Dict[str, Callable[[RunConfig, ResultConsole], Artifacts]] = {
    "solve-threshold": handle_solve_threshold,
    "equilibrium-fields": handle_equilibrium_fields,
    "simulate-mfg": handle_simulate_mfg,
    "simulate-provisions": handle_simulate_provisions,
    "onestep-figures": handle_onestep_figures,
    "simulate-nplayer": handle_simulate_nplayer,
    "nash-gap": handle_nash_gap,
    "convergence-diag": handle_convergence_diag,
}


# Argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--run-id", dest="run_id", help="artifact prefix (default: subcommand name)")
    common.add_argument("--output-dir", dest="output_dir", help="artifact directory (default: $MFH_OUTPUT_DIR)")
    common.add_argument("--threads", type=int)
    common.add_argument("--log-level", dest="log_level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", choices=["ou", "constant_sign", "tabulated"])
    model.add_argument("--theta", type=float)
    model.add_argument("--mbar", type=float)
    model.add_argument("--sigbar", type=float)
    model.add_argument("--b0", type=float)
    model.add_argument("--sig0", type=float)
    model.add_argument("--sigma-floor", dest="sigma_floor", type=float)
    model.add_argument("--drift-bound", dest="drift_bound", type=float)
    model.add_argument("--init-mean", dest="init_mean", type=float)
    model.add_argument("--init-var", dest="init_var", type=float)

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--steps", type=int)
    sim.add_argument("--T", dest="horizon", type=float)
    sim.add_argument("--grid-points", dest="grid_points", type=int)
    sim.add_argument("--bandwidth", type=float)

    parser = argparse.ArgumentParser(prog="mfh", description="Mutual holding mean-field laboratory")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("solve-threshold", parents=[common, model], help="solve the holding threshold c")
    p.add_argument("--b", help="comma-separated drift values")
    p.add_argument("--weights", help="comma-separated weights (default uniform)")
    p.add_argument("--mu-mean", dest="mu_mean", type=float)
    p.add_argument("--mu-var", dest="mu_var", type=float)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("equilibrium-fields", parents=[common, model], help="equilibrium coefficients per atom")
    p.add_argument("--atoms", help="comma-separated atoms (default: quantiles of the initial law)")
    p.add_argument("--weights", help="comma-separated weights (default uniform)")
    p.add_argument("--n-atoms", dest="n_atoms", type=int)
    p.add_argument("--t", type=float)

    for name, text in (("simulate-mfg", "equilibrium particle system"),
                       ("simulate-provisions", "provisions baseline"),
                       ("simulate-nplayer", "finite-N cross-holding system")):
        p = sub.add_parser(name, parents=[common, model, sim], help=text)
        p.add_argument("--n", type=int, help="number of particles / players")

    p = sub.add_parser("onestep-figures", parents=[common, model, sim], help="one-step illustration")
    p.add_argument("--delta", type=float)
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--sweep", action="store_true", help="also run the parameter-grid sweep")

    p = sub.add_parser("nash-gap", parents=[common, model, sim], help="epsilon-Nash gap estimate")
    p.add_argument("--n-list", dest="n_list", help="comma-separated player counts")
    p.add_argument("--replications", type=int)
    p.add_argument("--deviations", help="comma-separated deviation kinds")
    p.add_argument("--average-over-players", dest="average_over_players", action="store_true")

    p = sub.add_parser("convergence-diag", parents=[common, model, sim], help="W2 convergence diagnostic")
    p.add_argument("--n-list", dest="n_list", help="comma-separated particle counts")
    p.add_argument("--same-seed", dest="same_seed", action="store_true", help="reuse the seed for every run")
    p.add_argument("--ref-mean", dest="ref_mean", type=float)
    p.add_argument("--ref-var", dest="ref_var", type=float)
    return parser


def _join_list_values(argv: List[str]) -> List[str]:
    # "--b -1,1" would otherwise be read as two options
    joined, i = [], 0
    while i < len(argv):
        if argv[i] in LIST_FLAGS and i + 1 < len(argv):
            joined.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            joined.append(argv[i])
            i += 1
    return joined


def setup_logging(level: str):
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        force=True,
    )


def run(argv: Optional[List[str]] = None) -> int:
    """Parse, validate, dispatch and write artifacts; returns the exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_join_list_values(argv))
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level)
    ui = ResultConsole()
    started = time.perf_counter()
    try:
        cfg = load_run_config(args)
        run_id = cfg.run_id or cfg.subcommand
        ui.show_warnings(validate_config())
        ui.status(f"🚀 {cfg.subcommand} (run {run_id})")

        artifacts = HANDLERS[cfg.subcommand](cfg, ui)
        paths = [write_csv(df, cfg.output_dir, run_id, quantity) for quantity, df in artifacts.items()]
        wall_time = time.perf_counter() - started
        paths.append(write_manifest(cfg.output_dir, run_id, cfg.subcommand, manifest_config(cfg),
                                    cfg.seed, wall_time, paths))
        ui.show_artifacts(paths, wall_time)
        return 0
    except ValidationError as e:
        ui.status(f"❌ Invalid configuration: {describe_validation_error(e)}")
        return 2
    except VALIDATION_ERRORS as e:
        ui.status(f"❌ Invalid configuration: {e}")
        return 2
    except NUMERICAL_ERRORS as e:
        ui.status(f"❌ Numerical failure: {e}")
        return 3


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
