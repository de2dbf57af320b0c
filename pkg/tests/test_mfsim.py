import math

import numpy as np
import pytest

from config import ParameterGrid
from deviations import DeviationStrategy
from errors import ConfigError
from measures import GaussianSpec, Measure1D
from mfsim import (
    ParticleEnsemble,
    ParticleStepper,
    SimConfig,
    cauchy_convergence_diagnostic,
    derived_seed,
    moment_envelope,
    onestep_illustration,
    onestep_sweep,
    representative_deviation_value,
    simulate_equilibrium_mckv,
    simulate_provisions,
    step_normals,
    summarize_ensemble,
)
from models import CoefficientModel, ConstantSignVariant, OUVariant
from threshold import solve_c_gaussian_ou

ORIGIN = Measure1D(np.array([0.0]), np.array([1.0]))


def sim(model, initial=None, n=500, steps=20, horizon=1.0, seed=7, threads=1):
    initial = initial if initial is not None else GaussianSpec(-0.5, 0.5)
    return SimConfig(n, steps, horizon, seed, model, initial, threads=threads)


def test_noise_streams_are_reproducible():
    np.testing.assert_array_equal(step_normals(11, 3, 100), step_normals(11, 3, 100))
    assert not np.array_equal(step_normals(11, 3, 100), step_normals(11, 4, 100))
    assert not np.array_equal(step_normals(11, 3, 100), step_normals(11, 3, 100, replication=1))
    # a prefix of particles sees the same variates whatever the population size
    np.testing.assert_array_equal(step_normals(11, 0, 10), step_normals(11, 0, 50)[:10])


def test_derived_seeds_are_distinct():
    seeds = {derived_seed(42, i) for i in range(20)}
    assert len(seeds) == 20
    assert all(0 <= s < 2 ** 63 for s in seeds)


@pytest.mark.parametrize("kwargs", [
    {"n_particles": 0},
    {"n_steps": 0},
    {"horizon": 0.0},
    {"seed": -1},
    {"seed": 2 ** 64},
    {"threshold_tol": 0.0},
    {"threads": 0},
])
def test_sim_config_validation(kwargs, ou_model):
    base = dict(n_particles=10, n_steps=5, horizon=1.0, seed=1, model=ou_model, initial=ORIGIN)
    base.update(kwargs)
    with pytest.raises(ConfigError):
        SimConfig(**base)


def test_stepper_chunking_matches_single_pass(rng):
    x, drift, vol, noise = (rng.normal(size=1001) for _ in range(4))
    with ParticleStepper(1001, 1) as single, ParticleStepper(1001, 4) as chunked:
        np.testing.assert_array_equal(single.advance(x, drift, vol, noise, 0.01, 0.1),
                                      chunked.advance(x, drift, vol, noise, 0.01, 0.1))


def test_brownian_terminal_variance():
    model = CoefficientModel(ConstantSignVariant(b0=0.0, sig0=1.0))
    ensemble = simulate_provisions(sim(model, ORIGIN, n=20_000, steps=10, horizon=1.0))
    se = math.sqrt(2.0 / ensemble.n_particles)
    assert np.var(ensemble.terminal, ddof=1) == pytest.approx(1.0, abs=4 * se)
    assert np.all(np.isnan(ensemble.thresholds))


def test_near_deterministic_ou_tracks_ode():
    model = CoefficientModel(OUVariant(theta=1.0, mbar=0.0, sigbar=1e-8))
    start = Measure1D(np.array([2.0]), np.array([1.0]))
    ensemble = simulate_provisions(sim(model, start, n=3, steps=1000, horizon=1.0))
    np.testing.assert_allclose(ensemble.terminal, 2.0 * math.exp(-1.0), atol=1e-3)


def test_ou_mean_reversion():
    model = CoefficientModel(OUVariant(theta=2.0, mbar=0.7, sigbar=1.0))
    ensemble = simulate_provisions(sim(model, ORIGIN, n=10_000, steps=100, horizon=5.0))
    se = np.std(ensemble.terminal, ddof=1) / math.sqrt(ensemble.n_particles)
    assert abs(np.mean(ensemble.terminal) - 0.7) < 3 * se + 1e-3


def test_negative_drift_equilibrium_equals_provisions(negative_model):
    cfg = sim(negative_model, n=300, steps=15)
    mckv = simulate_equilibrium_mckv(cfg)
    provisions = simulate_provisions(cfg)
    np.testing.assert_array_equal(mckv.paths, provisions.paths)
    np.testing.assert_array_equal(mckv.thresholds, np.zeros(15))
    np.testing.assert_array_equal(mckv.held_fraction, np.zeros(15))


def test_equilibrium_independent_of_thread_count(ou_model):
    single = simulate_equilibrium_mckv(sim(ou_model, threads=1))
    pooled = simulate_equilibrium_mckv(sim(ou_model, threads=3))
    np.testing.assert_array_equal(single.paths, pooled.paths)
    np.testing.assert_array_equal(single.thresholds, pooled.thresholds)


def test_equilibrium_ensemble_shape(ou_model):
    ensemble = simulate_equilibrium_mckv(sim(ou_model, n=400, steps=12))
    assert ensemble.kind == "mckv"
    assert ensemble.paths.shape == (400, 13)
    assert ensemble.thresholds.shape == (12,)
    assert np.all(ensemble.thresholds >= 0.0)
    assert np.all((ensemble.held_fraction > 0.0) & (ensemble.held_fraction <= 1.0))
    with pytest.raises(ValueError):
        ensemble.paths[0, 0] = 1.0


def test_equilibrium_first_threshold_matches_closed_form(ou_model):
    ensemble = simulate_equilibrium_mckv(sim(ou_model, n=50_000, steps=1))
    closed = solve_c_gaussian_ou(1.0, -0.5, -0.5, 0.5).c
    assert ensemble.thresholds[0] == pytest.approx(closed, abs=2e-2)


def _ensemble(paths):
    paths = np.asarray(paths, dtype=float)
    steps = paths.shape[1] - 1
    return ParticleEnsemble("provisions", np.linspace(0.0, 1.0, steps + 1), paths,
                            np.full(steps, np.nan), np.zeros(steps), 0)


def test_summary_of_constant_paths():
    summary = summarize_ensemble(_ensemble(np.full((4, 3), 5.0)))
    np.testing.assert_array_equal(summary.per_time["mean"], [5.0, 5.0, 5.0])
    np.testing.assert_array_equal(summary.per_time["variance"], [0.0, 0.0, 0.0])
    assert summary.bandwidth == 1.0


def test_summary_midpoint_median():
    summary = summarize_ensemble(_ensemble([[0.0, 0.0], [2.0, 2.0]]))
    assert summary.per_time["median"].tolist() == [1.0, 1.0]
    assert list(summary.per_time.columns) == ["t", "mean", "variance", "q05", "q25", "median", "q75", "q95",
                                              "c", "held_fraction"]
    assert math.isnan(summary.per_time["c"].iloc[-1])


def test_summary_density_on_given_grid(ou_model):
    ensemble = simulate_provisions(sim(ou_model, n=200, steps=4))
    grid = np.linspace(-4.0, 3.0, 64)
    summary = summarize_ensemble(ensemble, grid=grid, bandwidth=0.3)
    np.testing.assert_array_equal(summary.terminal_density["x"], grid)
    assert summary.bandwidth == 0.3


def test_moment_envelope_holds(ou_model):
    envelope = moment_envelope(simulate_equilibrium_mckv(sim(ou_model, n=2000, steps=20)), ou_model)
    assert envelope["within"].all()
    assert list(envelope.columns) == ["t", "second_moment", "envelope", "within"]


def test_convergence_same_seed_same_size_is_zero(ou_model):
    table = cauchy_convergence_diagnostic(ou_model, GaussianSpec(-0.5, 0.5), 1.0, 5, 3, [200, 200],
                                          fresh_seeds=False)
    assert table["w2_previous"].iloc[1] == 0.0
    assert math.isnan(table["w2_previous"].iloc[0])
    assert list(table.columns) == ["N", "seed", "w2_previous", "w2_reference"]


def test_convergence_reference_distance():
    model = CoefficientModel(ConstantSignVariant(b0=0.0, sig0=1.0))
    # b = 0 sits on the held side of the tie, so X_T ~ N(0, 1 + T/4)
    table = cauchy_convergence_diagnostic(model, GaussianSpec(0.0, 1.0), 1.0, 4, 5, [500, 4000],
                                          reference=GaussianSpec(0.0, 1.25))
    assert table["w2_reference"].iloc[1] < 0.15
    assert table["seed"].iloc[0] != table["seed"].iloc[1]


def test_convergence_rejects_decreasing_sizes(ou_model):
    with pytest.raises(ConfigError):
        cauchy_convergence_diagnostic(ou_model, ORIGIN, 1.0, 5, 3, [400, 200])


@pytest.mark.slow
def test_convergence_distance_shrinks(ou_model):
    table = cauchy_convergence_diagnostic(ou_model, GaussianSpec(-0.5, 0.5), 1.0, 20, 9,
                                          [500, 1000, 2000, 4000, 8000])
    assert table["w2_previous"].iloc[-1] < table["w2_previous"].iloc[1]


def test_onestep_outputs():
    result = onestep_illustration(1.0, -0.5, 1.0, 1.0, 20_000, 42, grid_points=128)
    assert result.c == solve_c_gaussian_ou(1.0, -0.5, -0.5, 0.5).c
    assert list(result.densities.columns) == ["x", "density_P_T", "density_X_T"]
    assert len(result.densities) == 128
    for column in ("mean_P_T", "var_P_T", "mean_X_T", "var_X_T", "mean_diff", "se_mean_diff"):
        assert column in result.summary.columns
    # equilibrium halves the volatility of held firms
    assert result.summary["var_X_T"].iloc[0] < result.summary["var_P_T"].iloc[0]


def test_onestep_noiseless_limit():
    result = onestep_illustration(1.0, 0.0, 1e-4, 1.0, 1000, 1, with_densities=False)
    assert result.densities is None
    assert result.summary["var_P_T"].iloc[0] < 1e-6
    assert result.summary["var_X_T"].iloc[0] < 1e-6


def test_onestep_rejects_bad_delta():
    with pytest.raises(ConfigError):
        onestep_illustration(1.0, 0.0, 1.0, 0.0, 1000, 1)


def test_onestep_sweep_rows():
    table = onestep_sweep([0.5, 2.0], [0.0], [1.0, 2.0], 1.0, 2000, 3, threads=2)
    assert len(table) == 4
    assert table[["theta", "sigbar"]].values.tolist() == [[0.5, 1.0], [0.5, 2.0], [2.0, 1.0], [2.0, 2.0]]


def test_null_representative_deviation_has_zero_gain(ou_model):
    value = representative_deviation_value(sim(ou_model, n=300, steps=10), DeviationStrategy.null())
    assert value.gain == 0.0
    assert value.J_dev == value.J_base
    assert value.n_excluded == 0


@pytest.mark.slow
def test_representative_deviation_does_not_pay(ou_model):
    cfg = sim(ou_model, n=5000, steps=20)
    for deviation in (DeviationStrategy.never_hold(), DeviationStrategy.always_hold()):
        value = representative_deviation_value(cfg, deviation)
        assert value.gain <= 3 * value.se_gain + 1e-12


def test_equilibrium_narrows_terminal_law_from_invariant_start(ou_model):
    cfg = sim(ou_model, GaussianSpec(-0.5, 0.5), n=5000, steps=20)
    equilibrium = np.var(simulate_equilibrium_mckv(cfg).terminal, ddof=1)
    provisions = np.var(simulate_provisions(cfg).terminal, ddof=1)
    assert equilibrium < provisions - 0.05


def test_zero_drift_equilibrium_has_quarter_variance():
    model = CoefficientModel(ConstantSignVariant(b0=0.0, sig0=1.0))
    ensemble = simulate_equilibrium_mckv(sim(model, ORIGIN, n=20_000, steps=10, horizon=1.0))
    np.testing.assert_array_equal(ensemble.thresholds, np.zeros(10))
    se = 0.25 * math.sqrt(2.0 / ensemble.n_particles)
    assert np.var(ensemble.terminal, ddof=1) == pytest.approx(0.25, abs=4 * se)


def test_onestep_leaves_mean_unchanged():
    # sum_j w_j B_j = sum_j w_j b_j at the threshold, so E[X*_T - P_T] = 0
    summary = onestep_illustration(1.0, -0.5, 1.0, 1.0, 100_000, 42, with_densities=False).summary
    assert abs(summary["mean_diff"].iloc[0]) <= 3 * summary["se_mean_diff"].iloc[0]


def test_onestep_sweep_reduces_variance_everywhere():
    table = onestep_sweep(ParameterGrid.THETAS, ParameterGrid.MBARS, ParameterGrid.SIGBARS, 1.0, 100_000, 42)
    assert len(table) == 48
    assert (table["var_X_T"] < table["var_P_T"]).all()
