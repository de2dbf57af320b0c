import importlib

import config


def test_defaults_are_sane():
    assert config.SolverConfig.THRESHOLD_TOL > 0
    assert config.SolverConfig.SIGMA_FLOOR > 0
    assert config.SimulationDefaults.MIN_REPLICATIONS == 100
    assert config.OutputConfig.FLOAT_FORMAT == "%.17g"


def test_sweep_grid_is_a_copy():
    grid = config.get_sweep_grid()
    grid["theta"].append(99.0)
    assert 99.0 not in config.ParameterGrid.THETAS
    assert set(grid) == {"theta", "mbar", "sigbar"}


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("MFH_THRESHOLD_TOL", "1e-6")
    monkeypatch.setenv("MFH_OUTPUT_DIR", "runs")
    try:
        reloaded = importlib.reload(config)
        assert reloaded.SolverConfig.THRESHOLD_TOL == 1e-6
        warnings = reloaded.validate_config()
        assert any("MFH_THRESHOLD_TOL" in w for w in warnings)
        assert not any("MFH_OUTPUT_DIR" in w for w in warnings)
    finally:
        monkeypatch.undo()
        importlib.reload(config)
