import numpy as np
import pytest

from equilibrium import (
    compute_fields,
    consistency_residuals,
    drift_profile,
    equilibrium_drift,
    equilibrium_vol,
    fields_from_values,
    optimal_holding,
    profile_for_threshold,
)
from measures import GaussianSpec, empirical_from_samples, gaussian_quantile_measure
from models import CoefficientModel, ConstantSignVariant, OUVariant


@pytest.mark.parametrize("s, expected", [(2.0, 1.0), (-3.0, -3.0), (0.0, 0.0)])
def test_equilibrium_drift_branches(s, expected):
    assert equilibrium_drift(s, 0.0) == expected
    assert equilibrium_drift(s - 0.25, 0.25) == expected


@pytest.mark.parametrize("s, expected", [(1.0, 1.0), (-1.0, 2.0), (0.0, 1.0)])
def test_equilibrium_vol_branches(s, expected):
    assert equilibrium_vol(s, 0.0, 2.0) == expected


def test_optimal_holding_tie_is_held():
    c = 0.8
    assert optimal_holding(-c / 2, c) == 1
    assert optimal_holding(-2 * c - 1, c) == 0
    assert optimal_holding(-c, c) == 1


def test_vectorized_maps():
    b = np.array([-2.0, -0.5, 0.0, 1.0])
    np.testing.assert_array_equal(equilibrium_drift(b, 0.5), [-1.5, 0.0, 0.25, 0.75])
    np.testing.assert_array_equal(equilibrium_vol(b, 0.5, np.full(4, 2.0)), [2.0, 1.0, 1.0, 1.0])
    np.testing.assert_array_equal(optimal_holding(b, 0.5), [0, 1, 1, 1])


def test_fields_two_atom_example():
    fields = fields_from_values(np.array([-1.0, 1.0]), np.array([1.0, 1.0]), np.array([0.5, 0.5]))
    assert fields.c == pytest.approx(1 / 3, abs=1e-15)
    np.testing.assert_allclose(fields.B_vals, [-2 / 3, 2 / 3], atol=1e-15)
    np.testing.assert_array_equal(fields.Sigma_vals, [1.0, 0.5])
    np.testing.assert_array_equal(fields.holding, [0, 1])
    r1, r2 = consistency_residuals(fields, [0.5, 0.5])
    assert r1 <= 1e-15
    assert r2 <= 1e-15


def test_consistency_residuals_on_gaussian_measure():
    model = CoefficientModel(OUVariant(1.0, -0.5, 1.0))
    m = gaussian_quantile_measure(GaussianSpec(-0.5, 0.5), 5000)
    fields = compute_fields(model, 0.0, m)
    r1, r2 = consistency_residuals(fields, m.weights)
    assert r1 <= 1e-10
    assert r2 <= 1e-10


def test_all_negative_drift_fields():
    model = CoefficientModel(ConstantSignVariant(b0=-1.0, sig0=0.5))
    m = empirical_from_samples([-1.0, 0.0, 3.0])
    fields = compute_fields(model, 0.0, m)
    assert fields.c == 0.0
    np.testing.assert_array_equal(fields.B_vals, fields.b_vals)
    np.testing.assert_array_equal(fields.Sigma_vals, [0.5, 0.5, 0.5])
    assert consistency_residuals(fields, m.weights)[0] == 0.0


def test_fields_frame_columns():
    model = CoefficientModel(OUVariant(2.0, 0.0, 1.0))
    m = empirical_from_samples([-1.0, 0.5, 2.0])
    frame = compute_fields(model, 0.0, m).to_frame(m)
    assert list(frame.columns) == ["atom", "weight", "b", "B", "Sigma", "holding"]
    assert len(frame) == 3


def test_drift_profile_uses_measure_threshold():
    model = CoefficientModel(OUVariant(1.0, 0.0, 1.0))
    m = empirical_from_samples([-1.0, 1.0])
    profile = drift_profile(model, 0.0, m, np.linspace(-2, 2, 9))
    # b = -x on atoms {-1, 1} is the two-atom example
    assert profile["c"].iloc[0] == pytest.approx(1 / 3, abs=1e-15)
    held = profile.loc[profile["holding"] == 1, "x"]
    assert held.max() == 0.0
    assert held.min() == -2.0
    assert list(profile.columns) == ["x", "b", "B", "Sigma", "holding", "c"]


def test_profile_for_threshold_halves_held_volatility():
    model = CoefficientModel(OUVariant(1.0, 0.0, 2.0))
    profile = profile_for_threshold(model, 0.0, 0.5, [-1.0, 1.0])
    np.testing.assert_array_equal(profile["Sigma"].to_numpy(), [1.0, 2.0])
    np.testing.assert_array_equal(profile["B"].to_numpy(), [0.75, -0.5])


@pytest.mark.parametrize("c", [0.0, 0.3, 2.0])
def test_equilibrium_drift_is_continuous_at_interface(c):
    eps = 1e-9
    assert abs(equilibrium_drift(-c + eps, c)) <= 2 * eps
    assert abs(equilibrium_drift(-c - eps, c)) <= 2 * eps
    assert equilibrium_drift(-c, c) == 0.0


def test_residuals_and_drift_mass_on_random_instances(rng):
    for _ in range(100):
        n = int(rng.integers(1, 400))
        b = rng.uniform(-10.0, 10.0, size=n) + rng.normal()
        sigma = rng.uniform(0.1, 3.0, size=n)
        w = rng.random(n) + 0.01
        w = w / w.sum()
        w[-1] = 1.0 - w[:-1].sum()
        fields = fields_from_values(b, sigma, w)
        r1, r2 = consistency_residuals(fields, w)
        assert r1 <= 1e-10
        assert r2 <= 1e-10
        # sum_j w_j B_j - sum_j w_j b_j = F(c), so holding moves no drift mass
        assert abs(np.sum(w * fields.B_vals) - np.sum(w * b)) <= 1e-10
