import math

import numpy as np
import pytest
from scipy import integrate, stats

import threshold
from errors import InvalidMeasureError, ThresholdSolverError
from measures import GaussianSpec, gaussian_quantile_measure
from threshold import (
    BISECTION,
    EXACT_PIECEWISE,
    c_upper_bound,
    safeguarded_newton,
    solve_c_empirical,
    solve_c_gaussian_ou,
    threshold_residual,
)


def test_two_atom_example():
    result = solve_c_empirical([-1.0, 1.0], [0.5, 0.5])
    assert result.c == pytest.approx(1 / 3, abs=1e-15)
    assert abs(result.residual) <= 1e-12
    assert result.method == EXACT_PIECEWISE


def test_all_positive_drift_gives_mean():
    assert solve_c_empirical([1.0, 3.0], [0.5, 0.5]).c == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("weights", [[0.5, 0.5], [0.9, 0.1], [0.0, 1.0]])
def test_all_negative_drift_gives_zero(weights):
    assert solve_c_empirical([-2.0, -1.0], weights).c == 0.0


def test_upper_bound_examples():
    assert c_upper_bound([-1.0, 1.0], [0.5, 0.5]) == 1.0
    assert c_upper_bound([-2.0, -1.0], [0.5, 0.5]) == 0.0
    assert c_upper_bound([2.0], [1.0]) == 4.0


def test_bisection_agrees_with_exact(rng):
    b = rng.normal(size=500)
    w = np.full(500, 1 / 500)
    exact = solve_c_empirical(b, w)
    bisected = solve_c_empirical(b, w, tol=1e-13, method=BISECTION)
    assert bisected.method == BISECTION
    assert exact.c == pytest.approx(bisected.c, abs=1e-12)


def test_root_properties_on_random_measures(rng):
    for _ in range(50):
        n = int(rng.integers(1, 200))
        b = rng.normal(loc=rng.normal(), scale=2.0, size=n)
        w = rng.random(n)
        w = w / w.sum()
        w[-1] = 1.0 - w[:-1].sum()
        result = solve_c_empirical(b, w)
        assert 0.0 <= result.c <= c_upper_bound(b, w) + 1e-12
        assert abs(threshold_residual(result.c, b, w)) <= 1e-12


def test_root_at_kink():
    # c = 1/2 puts the second atom exactly on the interface b + c = 0
    result = solve_c_empirical([1.5, -0.5], [0.5, 0.5])
    assert result.c == pytest.approx(0.5, abs=1e-15)


def test_threshold_is_monotone_in_drift(rng):
    b = rng.normal(size=100)
    w = np.full(100, 0.01)
    assert solve_c_empirical(b + 0.3, w).c >= solve_c_empirical(b, w).c


@pytest.mark.parametrize("b, w", [
    ([], []),
    ([1.0, 2.0], [1.0]),
    ([1.0, 2.0], [0.7, 0.7]),
    ([1.0, math.inf], [0.5, 0.5]),
    ([1.0, 2.0], [-0.5, 1.5]),
])
def test_invalid_measure_inputs(b, w):
    with pytest.raises(InvalidMeasureError):
        solve_c_empirical(b, w)


def test_nonpositive_tolerance():
    with pytest.raises(ThresholdSolverError):
        solve_c_empirical([1.0], [1.0], tol=0.0)


def test_safeguarded_newton_sqrt2():
    root, iterations = safeguarded_newton(lambda x: x * x - 2.0, lambda x: 2.0 * x, 0.0, 2.0, 1e-14)
    assert root == pytest.approx(math.sqrt(2.0), abs=1e-12)
    assert iterations >= 1


def test_safeguarded_newton_requires_bracket():
    with pytest.raises(ThresholdSolverError):
        safeguarded_newton(lambda x: x * x + 1.0, lambda x: 2.0 * x, -1.0, 1.0, 1e-12)


def _quadrature_threshold(c, theta, mbar, law):
    def integrand(x):
        return (c + theta * (mbar - x)) * stats.norm.pdf(x, law.mean, law.std)

    kink = c / theta + mbar
    value, _ = integrate.quad(integrand, law.mean - 12 * law.std, kink, limit=200, epsabs=1e-13)
    return 0.5 * value


def test_gaussian_closed_form_satisfies_fixed_point():
    theta, mbar = 1.0, 0.0
    law = GaussianSpec(0.0, 0.5)
    result = solve_c_gaussian_ou(theta, mbar, law.mean, law.variance)
    assert result.c > 0
    assert _quadrature_threshold(result.c, theta, mbar, law) == pytest.approx(result.c, abs=1e-9)


def test_gaussian_closed_form_matches_empirical_solver():
    law = GaussianSpec(0.0, 0.5)
    closed = solve_c_gaussian_ou(1.0, 0.0, law.mean, law.variance).c
    atoms = gaussian_quantile_measure(law, 200_000)
    empirical = solve_c_empirical(1.0 * (0.0 - atoms.atoms), atoms.weights).c
    assert closed == pytest.approx(empirical, abs=5e-3)


def test_gaussian_negative_drift_limit():
    assert solve_c_gaussian_ou(1.0, 0.0, 50.0, 0.5).c == 0.0


def test_gaussian_point_mass_limit():
    assert solve_c_gaussian_ou(2.0, 0.3, 0.3, 1e-12).c < 1e-5


def test_gaussian_rejects_bad_parameters():
    with pytest.raises(ThresholdSolverError):
        solve_c_gaussian_ou(0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ThresholdSolverError):
        solve_c_gaussian_ou(1.0, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("scale", [0.5, 3.0, 10.0])
def test_threshold_is_positively_homogeneous(scale, rng):
    for _ in range(20):
        n = int(rng.integers(1, 100))
        b = rng.uniform(-10.0, 10.0, size=n)
        w = np.full(n, 1.0 / n)
        c = solve_c_empirical(b, w).c
        assert solve_c_empirical(scale * b, w).c == pytest.approx(scale * c, rel=1e-12, abs=1e-12)


def test_constant_sign_closed_forms_on_random_measures(rng):
    for _ in range(50):
        n = int(rng.integers(1, 300))
        w = rng.random(n) + 0.01
        w = w / w.sum()
        w[-1] = 1.0 - w[:-1].sum()
        positive = rng.uniform(0.0, 10.0, size=n)
        negative = rng.uniform(-10.0, -1e-3, size=n)
        assert solve_c_empirical(positive, w).c == pytest.approx(float(np.sum(w * positive)), rel=1e-12)
        assert solve_c_empirical(negative, w).c == 0.0


def test_bisection_refuses_collapsed_bracket(monkeypatch):
    # a jump at 1/4 that no float c can bring within tolerance
    monkeypatch.setattr(threshold, "threshold_residual", lambda c, b, w: -1.0 if c < 0.25 else 1.0)
    with pytest.raises(ThresholdSolverError, match="collapsed"):
        solve_c_empirical([-1.0, 1.0], [0.5, 0.5], method=BISECTION)


def test_safeguarded_newton_refuses_stalled_bracket():
    # x * x - 2 has no floating-point zero, so a tolerance of 1e-300 cannot be met
    with pytest.raises(ThresholdSolverError):
        safeguarded_newton(lambda x: x * x - 2.0, lambda x: 2.0 * x, 0.0, 2.0, 1e-300)
