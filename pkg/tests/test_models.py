import numpy as np
import pytest

from errors import InvalidStateError, ModelAssumptionError
from models import (
    CoefficientModel,
    ConstantSignVariant,
    OUVariant,
    TabulatedVariant,
    eval_b,
    eval_sigma,
    growth_bounds,
    model_from_dict,
    model_to_dict,
    validate_assumptions,
)


def ou(theta=1.0, mbar=0.0, sigbar=1.0, **kwargs):
    return CoefficientModel(OUVariant(theta, mbar, sigbar), **kwargs)


def test_ou_drift():
    assert eval_b(ou(theta=1.0, mbar=0.0), 0.0, 2.0) == -2.0
    assert eval_b(ou(theta=2.0, mbar=1.0), 0.0, 1.0) == 0.0


def test_ou_volatility_constant():
    model = ou(sigbar=1.5)
    np.testing.assert_array_equal(eval_sigma(model, 0.3, np.array([-4.0, 0.0, 9.0])), [1.5, 1.5, 1.5])


def test_constant_sign_volatility():
    model = CoefficientModel(ConstantSignVariant(b0=-1.0, sig0=2.0))
    assert eval_sigma(model, 0.0, 123.0) == 2.0
    assert eval_b(model, 0.0, -7.0) == -1.0


def test_tabulated_interpolation():
    model = CoefficientModel(TabulatedVariant((0.0, 1.0), (-1.0, 1.0), (1.0, 3.0)))
    assert eval_b(model, 0.0, 0.25) == pytest.approx(-0.5)
    assert eval_sigma(model, 0.0, 0.5) == pytest.approx(2.0)
    # clamped outside the table
    assert eval_b(model, 0.0, 5.0) == 1.0


def test_tabulated_time_dependent_reads_time():
    model = CoefficientModel(TabulatedVariant((0.0, 1.0), (-1.0, 1.0), (1.0, 1.0), time_dependent=True))
    np.testing.assert_array_equal(eval_b(model, 0.5, np.array([-3.0, 3.0])), [0.0, 0.0])


def test_scalar_in_scalar_out():
    assert isinstance(eval_b(ou(), 0.0, 1.0), float)
    assert isinstance(eval_b(ou(), 0.0, np.array([1.0])), np.ndarray)


def test_sigma_floor_applies_at_evaluation():
    model = CoefficientModel(TabulatedVariant((0.0, 1.0), (0.0, 0.0), (0.0, 1.0)), sigma_floor=1e-3)
    assert eval_sigma(model, 0.0, 0.0) == 1e-3


def test_drift_bound_clips():
    model = ou(theta=1.0, mbar=0.0, drift_bound=0.5)
    np.testing.assert_array_equal(eval_b(model, 0.0, np.array([-10.0, 0.2, 10.0])), [0.5, -0.2, -0.5])
    assert model.is_bounded
    assert not ou().is_bounded


def test_nonfinite_state_rejected():
    with pytest.raises(InvalidStateError):
        eval_b(ou(), 0.0, np.array([0.0, np.inf]))


@pytest.mark.parametrize("build", [
    lambda: OUVariant(0.0, 0.0, 1.0),
    lambda: OUVariant(1.0, 0.0, -1.0),
    lambda: ConstantSignVariant(1.0, 0.0),
    lambda: TabulatedVariant((0.0, 0.0), (1.0, 1.0), (1.0, 1.0)),
    lambda: TabulatedVariant((0.0, 1.0), (1.0,), (1.0, 1.0)),
    lambda: CoefficientModel(OUVariant(1.0, 0.0, 1.0), sigma_floor=0.0),
])
def test_invalid_models(build):
    with pytest.raises(ModelAssumptionError):
        build()


def test_validate_ou_passes():
    report = validate_assumptions(ou(), np.linspace(-3, 3, 31))
    assert report.passed
    assert report.drift_sign == "mixed"
    assert not report.bounded


def test_validate_reports_zero_volatility_entry():
    model = CoefficientModel(TabulatedVariant((0.0, 1.0, 2.0), (1.0, 1.0, 1.0), (1.0, 0.0, 1.0)))
    report = validate_assumptions(model, [0.0, 1.0, 2.0])
    assert not report.passed
    assert report.violations == [(1.0, 0.0)]
    assert any("grid point 1" in m for m in report.messages)


def test_validate_flags_negative_drift():
    model = CoefficientModel(ConstantSignVariant(b0=-1.0, sig0=1.0))
    report = validate_assumptions(model, [0.0, 1.0])
    assert report.drift_sign == "negative"
    assert report.constant_sign
    assert "drift negative everywhere" in report.messages


def test_growth_bounds_ou():
    g, s = growth_bounds(ou(theta=2.0, mbar=-3.0, sigbar=0.5))
    assert g == 6.0
    assert s == 0.5


def test_model_dict_round_trip():
    model = ou(theta=1.5, mbar=-0.5, sigbar=0.8, drift_bound=4.0)
    assert model_from_dict(model_to_dict(model)) == model


def test_model_from_dict_missing_key():
    with pytest.raises(ModelAssumptionError, match="sig0"):
        model_from_dict({"kind": "constant_sign", "b0": 1.0})
    with pytest.raises(ModelAssumptionError):
        model_from_dict({"kind": "jump"})
