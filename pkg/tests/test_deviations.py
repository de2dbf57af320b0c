import numpy as np
import pytest

from deviations import (
    ALWAYS_HOLD,
    DeviationStrategy,
    default_deviation_family,
    deviation_from_dict,
    deviation_to_dict,
)
from errors import ConfigError

PI = np.array([1.0, 0.0, 1.0])
STATES = np.array([-1.0, 0.5, 2.0])


def test_fixed_deviations():
    np.testing.assert_array_equal(DeviationStrategy.never_hold().beta(PI, STATES), [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(DeviationStrategy.always_hold().beta(PI, STATES), [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(DeviationStrategy.anti_bang_bang().beta(PI, STATES), [0.0, 1.0, 0.0])


def test_null_deviation_copies_base_row():
    beta = DeviationStrategy.null().beta(PI, STATES)
    np.testing.assert_array_equal(beta, PI)
    assert beta is not PI


def test_custom_table_is_interpolated_and_clamped():
    deviation = DeviationStrategy.custom("ramp", [0.0, 1.0], [0.0, 1.0])
    np.testing.assert_array_equal(deviation.beta(PI, STATES), [0.0, 0.5, 1.0])
    assert deviation.name == "ramp"


@pytest.mark.parametrize("table_x, table_beta", [
    ([0.0, 1.0], [0.0]),
    ([0.0, 1.0], [0.0, 1.5]),
    ([1.0, 0.0], [0.0, 1.0]),
    ([], []),
])
def test_custom_table_validation(table_x, table_beta):
    with pytest.raises(ConfigError):
        DeviationStrategy.custom("bad", table_x, table_beta)


def test_unknown_kind():
    with pytest.raises(ConfigError):
        DeviationStrategy("sometimes_hold")


def test_default_family_names():
    assert [d.name for d in default_deviation_family()] == ["never_hold", "always_hold", "anti_bang_bang"]


def test_dict_round_trip():
    custom = DeviationStrategy.custom("ramp", [0.0, 1.0], [0.2, 0.8])
    assert deviation_from_dict(deviation_to_dict(custom)) == custom
    assert deviation_from_dict({"kind": ALWAYS_HOLD}).name == "always_hold"
