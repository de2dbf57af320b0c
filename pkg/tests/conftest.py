import os
import sys

import numpy as np
import pytest

# Modules live flat in src/app and import each other by bare name
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src", "app"))

from models import CoefficientModel, ConstantSignVariant, OUVariant  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def ou_model():
    return CoefficientModel(OUVariant(theta=1.0, mbar=-0.5, sigbar=1.0))


@pytest.fixture
def negative_model():
    return CoefficientModel(ConstantSignVariant(b0=-1.0, sig0=0.7))
