"""
Exception hierarchy shared by the laboratory modules.

The CLI maps validation errors to exit code 2 and numerical failures to
exit code 3.
"""

from typing import Optional


class MutualHoldingError(Exception):
    """Base class for all errors raised by the laboratory"""


class InvalidMeasureError(MutualHoldingError, ValueError):
    """Empty, non-finite or badly weighted measure input"""


class ModelAssumptionError(MutualHoldingError, ValueError):
    """Invalid coefficient model or a model outside the standing assumptions"""


class InvalidStateError(MutualHoldingError, ValueError):
    """Non-finite state passed to a coefficient evaluation"""


class ConfigError(MutualHoldingError):
    """Malformed or incomplete run configuration"""


class ThresholdSolverError(MutualHoldingError, ArithmeticError):
    """The threshold fixed point could not be solved"""


class CoefficientError(MutualHoldingError, ArithmeticError):
    """Singular interaction matrix or closed-form mismatch"""


class SimulationError(MutualHoldingError, RuntimeError):
    """A simulation produced a non-finite state"""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


VALIDATION_ERRORS = (InvalidMeasureError, ModelAssumptionError, ConfigError)
NUMERICAL_ERRORS = (InvalidStateError, ThresholdSolverError, CoefficientError, SimulationError)
