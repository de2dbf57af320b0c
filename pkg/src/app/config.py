"""
Configuration module for the mutual holding laboratory.

Settings are grouped by concern and can be overridden through environment
variables (or a .env file next to the working directory):
1. Solver tolerances and the volatility floor
2. Simulation defaults (particles, steps, threads, replications)
3. Output settings (directory, float format, manifest name)
4. The parameter grid of the one-step illustration
"""

import os
from typing import Dict, List

from dotenv import load_dotenv

# Load environment variables if .env file exists
load_dotenv()


class SolverConfig:
    # Absolute tolerance on the threshold fixed-point residual
    THRESHOLD_TOL = float(os.getenv("MFH_THRESHOLD_TOL", 1e-12))
    MAX_ITERATIONS = int(os.getenv("MFH_MAX_ITERATIONS", 200))

    # sigma is floored at this value everywhere it is evaluated
    SIGMA_FLOOR = float(os.getenv("MFH_SIGMA_FLOOR", 1e-8))

    # Closed-form vs dense-solve agreement for the N-player coefficients
    COEFFICIENT_CHECK_TOL = 1e-10


class SimulationDefaults:
    N_PARTICLES = int(os.getenv("MFH_N_PARTICLES", 10_000))
    N_STEPS = int(os.getenv("MFH_N_STEPS", 50))
    HORIZON = float(os.getenv("MFH_HORIZON", 1.0))
    THREADS = int(os.getenv("MFH_THREADS", 1))

    # nash-gap estimator
    REPLICATIONS = int(os.getenv("MFH_REPLICATIONS", 2000))
    MIN_REPLICATIONS = 100

    # KDE tables
    GRID_POINTS = 512
    GRID_PADDING_BANDWIDTHS = 8.0


class OutputConfig:
    OUTPUT_DIR = os.getenv("MFH_OUTPUT_DIR", "mfh_output")

    # CSV dialect: header row, comma separated, UTF-8, LF line endings
    FLOAT_FORMAT = "%.17g"
    CSV_ENCODING = "utf-8"
    LINE_TERMINATOR = "\n"

    MANIFEST_NAME = "run_manifest"
    CONSOLE_DIGITS = 12


class ParameterGrid:
    # One-step illustration sweep
    THETAS = [0.5, 1.0, 2.0, 5.0]
    MBARS = [-1.0, -0.5, 0.0, 0.5]
    SIGBARS = [0.5, 1.0, 2.0]

    # Default Ornstein-Uhlenbeck provisions
    DEFAULT_OU = {"theta": 1.0, "mbar": -0.5, "sigbar": 1.0}


def get_sweep_grid() -> Dict[str, List[float]]:
    """Get the one-step sweep grid as a dict of parameter lists"""
    return {
        "theta": list(ParameterGrid.THETAS),
        "mbar": list(ParameterGrid.MBARS),
        "sigbar": list(ParameterGrid.SIGBARS),
    }


def validate_config() -> List[str]:
    """Validate configuration and warn about unusual settings"""
    warnings = []

    if OutputConfig.OUTPUT_DIR == "mfh_output":
        warnings.append("Using default output directory - consider setting MFH_OUTPUT_DIR")

    cpu_count = os.cpu_count() or 1
    if SimulationDefaults.THREADS > cpu_count:
        warnings.append(
            f"MFH_THREADS={SimulationDefaults.THREADS} exceeds the {cpu_count} available CPUs"
        )

    if SolverConfig.THRESHOLD_TOL > 1e-8:
        warnings.append("MFH_THRESHOLD_TOL is loose - holding indicators near the threshold may flip")

    if SolverConfig.SIGMA_FLOOR <= 0:
        warnings.append("MFH_SIGMA_FLOOR must be positive - volatility floor disabled")

    return warnings
