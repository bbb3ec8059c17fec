"""Levy-walk swarm models at three scales: agents, fractional diffusion, swarming transport."""

__version__ = "0.1.0"

from .coefficients import ClosureCoeffs, ModelParams, ParameterError, closure_coeffs, validate_scaling  # noqa: E402
from .grid import Grid2D  # noqa: E402

__all__ = ["ClosureCoeffs", "Grid2D", "ModelParams", "ParameterError", "closure_coeffs", "validate_scaling", "__version__"]
