import numpy as np
import pytest

from levyswarm.coefficients import ClosureCoeffs
from levyswarm.grid import Grid2D


def make_coeffs(ratio: float = 1.0, f_slope: float = 0.0, g_slope: float = 0.0) -> ClosureCoeffs:
    """Synthetic closure constants with C_alpha / f_const = ratio."""
    return ClosureCoeffs(
        c_alpha=ratio, f_const=1.0, f_slope=f_slope, g_slope=g_slope, z=0.0, a0=0.5, a1=0.5, a3=0.0,
        cc0=0.0, cc1=0.0, cc2=0.0, b=8.0, A=0.5, B=0.886227, degenerate=True,
    )


@pytest.fixture
def periodic_2pi():
    return Grid2D(32, 32, 2 * np.pi, 2 * np.pi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
