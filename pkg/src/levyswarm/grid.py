"""Cell-centred rectangular grids shared by the field solvers and histograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BOUNDARY_MODES = ("periodic", "neumann_mirror")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    """``nx`` by ``ny`` cells on ``[0, lx] x [0, ly]``; arrays are indexed ``[ix, iy]``."""

    nx: int
    ny: int
    lx: float
    ly: float
    boundary_mode: str = "periodic"

    def __post_init__(self):
        for name in ("nx", "ny"):
            v = getattr(self, name)
            if v < 16 or v % 2:
                raise GridError(f"{name} = {v} must be even and >= 16")
        if self.lx <= 0 or self.ly <= 0:
            raise GridError("grid lengths must be positive")
        if self.boundary_mode not in BOUNDARY_MODES:
            raise GridError(f"boundary_mode must be one of {BOUNDARY_MODES}, got {self.boundary_mode!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    @property
    def y(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.hy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def integrate(self, values: np.ndarray) -> float:
        """Midpoint rule."""
        return float(np.sum(values) * self.cell_area)

    def with_shape(self, nx: int, ny: int) -> "Grid2D":
        return Grid2D(nx, ny, self.lx, self.ly, self.boundary_mode)

    def histogram(self, positions: np.ndarray) -> np.ndarray:
        """Point counts per cell; points on the far edge land in the last cell."""
        ix = np.clip((positions[:, 0] / self.hx).astype(np.int64), 0, self.nx - 1)
        iy = np.clip((positions[:, 1] / self.hy).astype(np.int64), 0, self.ny - 1)
        return np.bincount(ix * self.ny + iy, minlength=self.nx * self.ny).reshape(self.shape).astype(float)
