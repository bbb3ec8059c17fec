"""Swarming (u, Lambda) system: explicit upwind transport plus projected direction update.

Periodic grids only. Lambda is a unit vector field of shape ``(2, nx, ny)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import (
    DEGENERATE_C0,
    ClosureCoeffs,
    ModelParams,
    ParameterError,
    VonMises,
    check_normalized,
    closure_z,
    hyperbolic_coeffs,
)
from .grid import Grid2D
from .rng import von_mises_angles

U_FLOOR = 1e-12
CFL_MAX = 0.5
UNIT_TOL = 1e-12


class DegenerateClosure(ParameterError):
    pass


class CFLViolation(ValueError):
    pass


@dataclass(frozen=True)
class HyperSystem:
    """Coefficients of the swarming system.

    ``speed`` is the transport speed z c0 (1 - zeta) of the density.
    """

    speed: float
    cc0: float
    cc1: float
    cc2: float

    @classmethod
    def from_params(cls, params: ModelParams) -> "HyperSystem":
        h = hyperbolic_coeffs(params.align_dist, params.zeta, params.c0)
        return cls(params.c0 * h.cc0, h.cc0, h.cc1, h.cc2)

    @classmethod
    def from_coeffs(cls, coeffs: ClosureCoeffs, c0: float) -> "HyperSystem":
        return cls(c0 * coeffs.cc0, coeffs.cc0, coeffs.cc1, coeffs.cc2)

    def check(self) -> None:
        if abs(self.cc0) < DEGENERATE_C0:
            raise DegenerateClosure(f"|C0| = {abs(self.cc0):.3g} < {DEGENERATE_C0}: direction equation ill-posed")

    def max_dt(self, grid: Grid2D) -> float:
        return math.inf if self.speed == 0 else CFL_MAX * min(grid.hx, grid.hy) / abs(self.speed)


@dataclass
class HyperState:
    u: np.ndarray
    lam: np.ndarray
    time: float = 0.0
    floor_cells: int = 0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if self.lam.shape != (2,) + self.u.shape:
            raise ValueError(f"lam has shape {self.lam.shape}, expected {(2,) + self.u.shape}")
        norm = np.hypot(self.lam[0], self.lam[1])
        if np.any(norm == 0.0):
            raise ValueError("direction field has zero vectors")
        if np.abs(norm - 1.0).max() > UNIT_TOL:
            self.lam = self.lam / norm

    def copy(self) -> "HyperState":
        return HyperState(self.u.copy(), self.lam.copy(), self.time, self.floor_cells)


def _ddx(f, h, axis):
    return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2.0 * h)


def _upwind_div(u, vx, vy, grid: Grid2D):
    """Divergence of u v with first-order upwind face fluxes."""
    out = np.zeros_like(u)
    for vel, h, axis in ((vx, grid.hx, 0), (vy, grid.hy, 1)):
        u_r = np.roll(u, -1, axis)
        a = 0.5 * (vel + np.roll(vel, -1, axis))
        flux = np.where(a > 0.0, a * u, a * u_r)
        out += (flux - np.roll(flux, 1, axis)) / h
    return out


def hyper_step(state: HyperState, system: HyperSystem, grid: Grid2D, dt: float) -> HyperState:
    """One explicit step.

    Density: conservative upwind transport with velocity speed * Lambda.
    Direction: central differences for -(C1/C0)(Lambda.grad)Lambda - (C2/(C0 u)) P_perp grad u,
    then projection to unit length. Cells with zero increment are left untouched.
    """
    system.check()
    if grid.boundary_mode != "periodic":
        raise ValueError("the swarming solver supports periodic grids only")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > system.max_dt(grid) * (1.0 + 1e-12):
        raise CFLViolation(f"dt = {dt} exceeds CFL limit {system.max_dt(grid):.6g}")
    u, lam = state.u, state.lam
    lx, ly = lam

    u_new = u - dt * system.speed * _upwind_div(u, lx, ly, grid)

    gux, guy = _ddx(u, grid.hx, 0), _ddx(u, grid.hy, 1)
    proj = lx * gux + ly * guy
    px, py = gux - proj * lx, guy - proj * ly
    uf = np.maximum(u, U_FLOOR)
    r1 = system.cc1 / system.cc0
    r2 = system.cc2 / (system.cc0 * uf)
    adv = [lx * _ddx(c, grid.hx, 0) + ly * _ddx(c, grid.hy, 1) for c in (lx, ly)]
    inc = np.stack((-r1 * adv[0] - r2 * px, -r1 * adv[1] - r2 * py)) * dt

    moved = np.any(inc != 0.0, axis=0)
    lam_new = lam.copy()
    if moved.any():
        cand = lam[:, moved] + inc[:, moved]
        norm = np.hypot(cand[0], cand[1])
        if np.any(norm == 0.0):
            raise FloatingPointError("direction update produced a zero vector")
        lam_new[:, moved] = cand / norm
    return HyperState(u_new, lam_new, state.time + dt, int(np.count_nonzero(u < U_FLOOR)))


@dataclass
class HyperRun:
    times: list[float]
    states: list[HyperState]
    stats: dict = field(default_factory=dict)

    @property
    def final(self) -> HyperState:
        return self.states[-1]


def run_hyper(
    state: HyperState, system: HyperSystem, grid: Grid2D, dt: float, t_end: float, store_every: int = 1
) -> HyperRun:
    n_steps = int(math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    mass0 = grid.integrate(state.u)
    times, states = [state.time], [state.copy()]
    stats = {"n_steps": n_steps, "max_relative_mass_drift": 0.0, "max_unit_error": 0.0, "floor_cells_max": 0,
             "min_u": float(state.u.min())}
    s = state
    for k in range(1, n_steps + 1):
        step_dt = min(dt, t_end - (k - 1) * dt)
        prev = grid.integrate(s.u)
        s = hyper_step(s, system, grid, step_dt)
        mass = grid.integrate(s.u)
        stats["max_relative_mass_drift"] = max(stats["max_relative_mass_drift"], abs(mass - prev) / max(abs(prev), 1e-300))
        stats["max_unit_error"] = max(stats["max_unit_error"], float(np.abs(np.hypot(*s.lam) - 1.0).max()))
        stats["floor_cells_max"] = max(stats["floor_cells_max"], s.floor_cells)
        stats["min_u"] = min(stats["min_u"], float(s.u.min()))
        if k % store_every == 0 or k == n_steps:
            times.append(s.time)
            states.append(s.copy())
    stats["relative_mass_change"] = abs(grid.integrate(s.u) - mass0) / max(abs(mass0), 1e-300)
    return HyperRun(times, states, stats)


# --------------------------------------------------------------------------
# leading-order closure check
# --------------------------------------------------------------------------


@dataclass
class ClosureReport:
    zeta: float
    n_samples: int
    direction: tuple[float, float]
    empirical: tuple[float, float]
    expected: tuple[float, float]
    tolerance: float

    @property
    def error(self) -> float:
        return math.hypot(self.empirical[0] - self.expected[0], self.empirical[1] - self.expected[1])

    @property
    def passes(self) -> bool:
        return self.error <= self.tolerance

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(error=self.error, passes=self.passes)
        return d


def closure_check(align_dist, zeta: float, n_samples: int, rng, direction=(1.0, 0.0)) -> ClosureReport:
    """Sample from (1 - zeta) Phi(Lambda . theta) + zeta / |S| and compare the first moment with z (1 - zeta) Lambda.

    ``align_dist`` must be a :class:`VonMises` (kappa = 0 is uniform).
    ``rng`` provides ``random(n)`` uniforms on [0, 1).
    """
    if not 0.0 <= zeta <= 1.0:
        raise ParameterError(f"zeta = {zeta} not in [0, 1]")
    if not isinstance(align_dist, VonMises):
        raise TypeError("closure_check samples von Mises alignment laws only")
    check_normalized(align_dist)
    d = np.asarray(direction, dtype=float)
    d = d / np.hypot(*d)
    z = closure_z(align_dist)

    uniform_branch = rng.random(n_samples) < zeta
    ang = von_mises_angles(align_dist.kappa, n_samples, _slot_draw(rng, n_samples))
    ang = np.where(uniform_branch, 2.0 * math.pi * rng.random(n_samples), ang)
    base = math.atan2(d[1], d[0])
    emp = (float(np.mean(np.cos(base + ang))), float(np.mean(np.sin(base + ang))))
    exp = (float(z * (1.0 - zeta) * d[0]), float(z * (1.0 - zeta) * d[1]))
    return ClosureReport(zeta, n_samples, (float(d[0]), float(d[1])), emp, exp, 3.0 / math.sqrt(n_samples) + 1e-3)


def _slot_draw(rng, n: int):
    if hasattr(rng, "slot_sampler"):
        return rng.slot_sampler(n)
    cache: dict[int, np.ndarray] = {}

    def draw(slot: int) -> np.ndarray:
        if slot not in cache:
            cache[slot] = rng.random(n)
        return cache[slot]

    return draw


__all__ = [
    "CFLViolation",
    "ClosureReport",
    "DegenerateClosure",
    "HyperRun",
    "HyperState",
    "HyperSystem",
    "closure_check",
    "hyper_step",
    "run_hyper",
]
