"""Fractional diffusion with density-dependent mobility on a rectangle.

Solves du/dt = div( (C_alpha / F(u)) grad^{alpha-1} u ) where grad^{alpha-1}
is the Fourier multiplier i xi |xi|^{alpha-2}, so that its divergence is
-(-Laplacian)^{alpha/2}. Boundaries are periodic, or Neumann approximated by
even reflection onto a doubled periodic domain. Time stepping is implicit
Euler with the mobility lagged one step; the inner linear solve is diagonal
in Fourier space for constant mobility and matrix-free GMRES with a spectral
preconditioner otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy.sparse.linalg import LinearOperator, gmres

from .coefficients import ClosureCoeffs
from .grid import Grid2D

MOBILITY_MODES = ("constant", "nonlinear")
NEGATIVE_TOL = -1e-12


class SolverError(RuntimeError):
    def __init__(self, message: str, step: int | None = None, residual: float | None = None):
        prefix = f"step {step}: " if step is not None else ""
        super().__init__(prefix + message)
        self.step = step
        self.residual = residual


class SingularMobility(SolverError):
    pass


# --------------------------------------------------------------------------
# spectral machinery
# --------------------------------------------------------------------------


class Spectral:
    """Wavenumbers and extension maps for one grid.

    In ``neumann_mirror`` mode scalar fields are extended evenly to a doubled
    periodic domain; x-components of vector fields are odd in x and even in
    y (and conversely for y-components).
    """

    def __init__(self, grid: Grid2D, workers: int = 1):
        self.grid = grid
        self.workers = workers
        self.mirror = grid.boundary_mode == "neumann_mirror"
        f = 2 if self.mirror else 1
        self.ext_shape = (f * grid.nx, f * grid.ny)
        nx, ny = self.ext_shape
        kx = 2.0 * math.pi * sfft.fftfreq(nx, d=grid.hx)
        ky = 2.0 * math.pi * sfft.rfftfreq(ny, d=grid.hy)
        self.KX, self.KY = np.meshgrid(kx, ky, indexing="ij")
        self.K = np.hypot(self.KX, self.KY)
        # odd derivatives drop the Nyquist modes so real fields stay real
        kxn = kx.copy()
        kxn[nx // 2] = 0.0
        kyn = ky.copy()
        kyn[-1] = 0.0
        self.KXn, self.KYn = np.meshgrid(kxn, kyn, indexing="ij")
        self._pow_cache: dict[float, np.ndarray] = {}

    def k_pow(self, p: float) -> np.ndarray:
        """|xi|**p with the zero mode set to 0."""
        if p not in self._pow_cache:
            out = np.zeros_like(self.K)
            nz = self.K > 0
            out[nz] = self.K[nz] ** p
            self._pow_cache[p] = out
        return self._pow_cache[p]

    # extension / restriction
    def extend(self, u: np.ndarray, parity=(1, 1)) -> np.ndarray:
        if not self.mirror:
            return u
        px, py = parity
        top = np.concatenate((u, px * u[::-1, :]), axis=0)
        return np.concatenate((top, py * top[:, ::-1]), axis=1)

    def restrict(self, v: np.ndarray) -> np.ndarray:
        if not self.mirror:
            return v
        return v[: self.grid.nx, : self.grid.ny]

    def fwd(self, v: np.ndarray) -> np.ndarray:
        return sfft.rfft2(v, workers=self.workers)

    def inv(self, vh: np.ndarray) -> np.ndarray:
        return sfft.irfft2(vh, s=self.ext_shape, workers=self.workers)

    # operators on extended arrays
    def grad_frac_hat(self, vh: np.ndarray, alpha: float):
        m = self.k_pow(alpha - 2.0)
        return 1j * self.KXn * m * vh, 1j * self.KYn * m * vh

    def div_ext(self, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
        return self.inv(1j * self.KXn * self.fwd(fx) + 1j * self.KYn * self.fwd(fy))


_SPECTRAL_CACHE: dict[tuple, Spectral] = {}


def spectral_for(grid: Grid2D, workers: int = 1) -> Spectral:
    key = (grid, workers)
    sp = _SPECTRAL_CACHE.get(key)
    if sp is None:
        if len(_SPECTRAL_CACHE) > 32:
            _SPECTRAL_CACHE.clear()
        sp = _SPECTRAL_CACHE[key] = Spectral(grid, workers)
    return sp


def _check_alpha(alpha: float) -> None:
    if not 1.0 < alpha <= 2.0:
        raise ValueError(f"alpha = {alpha} not in (1, 2]")


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------


def frac_gradient(u: np.ndarray, alpha: float, grid: Grid2D, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Fractional gradient with multiplier i xi |xi|^(alpha-2); the classical gradient at alpha = 2."""
    _check_alpha(alpha)
    sp = spectral_for(grid, workers)
    gx, gy = sp.grad_frac_hat(sp.fwd(sp.extend(np.asarray(u, dtype=float))), alpha)
    return sp.restrict(sp.inv(gx)), sp.restrict(sp.inv(gy))


def divergence(wx: np.ndarray, wy: np.ndarray, grid: Grid2D, workers: int = 1) -> np.ndarray:
    """Spectral divergence of a vector field with the grid's boundary parity."""
    sp = spectral_for(grid, workers)
    return sp.restrict(sp.div_ext(sp.extend(wx, (-1, 1)), sp.extend(wy, (1, -1))))


def frac_laplacian(u: np.ndarray, alpha: float, grid: Grid2D, workers: int = 1) -> np.ndarray:
    """-(-Laplacian)^(alpha/2) u."""
    _check_alpha(alpha)
    sp = spectral_for(grid, workers)
    return sp.restrict(sp.inv(-sp.k_pow(alpha) * sp.fwd(sp.extend(u))))


def mobility_field(u: np.ndarray, coeffs: ClosureCoeffs, mobility_mode: str) -> np.ndarray | float:
    """C_alpha / F(u), or C_alpha / f_const in constant mode."""
    if mobility_mode not in MOBILITY_MODES:
        raise ValueError(f"mobility_mode must be one of {MOBILITY_MODES}")
    if mobility_mode == "constant":
        if coeffs.f_const <= 0:
            raise SingularMobility(f"constant mobility F = {coeffs.f_const} <= 0")
        return coeffs.c_alpha / coeffs.f_const
    F = coeffs.mobility(u)
    fmin = float(np.min(F))
    if fmin <= 0.0:
        raise SingularMobility(f"F(u) <= 0 somewhere (min {fmin:.3g})")
    return coeffs.c_alpha / F


def apply_generator(
    u: np.ndarray, coeffs: ClosureCoeffs, mobility_mode: str, alpha: float, grid: Grid2D, workers: int = 1
) -> np.ndarray:
    """div( (C_alpha / F(u)) grad^{alpha-1} u ), mobility evaluated at ``u`` itself."""
    _check_alpha(alpha)
    m = mobility_field(u, coeffs, mobility_mode)
    return _generator_frozen(u, m, alpha, spectral_for(grid, workers))


def _generator_frozen(v: np.ndarray, m, alpha: float, sp: Spectral) -> np.ndarray:
    vh = sp.fwd(sp.extend(v))
    if np.isscalar(m):
        return sp.restrict(sp.inv(-m * sp.k_pow(alpha) * vh))
    gx, gy = sp.grad_frac_hat(vh, alpha)
    me = sp.extend(m)
    return sp.restrict(sp.div_ext(me * sp.inv(gx), me * sp.inv(gy)))


# --------------------------------------------------------------------------
# time stepping
# --------------------------------------------------------------------------


@dataclass
class SolverConfig:
    dt: float
    t_end: float
    coeffs: ClosureCoeffs
    alpha: float
    linear_solver_tol: float = 1e-10
    linear_solver_max_iter: int = 500
    mobility_mode: str = "nonlinear"
    store_every: int = 1
    workers: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt = {self.dt} not > 0")
        if self.t_end < 0:
            raise ValueError(f"t_end = {self.t_end} not >= 0")
        if not (self.linear_solver_tol > 0 and self.linear_solver_max_iter > 0):
            raise ValueError("linear solver tolerances must be positive")
        if self.mobility_mode not in MOBILITY_MODES:
            raise ValueError(f"mobility_mode must be one of {MOBILITY_MODES}")
        if self.store_every < 1:
            raise ValueError("store_every must be >= 1")
        _check_alpha(self.alpha)


@dataclass
class StepInfo:
    iterations: int = 0
    residual: float = 0.0


def step_implicit(
    u_n: np.ndarray,
    config: SolverConfig,
    grid: Grid2D,
    dt: float | None = None,
    info: StepInfo | None = None,
    rhs: np.ndarray | None = None,
) -> np.ndarray:
    """One lagged-mobility implicit Euler step: (I - dt G(u_n)) u_{n+1} = rhs.

    ``rhs`` defaults to ``u_n``. The mean is carried separately, so mass is
    preserved to rounding whenever ``rhs`` has the mass of ``u_n``.
    """
    dt = config.dt if dt is None else dt
    sp = spectral_for(grid, config.workers)
    u_n = np.asarray(u_n, dtype=float)
    m = mobility_field(u_n, config.coeffs, config.mobility_mode)
    rhs = u_n if rhs is None else np.asarray(rhs, dtype=float)
    if np.all(rhs == rhs.flat[0]):
        # constants are equilibria; skip the transform round-off
        if info is not None:
            info.iterations, info.residual = 0, 0.0
        return rhs.copy()
    mean = float(rhs.mean())
    b = rhs - mean
    kpow = sp.k_pow(config.alpha)

    if np.isscalar(m):
        v = sp.restrict(sp.inv(sp.fwd(sp.extend(b)) / (1.0 + dt * m * kpow)))
        if info is not None:
            info.iterations, info.residual = 0, 0.0
    else:
        v = _krylov_solve(b, m, dt, config, sp, np.linalg.norm(u_n), info)
    v -= v.mean()
    return mean + v


def _krylov_solve(b, m, dt, config: SolverConfig, sp: Spectral, u_norm: float, info: StepInfo | None):
    shape = b.shape
    n = b.size
    alpha = config.alpha

    def matvec(x):
        x = x.reshape(shape)
        return (x - dt * _generator_frozen(x, m, alpha, sp)).ravel()

    # constant-coefficient inverse at the smallest mobility C_alpha / F_max
    m_ref = float(np.min(m))
    denom = 1.0 + dt * m_ref * sp.k_pow(alpha)

    def precond(x):
        return sp.restrict(sp.inv(sp.fwd(sp.extend(x.reshape(shape))) / denom)).ravel()

    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    M = LinearOperator((n, n), matvec=precond, dtype=float)
    target = config.linear_solver_tol * max(u_norm, np.finfo(float).tiny)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    used = 0
    residual = bnorm
    if bnorm <= target:
        return b.copy()
    counter = [0]

    def cb(_):
        counter[0] += 1

    while used < config.linear_solver_max_iter:
        budget = config.linear_solver_max_iter - used
        restart = min(50, budget)
        counter[0] = 0
        x, _ = gmres(
            A, b.ravel(), x0=x, rtol=0.0, atol=0.1 * target, restart=restart, maxiter=max(1, budget // restart),
            M=M, callback=cb, callback_type="pr_norm",
        )
        used += max(counter[0], 1)
        residual = float(np.linalg.norm(b.ravel() - matvec(x)))
        if residual <= target:
            break
    if info is not None:
        info.iterations, info.residual = used, residual
    if residual > target:
        raise SolverError(
            f"linear solve did not converge in {config.linear_solver_max_iter} iterations "
            f"(residual {residual:.3e} > {target:.3e})",
            residual=residual,
        )
    return x.reshape(shape)


@dataclass
class Trajectory:
    times: list[float]
    fields: list[np.ndarray]
    steps: list[int]
    grid: Grid2D
    stats: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.fields[-1]


Observer = Callable[[int, float, np.ndarray], None]


def solve(
    u0: np.ndarray, config: SolverConfig, grid: Grid2D, observers: Sequence[Observer] = (), stepper=None
) -> Trajectory:
    """Integrate to ``t_end``, storing every ``store_every``-th step and both endpoints.

    Observers are called as ``obs(step, t, u)`` for every step including t=0.
    ``stepper(u, dt, step, info)`` replaces the default implicit step (used by the
    aligned solver).
    """
    u = np.array(u0, dtype=float)
    if u.shape != grid.shape:
        raise ValueError(f"u0 has shape {u.shape}, grid expects {grid.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("u0 has non-finite values")
    n_steps = int(math.ceil(config.t_end / config.dt - 1e-9)) if config.t_end > 0 else 0
    times, fields, steps = [0.0], [u.copy()], [0]
    for obs in observers:
        obs(0, 0.0, u)
    mass0 = grid.integrate(u)
    stats = {
        "n_steps": n_steps,
        "max_linear_iterations": 0,
        "total_linear_iterations": 0,
        "max_linear_residual": 0.0,
        "max_relative_mass_drift": 0.0,
        "min_value": float(u.min()),
        "negative_cells_max": int(np.count_nonzero(u < NEGATIVE_TOL)),
    }
    t = 0.0
    info = StepInfo()
    for k in range(1, n_steps + 1):
        dt = min(config.dt, config.t_end - t) if k == n_steps else config.dt
        prev_mass = grid.integrate(u)
        try:
            if stepper is None:
                u = step_implicit(u, config, grid, dt=dt, info=info)
            else:
                u = stepper(u, dt, k, info)
        except SolverError as exc:
            if exc.step is None:
                exc.step = k
                exc.args = (f"step {k}: {exc.args[0]}",)
            raise
        t = k * config.dt if k < n_steps else config.t_end
        mass = grid.integrate(u)
        stats["max_linear_iterations"] = max(stats["max_linear_iterations"], info.iterations)
        stats["total_linear_iterations"] += info.iterations
        stats["max_linear_residual"] = max(stats["max_linear_residual"], info.residual)
        stats["max_relative_mass_drift"] = max(
            stats["max_relative_mass_drift"], abs(mass - prev_mass) / max(abs(prev_mass), 1e-300)
        )
        stats["min_value"] = min(stats["min_value"], float(u.min()))
        stats["negative_cells_max"] = max(stats["negative_cells_max"], int(np.count_nonzero(u < NEGATIVE_TOL)))
        for obs in observers:
            obs(k, t, u)
        if k % config.store_every == 0 or k == n_steps:
            times.append(t)
            fields.append(u.copy())
            steps.append(k)
    stats["relative_mass_change"] = abs(grid.integrate(u) - mass0) / max(abs(mass0), 1e-300)
    return Trajectory(times, fields, steps, grid, stats)


# --------------------------------------------------------------------------
# initial data and coverage
# --------------------------------------------------------------------------


def initial_condition(
    grid: Grid2D, rho_diam: float, n_robots: int, centers=None, normalize_mass: bool = False
) -> np.ndarray:
    """max(1.2 exp(-|x - x_c|^2 / (rho N)) - 0.2, 0), x in cm from the arena centre.

    Several ``centers`` superpose one such cluster each.
    """
    s = rho_diam * n_robots
    if not s > 0:
        raise ValueError("rho_diam * n_robots must be > 0")
    if centers is None:
        centers = [(0.5 * grid.lx, 0.5 * grid.ly)]
    X, Y = grid.mesh()
    u = np.zeros(grid.shape)
    for cx, cy in centers:
        r2 = (X - cx) ** 2 + (Y - cy) ** 2
        u += np.maximum(1.2 * np.exp(-r2 / s) - 0.2, 0.0)
    if normalize_mass:
        u /= grid.integrate(u)
    return u


def initial_mass(rho_diam: float, n_robots: int) -> float:
    """Exact integral of one cluster over the plane: pi s (1 - 0.2 ln 6), s = rho N."""
    s = rho_diam * n_robots
    return math.pi * s * (1.0 - 0.2 * math.log(6.0))


def support_radius(rho_diam: float, n_robots: int) -> float:
    return math.sqrt(rho_diam * n_robots * math.log(6.0))


def covered_mass(u: np.ndarray, grid: Grid2D) -> float:
    """Midpoint sum of min(u, 1/|Omega|)."""
    return grid.integrate(np.minimum(u, 1.0 / grid.area))


@dataclass
class CoverageCurve:
    times: np.ndarray
    instantaneous: np.ndarray
    time_averaged: np.ndarray
    meta: dict = field(default_factory=dict)

    def at(self, t: float, which: str = "time_averaged") -> float:
        return float(np.interp(t, self.times, getattr(self, which)))

    def first_time_reaching(self, level: float, which: str = "time_averaged") -> float | None:
        series = getattr(self, which)
        idx = np.nonzero(series >= level)[0]
        if idx.size == 0:
            return None
        i = int(idx[0])
        if i == 0:
            return float(self.times[0])
        t0, t1, y0, y1 = self.times[i - 1], self.times[i], series[i - 1], series[i]
        return float(t0 + (level - y0) * (t1 - t0) / (y1 - y0))


def running_time_average(times, values) -> np.ndarray:
    """(1/t) * trapezoid integral of ``values`` from 0 to t; the first value at t = 0."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    out[0] = values[0]
    if len(values) > 1:
        cum = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))
        out[1:] = cum / (times[1:] - times[0])
    return out


def coverage_from_series(times, masses, meta=None) -> CoverageCurve:
    times = np.asarray(times, dtype=float)
    masses = np.asarray(masses, dtype=float)
    return CoverageCurve(times, masses, running_time_average(times, masses), dict(meta or {}))


def coverage(trajectory: Trajectory, grid: Grid2D | None = None) -> CoverageCurve:
    """Coverage over the stored steps of a trajectory."""
    grid = grid or trajectory.grid
    if not trajectory.fields:
        raise ValueError("empty trajectory")
    masses = [covered_mass(u, grid) for u in trajectory.fields]
    return coverage_from_series(trajectory.times, masses)


class CoverageAccumulator:
    """Observer recording the covered mass at every solver step."""

    def __init__(self, grid: Grid2D):
        self.grid = grid
        self.times: list[float] = []
        self.masses: list[float] = []

    def __call__(self, step: int, t: float, u: np.ndarray) -> None:
        self.times.append(t)
        self.masses.append(covered_mass(u, self.grid))

    def curve(self, meta=None) -> CoverageCurve:
        return coverage_from_series(self.times, self.masses, meta)
