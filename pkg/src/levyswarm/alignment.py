"""Field-level alignment: kernel flux J = K * w, its direction, and the aligned density solver.

Vector fields are arrays of shape ``(2, nx, ny)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .coefficients import ClosureCoeffs, ParameterError
from .fracpde import (
    SolverConfig,
    SolverError,
    StepInfo,
    Trajectory,
    divergence,
    frac_gradient,
    mobility_field,
    solve,
    spectral_for,
    step_implicit,
)
from .grid import Grid2D

DEGENERATE_FLUX = 1e-12
FP_DAMPING = 0.5
FP_TOL = 1e-8
FP_MAX_ITER = 100
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class InfluenceKernelSpec:
    """Exponential kernel K(r) = exp(-r / range) / (2 pi range^2), zero beyond ``cutoff``.

    Without the cutoff K integrates to one; the truncated mass is
    ``1 - (1 + c/R) exp(-c/R)``.
    """

    range: float
    cutoff: float | None = None

    def __post_init__(self):
        if not self.range > 0.0:
            raise ParameterError(f"kernel range = {self.range} not > 0")
        if self.cutoff is None:
            object.__setattr__(self, "cutoff", 5.0 * self.range)
        if self.cutoff < 5.0 * self.range * (1.0 - 1e-12):
            raise ParameterError(f"kernel cutoff {self.cutoff} < 5 * range ({5.0 * self.range})")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.cutoff, np.exp(-r / self.range) / (2.0 * math.pi * self.range**2), 0.0)

    @property
    def mass(self) -> float:
        q = self.cutoff / self.range
        return 1.0 - (1.0 + q) * math.exp(-q)

    def transform(self, k) -> np.ndarray:
        """2-D Fourier transform of the truncated kernel, a Hankel integral over [0, cutoff].

        Composite 16-point Gauss-Legendre with panels short enough to resolve
        both exp(-r/R) and the Bessel oscillation.
        """
        k = np.atleast_1d(np.asarray(k, dtype=float))
        c, R = self.cutoff, self.range
        n_panels = int(max(32, math.ceil(k.max(initial=0.0) * c / 2.0), math.ceil(4.0 * c / R)))
        edges = np.linspace(0.0, c, n_panels + 1)
        half = 0.5 * np.diff(edges)
        r = (edges[:-1, None] + half[:, None] * (_GL_NODES[None, :] + 1.0)).ravel()
        w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel() * np.exp(-r / R) * r / R**2
        out = np.empty_like(k)
        chunk = max(1, 4_000_000 // r.size)
        for s in range(0, k.size, chunk):
            out[s : s + chunk] = special.j0(np.outer(k[s : s + chunk], r)) @ w
        return out


_MULT_CACHE: dict[tuple, np.ndarray] = {}


def kernel_multiplier(kernel: InfluenceKernelSpec, grid: Grid2D, workers: int = 1) -> np.ndarray:
    """K_hat on the (possibly mirror-extended) rfft wavenumber grid."""
    key = (kernel, grid)
    mult = _MULT_CACHE.get(key)
    if mult is None:
        sp = spectral_for(grid, workers)
        kk, inv = np.unique(sp.K, return_inverse=True)
        mult = kernel.transform(kk)[inv].reshape(sp.K.shape)
        if len(_MULT_CACHE) > 16:
            _MULT_CACHE.clear()
        _MULT_CACHE[key] = mult
    return mult


def _as_vector(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 3 or w.shape[0] != 2:
        raise ValueError(f"vector field must have shape (2, nx, ny), got {w.shape}")
    return w


def nonlocal_flux(w, kernel: InfluenceKernelSpec, grid: Grid2D, workers: int = 1) -> np.ndarray:
    """J = K * w, periodic or with mirror parity on each component."""
    w = _as_vector(w)
    sp = spectral_for(grid, workers)
    mult = kernel_multiplier(kernel, grid, workers)
    out = np.empty_like(w)
    for c, parity in ((0, (-1, 1)), (1, (1, -1))):
        out[c] = sp.restrict(sp.inv(mult * sp.fwd(sp.extend(w[c], parity))))
    return out


def unit_direction(J: np.ndarray, tol: float = DEGENERATE_FLUX) -> tuple[np.ndarray, np.ndarray]:
    """J / |J| with zero vectors where |J| < tol; also returns that mask."""
    norm = np.hypot(J[0], J[1])
    degenerate = norm < tol
    safe = np.where(degenerate, 1.0, norm)
    lam = np.where(degenerate, 0.0, J / safe)
    return lam, degenerate


def lambda_w(w, kernel: InfluenceKernelSpec, grid: Grid2D, workers: int = 1):
    """Mean direction of the kernel-averaged flux; ``(lam, degenerate_mask)``."""
    return unit_direction(nonlocal_flux(w, kernel, grid, workers))


def _mobility_parts(u, coeffs: ClosureCoeffs, mobility_mode: str):
    """(C_alpha / F, G / F) for the chosen mobility mode."""
    m = mobility_field(u, coeffs, mobility_mode)
    F = coeffs.f_const if mobility_mode == "constant" else coeffs.mobility(u)
    return m, coeffs.alignment_gain(u) / F


def diffusive_flux(u, coeffs: ClosureCoeffs, alpha: float, grid: Grid2D, mobility_mode="nonlinear", workers=1):
    """-(C_alpha / F(u)) grad^{alpha-1} u."""
    m, _ = _mobility_parts(u, coeffs, mobility_mode)
    gx, gy = frac_gradient(u, alpha, grid, workers)
    return -np.stack((m * gx, m * gy))


def weak_alignment_w(
    u,
    coeffs: ClosureCoeffs,
    ell: float,
    kernel: InfluenceKernelSpec,
    grid: Grid2D,
    alpha: float,
    mobility_mode: str = "nonlinear",
    workers: int = 1,
) -> np.ndarray:
    """First-order-in-ell flux: the pure Levy flux plus ell (G/F) Lambda^u.

    Lambda^u is the direction of the kernel average of the pure Levy flux.
    """
    u = np.asarray(u, dtype=float)
    w0 = diffusive_flux(u, coeffs, alpha, grid, mobility_mode, workers)
    if ell == 0.0:
        return w0
    _, gain = _mobility_parts(u, coeffs, mobility_mode)
    lam, _ = lambda_w(w0, kernel, grid, workers)
    return w0 + ell * gain * lam


class FixedPointError(SolverError):
    def __init__(self, message: str, history: list[float], step: int | None = None):
        super().__init__(message, step=step, residual=history[-1] if history else None)
        self.history = history


@dataclass
class FixedPointInfo:
    iterations: int = 0
    history: list[float] = field(default_factory=list)
    degenerate_cells: int = 0


def resolve_w(
    u,
    coeffs: ClosureCoeffs,
    ell: float,
    kernel: InfluenceKernelSpec,
    grid: Grid2D,
    alpha: float,
    mobility_mode: str = "nonlinear",
    damping: float = FP_DAMPING,
    tol: float = FP_TOL,
    max_iter: int = FP_MAX_ITER,
    workers: int = 1,
    info: FixedPointInfo | None = None,
) -> np.ndarray:
    """Damped fixed point w <- (1-d) w + d (ell (G/F) Lambda^w + w0), w0 the pure Levy flux.

    Stops when the sup-norm of the update is below ``tol``; raises
    :class:`FixedPointError` with the residual history otherwise.
    """
    info = FixedPointInfo() if info is None else info
    info.history = []
    w0 = diffusive_flux(u, coeffs, alpha, grid, mobility_mode, workers)
    if ell == 0.0:
        info.iterations = 0
        return w0
    _, gain = _mobility_parts(u, coeffs, mobility_mode)
    w = w0
    for it in range(1, max_iter + 1):
        lam, deg = lambda_w(w, kernel, grid, workers)
        target = w0 + ell * gain * lam
        upd = damping * (target - w)
        w = w + upd
        res = float(np.abs(upd).max())
        info.history.append(res)
        info.iterations = it
        info.degenerate_cells = int(np.count_nonzero(deg))
        if res < tol:
            return w
    raise FixedPointError(f"alignment fixed point not converged after {max_iter} iterations", info.history)


@dataclass
class AlignedStats:
    fp_iterations_max: int = 0
    fp_iterations_total: int = 0
    fp_final_residual_max: float = 0.0
    degenerate_cells_max: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def aligned_stepper(
    config: SolverConfig,
    grid: Grid2D,
    ell: float,
    kernel: InfluenceKernelSpec,
    stats: AlignedStats | None = None,
    **fp_kw,
):
    """Step function for :func:`fracpde.solve`.

    The Levy part stays implicit; the alignment part of the resolved flux is
    frozen and enters the right-hand side as ``-dt div(w_align)``.
    """
    stats = AlignedStats() if stats is None else stats

    def stepper(u, dt, k, info: StepInfo):
        if ell == 0.0:
            return step_implicit(u, config, grid, dt=dt, info=info)
        fp = FixedPointInfo()
        w = resolve_w(u, config.coeffs, ell, kernel, grid, config.alpha, config.mobility_mode,
                      workers=config.workers, info=fp, **fp_kw)
        w_align = w - diffusive_flux(u, config.coeffs, config.alpha, grid, config.mobility_mode, config.workers)
        rhs = u - dt * divergence(w_align[0], w_align[1], grid, config.workers)
        stats.fp_iterations_max = max(stats.fp_iterations_max, fp.iterations)
        stats.fp_iterations_total += fp.iterations
        stats.fp_final_residual_max = max(stats.fp_final_residual_max, fp.history[-1] if fp.history else 0.0)
        stats.degenerate_cells_max = max(stats.degenerate_cells_max, fp.degenerate_cells)
        return step_implicit(u, config, grid, dt=dt, info=info, rhs=rhs)

    return stepper


def solve_aligned(
    u0,
    config: SolverConfig,
    grid: Grid2D,
    ell: float,
    kernel: InfluenceKernelSpec,
    observers=(),
    **fp_kw,
) -> Trajectory:
    """Density equation with the alignment flux resolved each step; ell = 0 is :func:`fracpde.solve`."""
    if ell < 0.0:
        raise ParameterError(f"ell = {ell} must be >= 0")
    stats = AlignedStats()
    traj = solve(u0, config, grid, observers, stepper=aligned_stepper(config, grid, ell, kernel, stats, **fp_kw))
    traj.stats.update({"ell": ell, "kernel_range": kernel.range, "kernel_cutoff": kernel.cutoff})
    traj.stats.update(stats.to_dict())
    return traj
