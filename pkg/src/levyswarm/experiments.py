"""Studies built on the solvers: E-Puck coverage sweep, micro/macro cross-validation, coefficient report."""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .coefficients import (
    ClosureCoeffs,
    ModelParams,
    ParameterError,
    closure_coeffs,
    validate_scaling,
)
from .fracpde import (
    CoverageAccumulator,
    CoverageCurve,
    SolverConfig,
    SolverError,
    initial_condition,
    solve,
)
from .grid import Grid2D
from .microsim import MicroConfig, init_swarm, step
from .rng import CounterRNG

# --------------------------------------------------------------------------
# E-Puck preset
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EPuckScenario:
    """Robot arena preset; lengths in cm, times in s.

    ``c0`` follows from ``c * epsilon**gamma``. The numerical fields
    (grid, dt, t_end) are our defaults, not part of the physical preset.
    """

    arena: tuple[float, float] = (200.0, 160.0)
    rho_diam: float = 7.5
    c: float = 3.0
    epsilon: float = 0.005
    gamma: float = 0.5
    sigma0: float = 1.0
    n_robots: int = 20
    alphas: tuple[float, ...] = (1.3, 1.5, 1.7, 1.9)
    grid_shape: tuple[int, int] = (100, 80)
    boundary_mode: str = "neumann_mirror"
    mobility_mode: str = "nonlinear"
    dt: float = 1.0
    t_end: float = 60.0
    normalize_mass: bool = False
    coverage_level: float = 0.5

    @property
    def c0(self) -> float:
        return self.c * self.epsilon**self.gamma

    def params(self, alpha: float, n_robots: int | None = None) -> ModelParams:
        return ModelParams(
            alpha=alpha,
            sigma0=self.sigma0,
            c=self.c,
            epsilon=self.epsilon,
            gamma=self.gamma,
            zeta=1.0,
            rho_diam=self.rho_diam,
            n_robots=self.n_robots if n_robots is None else n_robots,
            arena=self.arena,
        )

    def grid(self) -> Grid2D:
        return Grid2D(self.grid_shape[0], self.grid_shape[1], self.arena[0], self.arena[1], self.boundary_mode)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["c0"] = self.c0
        return d


# --------------------------------------------------------------------------
# coverage sweep
# --------------------------------------------------------------------------


@dataclass
class CoverageStudy:
    curves: dict[tuple[float, int], CoverageCurve]
    failures: dict[tuple[float, int], str]
    summary: dict
    stats: dict[tuple[float, int], dict] = field(default_factory=dict)

    def long_rows(self):
        """(alpha, n_robots, time, instantaneous, time_averaged) in (alpha, N, time) order."""
        for key in sorted(self.curves):
            c = self.curves[key]
            for t, m, a in zip(c.times, c.instantaneous, c.time_averaged):
                yield (key[0], key[1], float(t), float(m), float(a))


def coverage_run(
    scenario: EPuckScenario, alpha: float, n_robots: int, centers=None, workers: int = 1, t_end: float | None = None
) -> tuple[CoverageCurve, dict]:
    """One PDE solve from the clustered initial condition; returns the coverage curve and solver stats."""
    grid = scenario.grid()
    params = scenario.params(alpha, n_robots)
    coeffs = closure_coeffs(params)
    u0 = initial_condition(grid, scenario.rho_diam, n_robots, centers=centers, normalize_mass=scenario.normalize_mass)
    cfg = SolverConfig(
        dt=scenario.dt,
        t_end=scenario.t_end if t_end is None else t_end,
        coeffs=coeffs,
        alpha=alpha,
        mobility_mode=scenario.mobility_mode,
        store_every=10**9,
        workers=workers,
    )
    acc = CoverageAccumulator(grid)
    traj = solve(u0, cfg, grid, [acc])
    return acc.curve({"alpha": alpha, "n_robots": n_robots, "seed": None}), traj.stats


def _ordering(values: dict[float, float]) -> dict:
    alphas = sorted(values)
    vals = [values[a] for a in alphas]
    return {
        "alphas": alphas,
        "coverage": vals,
        "strictly_decreasing_in_alpha": all(x > y for x, y in zip(vals[:-1], vals[1:])),
    }


def ordering_summary(curves: dict[tuple[float, int], CoverageCurve], n_robots: int, level: float, t_end: float) -> dict:
    """Coverage ordering across alpha at the reference time and at fixed fractions of the run.

    The reference time is where the largest-alpha curve first reaches ``level``.
    """
    per_alpha = {a: c for (a, n), c in curves.items() if n == n_robots}
    if not per_alpha:
        return {"n_robots": n_robots, "reference_time": None}
    a_max = max(per_alpha)
    t_ref = per_alpha[a_max].first_time_reaching(level)
    out = {"n_robots": n_robots, "level": level, "reference_alpha": a_max, "reference_time": t_ref}
    if t_ref is not None:
        out["at_reference"] = _ordering({a: c.at(t_ref) for a, c in per_alpha.items()})
    out["at_fractions"] = {
        str(frac): {"time": frac * t_end, **_ordering({a: c.at(frac * t_end) for a, c in per_alpha.items()})}
        for frac in (0.25, 0.5, 0.75)
    }
    return out


def run_coverage_study(
    scenario: EPuckScenario,
    alpha_list=None,
    n_list=None,
    threads: int = 1,
) -> CoverageStudy:
    """One PDE solve per (alpha, N) in a pool of independent runs; failures are recorded, not raised."""
    alpha_list = tuple(scenario.alphas if alpha_list is None else alpha_list)
    n_list = tuple((scenario.n_robots,) if n_list is None else n_list)
    points = [(float(a), int(n)) for a in alpha_list for n in n_list]

    def work(pt):
        try:
            return pt, coverage_run(scenario, pt[0], pt[1]), None
        except (SolverError, ParameterError, ValueError) as exc:
            return pt, None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(work, points))

    curves, failures, stats = {}, {}, {}
    for pt, res, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            failures[pt] = err
        else:
            curves[pt], stats[pt] = res
    summary = {
        "points": [list(p) for p in sorted(points)],
        "failures": {f"{a}:{n}": msg for (a, n), msg in failures.items()},
        "orderings": [ordering_summary(curves, n, scenario.coverage_level, scenario.t_end) for n in sorted(set(n_list))],
    }
    return CoverageStudy(curves, failures, summary, stats)


def cluster_doubling_check(
    scenario: EPuckScenario, alpha: float, n_robots: int | None = None, t_early: float | None = None, workers: int = 1
) -> dict:
    """Covered mass of two well-separated clusters of N robots against one cluster of N.

    Clusters sit at a quarter and three quarters of the arena length. Both
    runs take five steps to ``t_early``.
    """
    n = scenario.n_robots if n_robots is None else n_robots
    lx, ly = scenario.arena
    t_early = 0.1 if t_early is None else t_early
    scenario = dataclasses.replace(scenario, dt=t_early / 5.0)
    one, _ = coverage_run(scenario, alpha, n, workers=workers, t_end=t_early)
    two, _ = coverage_run(scenario, alpha, n, centers=[(0.25 * lx, 0.5 * ly), (0.75 * lx, 0.5 * ly)], workers=workers,
                          t_end=t_early)
    ratio_0 = two.instantaneous[0] / one.instantaneous[0]
    ratio = two.instantaneous[-1] / one.instantaneous[-1]
    return {
        "alpha": alpha,
        "n_robots": n,
        "t_early": t_early,
        "ratio_t0": float(ratio_0),
        "ratio_early": float(ratio),
        "within_10_percent": bool(abs(ratio / 2.0 - 1.0) <= 0.1),
    }


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class XvalSettings:
    """Numerical controls of the micro/macro comparison.

    ``epsilon_kinetic`` sets the microscopic scale: walkers move at
    eps^-gamma c0 with run-time scale sigma0 eps^(mu+1) in the PDE's units.
    """

    epsilon_kinetic: float = 0.5
    compare_factor: int = 4
    pde_dt: float = 0.25
    control_shape: tuple[int, int] | None = None
    threshold: float = 0.05
    control_threshold: float = 0.01
    t0_threshold: float = 0.01
    seed: int = 0
    workers: int = 1


@dataclass
class XvalReport:
    checkpoints: list[float]
    distances: list[float]
    distance_t0: float
    control_distances: list[float]
    stable_limit_distances: list[float]
    settings: dict
    details: dict = field(default_factory=dict)

    @property
    def micro_passes(self) -> bool:
        return all(d <= self.settings["threshold"] for d in self.distances)

    @property
    def control_passes(self) -> bool:
        return all(d <= self.settings["control_threshold"] for d in self.control_distances)

    @property
    def t0_passes(self) -> bool:
        return self.distance_t0 <= self.settings["t0_threshold"]

    @property
    def passes(self) -> bool:
        return self.micro_passes and self.control_passes and self.t0_passes

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(micro_passes=self.micro_passes, control_passes=self.control_passes, t0_passes=self.t0_passes,
                 passes=self.passes)
        return d


def block_sum(a: np.ndarray, fx: int, fy: int | None = None) -> np.ndarray:
    fy = fx if fy is None else fy
    nx, ny = a.shape
    if nx % fx or ny % fy:
        raise ValueError(f"shape {a.shape} not divisible by ({fx}, {fy})")
    return a.reshape(nx // fx, fx, ny // fy, fy).sum(axis=(1, 3))


def cell_masses(u: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Unit-mass cell masses of a non-negative field."""
    m = np.clip(u, 0.0, None) * grid.cell_area
    return m / m.sum()


def l1_distance(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.abs(p - q).sum())


def stratified_positions(u: np.ndarray, grid: Grid2D, n: int, seed: int) -> np.ndarray:
    """``n`` points whose per-cell counts are the largest-remainder rounding of n * cell mass.

    Points are uniform inside their cell.
    """
    target = cell_masses(u, grid).ravel() * n
    counts = np.floor(target).astype(np.int64)
    short = n - int(counts.sum())
    if short:
        order = np.argsort(-(target - counts), kind="stable")
        counts[order[:short]] += 1
    cell = np.repeat(np.arange(counts.size), counts)
    ix, iy = np.divmod(cell, grid.ny)
    rng = CounterRNG(seed)
    ids = np.arange(n, dtype=np.uint64)
    ux = rng.uniform(ids, np.uint64(2**40), 0)
    uy = rng.uniform(ids, np.uint64(2**40), 1)
    return np.column_stack(((ix + ux) * grid.hx, (iy + uy) * grid.hy))


def stable_limit_mobility(params: ModelParams, epsilon_kinetic: float) -> float:
    """Generalized diffusivity K of the free walk's alpha-stable limit, as a constant-mobility value.

    For run times with tail (a/tau)^alpha at speed c in two dimensions,
    K = (alpha - 1) a^(alpha-1) c^alpha 2^-alpha Gamma(1 - alpha/2) / Gamma(1 + alpha/2).
    """
    a, c = micro_scales(params, epsilon_kinetic)
    al = params.alpha
    return (al - 1.0) * a ** (al - 1.0) * c**al * 2.0**-al * math.gamma(1.0 - al / 2.0) / math.gamma(1.0 + al / 2.0)


def micro_scales(params: ModelParams, epsilon_kinetic: float) -> tuple[float, float]:
    """(run-time scale, speed) of the walkers in the PDE's space-time units."""
    sc = validate_scaling(params.alpha, params.gamma, epsilon_kinetic)
    a = params.sigma0 * epsilon_kinetic ** (sc.mu + 1.0)
    c = epsilon_kinetic ** (-params.gamma) * params.c0
    return a, c


def _pde_masses(u0, coeffs: ClosureCoeffs, alpha: float, grid: Grid2D, checkpoints, dt: float, workers: int):
    """Unit-mass cell masses at each checkpoint from one constant-mobility run."""
    out, t, u = [], 0.0, u0
    for tc in checkpoints:
        if tc > t:
            cfg = SolverConfig(dt=dt, t_end=tc - t, coeffs=coeffs, alpha=alpha, mobility_mode="constant",
                               store_every=10**9, workers=workers)
            u = solve(u, cfg, grid).final
            t = tc
        out.append(cell_masses(u, grid))
    return out


def run_cross_validation(
    params: ModelParams,
    n_walkers: int,
    grid: Grid2D,
    t_checkpoints,
    settings: XvalSettings = XvalSettings(),
) -> XvalReport:
    """Histogram of free walkers against the constant-mobility density equation, both at unit mass.

    Walkers do not collide, so the matching PDE has F = f_const. Each
    distance is the L1 norm of the cell-mass difference on a grid coarsened
    by ``compare_factor``. The control arm compares the PDE with itself on a
    grid refined by two (block-summed back). The stable-limit arm reruns the
    PDE with the free walk's own diffusivity, for information only.
    """
    if params.zeta != 1.0:
        raise ParameterError("cross-validation needs zeta = 1 (no alignment)")
    if grid.boundary_mode != "periodic":
        raise ParameterError("cross-validation runs on a periodic box")
    if n_walkers < 10_000:
        raise ParameterError(f"n_walkers = {n_walkers} < 10^4")
    checkpoints = sorted(float(t) for t in t_checkpoints)
    if not checkpoints or checkpoints[0] <= 0.0:
        raise ParameterError("checkpoints must be positive times")
    a_run, speed = micro_scales(params, settings.epsilon_kinetic)
    f = settings.compare_factor
    params = dataclasses.replace(params, arena=(grid.lx, grid.ly))
    coeffs = closure_coeffs(params)

    # PDE arm
    u0 = initial_condition(grid, params.rho_diam, params.n_robots, normalize_mass=True)
    pde = _pde_masses(u0, coeffs, params.alpha, grid, checkpoints, settings.pde_dt, settings.workers)

    # control arm on a doubled grid
    fine = grid.with_shape(*(settings.control_shape or (2 * grid.nx, 2 * grid.ny)))
    rx, ry = fine.nx // grid.nx, fine.ny // grid.ny
    u0f = initial_condition(fine, params.rho_diam, params.n_robots, normalize_mass=True)
    fine_m = _pde_masses(u0f, coeffs, params.alpha, fine, checkpoints, settings.pde_dt, settings.workers)
    control = [l1_distance(block_sum(m, rx, ry), p) for m, p in zip(fine_m, pde)]

    # stable-limit arm
    k_true = stable_limit_mobility(params, settings.epsilon_kinetic)
    coeffs_k = dataclasses.replace(coeffs, c_alpha=k_true * coeffs.f_const)
    stable = _pde_masses(u0, coeffs_k, params.alpha, grid, checkpoints, settings.pde_dt, settings.workers)

    # walkers
    cfg = MicroConfig(params=params, dt=checkpoints[0], boundary="periodic", collisions=False, seed=settings.seed,
                      run_time_scale=a_run, speed=speed)
    pos = stratified_positions(u0, grid, n_walkers, settings.seed)
    state = init_swarm(cfg, pos)
    coarse = grid.with_shape(grid.nx // f, grid.ny // f) if f > 1 else grid
    d0 = l1_distance(coarse.histogram(state.positions) / n_walkers, block_sum(cell_masses(u0, grid), f))
    dist, dist_stable = [], []
    for tc, p, q in zip(checkpoints, pde, stable):
        if tc > state.time:
            state = step(state, dataclasses.replace(cfg, dt=tc - state.time))
        h = coarse.histogram(state.positions) / n_walkers
        dist.append(l1_distance(h, block_sum(p, f)))
        dist_stable.append(l1_distance(h, block_sum(q, f)))

    pde_mobility = coeffs.c_alpha / coeffs.f_const
    return XvalReport(
        checkpoints=checkpoints,
        distances=dist,
        distance_t0=d0,
        control_distances=control,
        stable_limit_distances=dist_stable,
        settings={**dataclasses.asdict(settings), "n_walkers": n_walkers, "grid": [grid.nx, grid.ny],
                  "box": [grid.lx, grid.ly], "compare_grid": [coarse.nx, coarse.ny],
                  "control_grid": [fine.nx, fine.ny]},
        details={
            "run_time_scale": a_run,
            "speed": speed,
            "pde_mobility": pde_mobility,
            "stable_limit_mobility": k_true,
            "mobility_ratio": pde_mobility / k_true,
            "stops_per_walker": float(state.epochs.mean()),
        },
    )


# --------------------------------------------------------------------------
# coefficient report
# --------------------------------------------------------------------------

PROVENANCE = {
    "c_alpha": "-sigma0^(alpha-2) c0^(alpha-1) (alpha-1)^2 pi / (sin(pi alpha) Gamma(alpha)) (|S| - 4 zeta nu1) / |S|^2",
    "f_const": "(alpha-1) n (1 - zeta nu1) / (sigma0 |S|)",
    "f_slope": "collision_prefactor b c0 / |S|^2",
    "g_slope": "(1 - zeta) |S| z (alpha-1) / sigma0",
    "z": "integral over S of Phi(cos s) cos s",
    "a0": "integral over S of Phi(cos s) cos^2 s",
    "a1": "integral over S of Phi(cos s) sin^2 s",
    "a3": "a0 - a1",
    "cc0": "z (1 - zeta)",
    "cc1": "c0 (1 - zeta) a3",
    "cc2": "c0 (1 - zeta) a1 + c0 pi zeta",
    "b": "integral over S of |theta_1 - theta_2| d theta_2 (quadrature)",
    "A": "(alpha-1) / sigma0",
    "B": "-sigma0^(alpha-2) (alpha-1)^2 Gamma(1-alpha)",
    "s_area": "|S| = 2 pi",
    "mu": "(1 - alpha (1 - gamma)) / (alpha - 1)",
    "eta": "-gamma",
    "xi_minus_theta": "1 - gamma / (alpha - 1)",
    "c0": "c epsilon^gamma",
}


def _exact(x: float) -> str:
    """Short rational form when one exists (7/6 rather than 1.1666...)."""
    q = Fraction(x).limit_denominator(1000)
    return str(q) if float(q) == x else repr(x)


def emit_coefficients(params: ModelParams) -> dict:
    """Closure constants, scaling exponents, the input echo and formula provenance, JSON-ready."""
    coeffs = closure_coeffs(params)
    sc = validate_scaling(params.alpha, params.gamma, params.epsilon)
    scaling = dataclasses.asdict(sc)
    return {
        "inputs": params.to_dict(),
        "coefficients": coeffs.to_dict(),
        "scaling": scaling,
        "scaling_exact": {k: _exact(v) for k, v in scaling.items() if k in ("mu", "eta", "xi_minus_theta")},
        "provenance": PROVENANCE,
    }
