"""Agent-based Levy-walk swarm: runs, tumbles, alignment, elastic contacts, walls.

The step is time-driven. Inside one step every agent is advanced to each of
its stop events in turn; stops reorient it (tumble with probability zeta,
align otherwise) and draw a fresh run time. Alignment reads the positions and
headings frozen at the start of the step, and all random numbers come from
counter streams keyed by (seed, agent, epoch), so the agent update is
order-independent. Pair contacts are then resolved by a sequential sweep in
canonical pair order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import ModelParams, ParameterError
from .grid import Grid2D
from .levy import RunTimeLaw
from .neighbors import minimum_image, pairs_within
from .rng import CounterRNG, rotate, von_mises_angles

BOUNDARIES = ("reflecting", "periodic")
DEGENERATE_FLUX = 1e-12

# draw slots within one (agent, epoch) key
_SLOT_RUN, _SLOT_BRANCH, _SLOT_ANGLE = 0, 1, 2
# positions for the initial placement use a reserved epoch
_PLACEMENT_EPOCH = np.uint64(2**63)


class CollisionError(RuntimeError):
    def __init__(self, pairs):
        self.pairs = [(int(i), int(j)) for i, j in pairs]
        shown = ", ".join(f"({i}, {j})" for i, j in self.pairs[:10])
        super().__init__(f"{len(self.pairs)} pair(s) still overlapping after collision sweeps: {shown}")


@dataclass
class MicroConfig:
    """Simulation controls.

    ``run_time_scale`` and ``speed`` default to ``params.sigma0`` and
    ``params.c``; scaled runs override them.
    """

    params: ModelParams
    dt: float
    boundary: str = "reflecting"
    kernel_range: float = 10.0
    sensing_radius: float | None = None
    seed: int = 0
    run_time_scale: float | None = None
    speed: float | None = None
    collisions: bool = True
    collision_resets_clock: bool = True
    max_collision_sweeps: int = 50

    def __post_init__(self):
        if self.sensing_radius is None:
            # exp(-r / range) <= e^-5 beyond this
            self.sensing_radius = 5.0 * self.kernel_range
        if self.boundary not in BOUNDARIES:
            raise ParameterError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if not self.dt > 0:
            raise ParameterError(f"dt = {self.dt} not > 0")
        if not self.kernel_range > 0:
            raise ParameterError("kernel_range must be > 0")
        if self.sensing_radius < self.kernel_range:
            raise ParameterError("sensing_radius must be >= kernel_range")
        if self.collisions and not self.c * self.dt < 0.5 * self.params.rho_diam:
            raise ParameterError(
                f"c*dt = {self.c * self.dt:g} must be < rho/2 = {0.5 * self.params.rho_diam:g} (no tunnelling)"
            )

    @property
    def c(self) -> float:
        return self.params.c if self.speed is None else self.speed

    @property
    def law(self) -> RunTimeLaw:
        a = self.params.sigma0 if self.run_time_scale is None else self.run_time_scale
        return RunTimeLaw(self.params.alpha, a)

    @property
    def box(self) -> tuple[float, float]:
        return self.params.arena

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"


@dataclass
class SwarmState:
    positions: np.ndarray
    directions: np.ndarray
    time_to_stop: np.ndarray
    epochs: np.ndarray
    rng: CounterRNG
    displacement: np.ndarray
    time: float = 0.0
    step_index: int = 0
    counters: dict = field(default_factory=lambda: {"tumble": 0, "align": 0, "collision": 0, "wall": 0})

    @property
    def n(self) -> int:
        return len(self.positions)

    def copy(self) -> "SwarmState":
        return SwarmState(
            self.positions.copy(),
            self.directions.copy(),
            self.time_to_stop.copy(),
            self.epochs.copy(),
            self.rng,
            self.displacement.copy(),
            self.time,
            self.step_index,
            dict(self.counters),
        )


@dataclass
class Observables:
    time: float
    density_hist: np.ndarray
    msd: float
    polarization: float
    empirical_coverage: float


# --------------------------------------------------------------------------
# construction
# --------------------------------------------------------------------------


def _draw(rng: CounterRNG, agents, epochs, slot_offset: int):
    return lambda slot: rng.uniform(agents, epochs, slot_offset + slot)


def init_swarm(config: MicroConfig, positions, directions=None) -> SwarmState:
    """State at t = 0: headings uniform unless given, fresh run clocks (epoch 0)."""
    rng = CounterRNG(config.seed)
    pos = np.array(positions, dtype=float).reshape(-1, 2)
    n = len(pos)
    agents = np.arange(n, dtype=np.uint64)
    epochs = np.zeros(n, dtype=np.uint64)
    if directions is None:
        ang = von_mises_angles(0.0, n, _draw(rng, agents, epochs, _SLOT_ANGLE))
        dirs = np.column_stack((np.cos(ang), np.sin(ang)))
    else:
        dirs = np.array(directions, dtype=float).reshape(-1, 2)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    u = 1.0 - rng.uniform(agents, epochs, _SLOT_RUN)
    tts = config.law.from_uniform(u)
    return SwarmState(pos, dirs, tts, epochs, rng, np.zeros_like(pos))


def place_agents(config: MicroConfig, n: int, density, max_density: float, min_separation: float = 0.0):
    """Rejection-sample ``n`` positions from an (unnormalised) density on the arena.

    ``density(x, y)`` is vectorised and bounded by ``max_density``. With
    ``min_separation > 0`` candidates overlapping earlier agents are rejected;
    after repeated failures the density's support is widened by drawing
    uniformly in the arena, so crowded clusters still place every agent.
    """
    rng = CounterRNG(config.seed)
    lx, ly = config.box
    out = np.empty((n, 2))
    batch = 64
    for k in range(n):
        placed = False
        for attempt in range(0, 4096, batch):
            draws = np.arange(attempt, attempt + batch, dtype=np.uint64) * np.uint64(3)
            ux = rng.uniform(k, _PLACEMENT_EPOCH, draws)
            uy = rng.uniform(k, _PLACEMENT_EPOCH, draws + np.uint64(1))
            ua = rng.uniform(k, _PLACEMENT_EPOCH, draws + np.uint64(2))
            cand = np.column_stack((ux * lx, uy * ly))
            widen = attempt >= 2048
            ok = np.ones(batch, bool) if widen else ua * max_density < density(cand[:, 0], cand[:, 1])
            if min_separation > 0 and k:
                d = minimum_image(cand[:, None, :] - out[None, :k, :], config.box, config.periodic)
                ok &= np.min(np.einsum("abk,abk->ab", d, d), axis=1) >= min_separation**2
            hit = np.nonzero(ok)[0]
            if hit.size:
                out[k] = cand[hit[0]]
                placed = True
                break
        if not placed:
            raise ParameterError(f"could not place agent {k} without overlap")
    return out


# --------------------------------------------------------------------------
# reorientation rules
# --------------------------------------------------------------------------


def tumble(direction: np.ndarray, kappa_tumble: float, draw) -> np.ndarray:
    """New headings symmetric about the old ones (von Mises turn angle, uniform at kappa 0)."""
    direction = np.atleast_2d(direction)
    ang = von_mises_angles(kappa_tumble, len(direction), draw)
    return rotate(direction, ang)


def align_direction(lam: np.ndarray, kappa_align: float, draw) -> np.ndarray:
    """Headings drawn from a von Mises law centred on the local mean direction."""
    lam = np.atleast_2d(lam)
    ang = von_mises_angles(kappa_align, len(lam), draw)
    return rotate(lam, ang)


def neighbor_flux(positions, directions, config: MicroConfig) -> np.ndarray:
    """J_i = sum over neighbours j != i within the sensing radius of exp(-r_ij/range) theta_j."""
    i, j, d = pairs_within(positions, config.sensing_radius, config.box, config.periodic)
    w = np.exp(-np.sqrt(np.einsum("ij,ij->i", d, d)) / config.kernel_range)
    n = len(positions)
    jx = np.bincount(i, w * directions[j, 0], n) + np.bincount(j, w * directions[i, 0], n)
    jy = np.bincount(i, w * directions[j, 1], n) + np.bincount(j, w * directions[i, 1], n)
    return np.column_stack((jx, jy))


def _normalize_or(flux: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(flux, axis=1)
    out = np.array(fallback, dtype=float, copy=True)
    good = norm >= DEGENERATE_FLUX
    out[good] = flux[good] / norm[good, None]
    return out


def local_mean_direction(state: SwarmState, agent_index: int, config: MicroConfig) -> np.ndarray:
    """Mean heading of the neighbours of one agent; its own heading when the flux vanishes."""
    flux = neighbor_flux(state.positions, state.directions, config)[agent_index : agent_index + 1]
    return _normalize_or(flux, state.directions[agent_index : agent_index + 1])[0]


# --------------------------------------------------------------------------
# motion
# --------------------------------------------------------------------------


def _advance(pos, dirs, disp, idx, dist, config: MicroConfig, counters) -> None:
    move = dirs[idx] * dist[:, None]
    disp[idx] += move
    new = pos[idx] + move
    lx, ly = config.box
    if config.periodic:
        new[:, 0] %= lx
        new[:, 1] %= ly
    else:
        for axis, length in ((0, lx), (1, ly)):
            x = new[:, axis]
            bounces = np.floor(x / length)
            odd = (bounces % 2) != 0
            folded = x - bounces * length
            folded = np.where(odd, length - folded, folded)
            new[:, axis] = folded
            flip = bounces != 0
            if flip.any():
                counters["wall"] += int(np.count_nonzero(flip))
                sub = idx[odd]
                dirs[sub, axis] = -dirs[sub, axis]
    pos[idx] = new


def _fold_into_arena(pos, config: MicroConfig) -> None:
    lx, ly = config.box
    if config.periodic:
        pos[:, 0] %= lx
        pos[:, 1] %= ly
    else:
        np.clip(pos[:, 0], 0.0, lx, out=pos[:, 0])
        np.clip(pos[:, 1], 0.0, ly, out=pos[:, 1])


def step(state: SwarmState, config: MicroConfig) -> SwarmState:
    """Advance the swarm by ``config.dt``; returns a new state."""
    p = config.params
    c = config.c
    law = config.law
    rng = state.rng
    new = state.copy()
    pos, dirs, tts, ep, disp = new.positions, new.directions, new.time_to_stop, new.epochs, new.displacement
    snap_pos, snap_dir = state.positions, state.directions
    rem = np.full(state.n, float(config.dt))
    flux = None

    while True:
        stopping = np.nonzero(tts <= rem)[0]
        if stopping.size == 0:
            break
        run = tts[stopping]
        _advance(pos, dirs, disp, stopping, c * run, config, new.counters)
        rem[stopping] -= run
        ep[stopping] += np.uint64(1)
        agents = stopping.astype(np.uint64)
        e = ep[stopping]

        branch = rng.uniform(agents, e, _SLOT_BRANCH)
        is_tumble = branch < p.zeta
        t_idx, a_idx = np.nonzero(is_tumble)[0], np.nonzero(~is_tumble)[0]
        if t_idx.size:
            who = stopping[t_idx]
            dirs[who] = tumble(dirs[who], p.kappa_tumble, _draw(rng, agents[t_idx], e[t_idx], _SLOT_ANGLE))
            new.counters["tumble"] += int(t_idx.size)
        if a_idx.size:
            who = stopping[a_idx]
            if flux is None:
                flux = neighbor_flux(snap_pos, snap_dir, config)
            lam = _normalize_or(flux[who], dirs[who])
            dirs[who] = align_direction(lam, p.kappa_align, _draw(rng, agents[a_idx], e[a_idx], _SLOT_ANGLE))
            new.counters["align"] += int(a_idx.size)
        tts[stopping] = law.from_uniform(1.0 - rng.uniform(agents, e, _SLOT_RUN))

    everyone = np.arange(state.n)
    _advance(pos, dirs, disp, everyone, c * rem, config, new.counters)
    tts -= rem

    if config.collisions:
        resolve_collisions(new, config)
    new.time = state.time + config.dt
    new.step_index = state.step_index + 1
    return new


def reflect(theta: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """theta - 2 (theta . nu) nu, row-wise."""
    theta = np.atleast_2d(theta)
    nu = np.atleast_2d(nu)
    return theta - 2.0 * np.einsum("ij,ij->i", theta, nu)[:, None] * nu


def resolve_collisions(state: SwarmState, config: MicroConfig) -> SwarmState:
    """Reflect approaching overlapping pairs and separate every overlap (in place).

    Pairs are visited in lexicographic (i, j) order; up to
    ``config.max_collision_sweeps`` sweeps are made before giving up.
    """
    rho = config.params.rho_diam
    pos, dirs = state.positions, state.directions
    law = config.law
    for _ in range(config.max_collision_sweeps):
        i_arr, j_arr, _ = pairs_within(pos, rho, config.box, config.periodic)
        if i_arr.size == 0:
            return state
        for i, j in zip(i_arr.tolist(), j_arr.tolist()):
            d = minimum_image(pos[i] - pos[j], config.box, config.periodic)
            dist = math.hypot(d[0], d[1])
            if dist >= rho:
                continue
            nu = d / dist if dist > 0.0 else np.array([1.0, 0.0])
            if np.dot(d, dirs[i] - dirs[j]) < 0.0:
                for k in (i, j):
                    t = dirs[k] - 2.0 * np.dot(dirs[k], nu) * nu
                    dirs[k] = t / math.hypot(t[0], t[1])
                state.counters["collision"] += 1
                if config.collision_resets_clock:
                    for k in (i, j):
                        state.epochs[k] += np.uint64(1)
                        u = 1.0 - state.rng.uniform(k, state.epochs[k], _SLOT_RUN)[0]
                        state.time_to_stop[k] = float(law.from_uniform(u))
            shift = 0.5 * (rho * (1.0 + 1e-12) - dist) * nu
            pos[i] += shift
            pos[j] -= shift
            state.displacement[i] += shift
            state.displacement[j] -= shift
        _fold_into_arena(pos, config)
    i_arr, j_arr, _ = pairs_within(pos, rho * (1.0 - 1e-9), config.box, config.periodic)
    if i_arr.size:
        raise CollisionError(zip(i_arr, j_arr))
    return state


# --------------------------------------------------------------------------
# observables
# --------------------------------------------------------------------------


def observe(state: SwarmState, grid_spec: Grid2D, reference_time: float = 0.0, mass: float = 1.0) -> Observables:
    """Histogram density carrying total ``mass``, MSD, polarisation, covered mass.

    The covered mass is the midpoint sum of min(density, 1/area) over the
    grid, the same functional the PDE coverage uses.
    """
    counts = grid_spec.histogram(state.positions)
    density = counts * (mass / (state.n * grid_spec.cell_area))
    rho_bar = 1.0 / grid_spec.area
    return Observables(
        time=state.time - reference_time,
        density_hist=density,
        msd=float(np.mean(np.einsum("ij,ij->i", state.displacement, state.displacement))),
        polarization=float(np.linalg.norm(state.directions.mean(axis=0))),
        empirical_coverage=grid_spec.integrate(np.minimum(density, rho_bar)),
    )


def run(state: SwarmState, config: MicroConfig, n_steps: int, callback=None) -> SwarmState:
    for _ in range(n_steps):
        state = step(state, config)
        if callback is not None:
            callback(state)
    return state
