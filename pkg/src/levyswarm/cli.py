"""Command-line entry point: ``levyswarm {coeffs,micro,pde,hyper,coverage-study,xval}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .alignment import InfluenceKernelSpec, solve_aligned
from .coefficients import ModelParams, ParameterError, closure_coeffs
from .config import ConfigError, build_config, resolve_threads
from .experiments import (
    EPuckScenario,
    XvalSettings,
    cluster_doubling_check,
    emit_coefficients,
    run_coverage_study,
    run_cross_validation,
)
from .fracpde import CoverageAccumulator, SolverConfig, SolverError, initial_condition, initial_mass, solve
from .grid import Grid2D
from .levy import verify_laplace_expansion
from .hyper import HyperState, HyperSystem, run_hyper
from .microsim import CollisionError, MicroConfig, init_swarm, observe, place_agents, step
from .output import dumps, write_csv, write_field, write_json, write_manifest

log = logging.getLogger("levyswarm")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 2, 3, 4

BOUNDARY_NOTES = {
    "periodic": "periodic box",
    "neumann_mirror": "Neumann condition approximated by even mirror extension onto a doubled periodic box",
}


def _parse_set(items) -> dict:
    """``section.key=value`` pairs; values are read as TOML scalars or arrays, else kept as strings."""
    from .config import tomllib

    out: dict = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            val = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            val = raw
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return out


def _grid_arg(text: str) -> tuple[int, int]:
    try:
        nx, ny = (int(v) for v in text.lower().replace(",", "x").split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid must look like 128x128 or 128,128, got {text!r}") from exc
    return nx, ny


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker threads (falls back to LEVYSWARM_THREADS)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="levyswarm", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coeffs", parents=[common], help="closure coefficients as JSON")
    p.add_argument("--alpha", type=float)
    p.add_argument("--laplace", action="store_true", help="include the Laplace-expansion residual report")

    p = sub.add_parser("micro", parents=[common], help="agent-based simulation")
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--out-prefix")

    p = sub.add_parser("pde", parents=[common], help="fractional diffusion solve with coverage")
    p.add_argument("--alpha", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--ell", type=float)
    p.add_argument("--kernel-range", type=float)
    p.add_argument("--n-robots", type=int)
    p.add_argument("--grid", type=_grid_arg)
    p.add_argument("--boundary", choices=("periodic", "neumann_mirror"))
    p.add_argument("--out-prefix")

    p = sub.add_parser("hyper", parents=[common], help="swarming (u, Lambda) solve")
    p.add_argument("--t-end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--grid", type=_grid_arg)
    p.add_argument("--out-prefix")

    p = sub.add_parser("coverage-study", parents=[common], help="coverage sweep over alpha and N")
    p.add_argument("--alphas", type=_float_list)
    p.add_argument("--n-list", type=_int_list)
    p.add_argument("--cluster-check", action="store_true")

    p = sub.add_parser("xval", parents=[common], help="walkers against the density equation")
    p.add_argument("--alpha", type=float)
    p.add_argument("--walkers", type=int)
    p.add_argument("--checkpoints", type=_float_list)
    return ap


def _overrides(args) -> dict:
    o = _parse_set(args.set)
    if args.seed is not None:
        o["seed"] = args.seed
    cmd = args.command
    if getattr(args, "alpha", None) is not None:
        if cmd == "xval":
            o.setdefault("xval", {})["alpha"] = args.alpha
        else:
            o.setdefault("model", {})["alpha"] = args.alpha
    flag_map = {
        "micro": {"steps": "n_steps", "dt": "dt", "out_prefix": "out_prefix"},
        "pde": {"t_end": "t_end", "dt": "dt", "ell": "ell", "kernel_range": "kernel_range", "out_prefix": "out_prefix"},
        "hyper": {"t_end": "t_end", "dt": "dt", "out_prefix": "out_prefix"},
        "coverage-study": {"alphas": "alphas", "n_list": "n_list"},
        "xval": {"walkers": "n_walkers", "checkpoints": "checkpoints"},
    }
    section = {"coverage-study": "coverage"}.get(cmd, cmd)
    for attr, key in flag_map.get(cmd, {}).items():
        val = getattr(args, attr, None)
        if val is not None:
            o.setdefault(section, {})[key] = val
    if cmd == "hyper" and args.grid is not None:
        o.setdefault("hyper", {}).update(nx=args.grid[0], ny=args.grid[1])
    if cmd == "pde":
        if args.grid is not None:
            o.setdefault("grid", {}).update(nx=args.grid[0], ny=args.grid[1])
        if args.boundary is not None:
            o.setdefault("grid", {})["boundary"] = args.boundary
        if args.n_robots is not None:
            o.setdefault("model", {})["n_robots"] = args.n_robots
    if cmd == "coverage-study" and args.cluster_check:
        o.setdefault("coverage", {})["cluster_check"] = True
    return o


def _model(cfg: dict, **extra) -> ModelParams:
    return ModelParams.from_dict({**cfg["model"], **extra})


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_coeffs(cfg, out: Path | None, threads: int, laplace: bool = False) -> int:
    params = _model(cfg)
    doc = emit_coefficients(params)
    if laplace:
        doc["laplace"] = verify_laplace_expansion(params.alpha, params.sigma0, (0.04, 0.02, 0.01)).to_dict()
    print(dumps(doc))
    if out is not None:
        write_json(out / "coefficients.json", doc)
        write_manifest(out, "coeffs", cfg, {"coefficients": doc["coefficients"]})
    return EXIT_OK


def _cluster_density(params: ModelParams):
    s = params.rho_diam * params.n_robots
    cx, cy = 0.5 * params.arena[0], 0.5 * params.arena[1]
    return lambda x, y: np.maximum(1.2 * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / s) - 0.2, 0.0)


def cmd_micro(cfg, out: Path, threads: int) -> int:
    m = cfg["micro"]
    params = _model(cfg)
    mc = MicroConfig(
        params=params,
        dt=m["dt"],
        boundary=m["boundary"],
        kernel_range=m["kernel_range"],
        seed=cfg["seed"],
        collisions=m["collisions"],
        collision_resets_clock=m["collision_resets_clock"],
    )
    sep = params.rho_diam if m["collisions"] else 0.0
    pos = place_agents(mc, params.n_robots, _cluster_density(params), 1.0, min_separation=sep)
    state = init_swarm(mc, pos)
    hist = Grid2D(m["hist_nx"], m["hist_ny"], params.arena[0], params.arena[1])
    mass = 1.0 if m["unit_mass"] else initial_mass(params.rho_diam, params.n_robots)
    rows = []

    def record(s):
        ob = observe(s, hist, mass=mass)
        c = s.counters
        rows.append((ob.time, ob.msd, ob.polarization, ob.empirical_coverage,
                     c["tumble"], c["align"], c["collision"], c["wall"], s.n))
        if s.step_index % m["store_every"] == 0:
            k = s.step_index
            write_csv(out / "fields" / f"{m['out_prefix']}_{k:06d}.csv", ["step", "id", "x", "y", "thx", "thy"],
                      ((k, i, *s.positions[i], *s.directions[i]) for i in range(s.n)))

    record(state)
    for _ in range(m["n_steps"]):
        state = step(state, mc)
        record(state)
    write_csv(out / "observables.csv",
              ["t", "msd", "polarization", "covered_mass", "tumbles", "aligns", "collisions", "wall_hits", "agents"],
              rows)
    write_manifest(out, "micro", cfg, {"final_time": state.time, "counters": state.counters, "agents": state.n})
    return EXIT_OK


def cmd_pde(cfg, out: Path, threads: int) -> int:
    p, g = cfg["pde"], cfg["grid"]
    params = _model(cfg)
    grid = Grid2D(g["nx"], g["ny"], params.arena[0], params.arena[1], g["boundary"])
    coeffs = closure_coeffs(params)
    sc = SolverConfig(
        dt=p["dt"],
        t_end=p["t_end"],
        coeffs=coeffs,
        alpha=params.alpha,
        linear_solver_tol=p["linear_solver_tol"],
        linear_solver_max_iter=p["linear_solver_max_iter"],
        mobility_mode=p["mobility_mode"],
        store_every=p["store_every"],
        workers=threads,
    )
    u0 = initial_condition(grid, params.rho_diam, params.n_robots, normalize_mass=p["normalize_mass"])
    acc = CoverageAccumulator(grid)
    if p["ell"] > 0.0:
        traj = solve_aligned(u0, sc, grid, p["ell"], InfluenceKernelSpec(p["kernel_range"]), [acc])
    else:
        traj = solve(u0, sc, grid, [acc])
    curve = acc.curve()
    write_csv(out / "coverage.csv", ["t", "instantaneous", "time_averaged"],
              zip(curve.times, curve.instantaneous, curve.time_averaged))
    for k, u in zip(traj.steps, traj.fields):
        write_field(out / "fields" / f"{p['out_prefix']}_{k:06d}.csv", grid, u=u)
    write_manifest(out, "pde", cfg, {"stats": traj.stats, "coefficients": coeffs.to_dict(),
                                     "final_coverage": float(curve.time_averaged[-1]),
                                     "boundary_note": BOUNDARY_NOTES[grid.boundary_mode]})
    return EXIT_OK


def cmd_hyper(cfg, out: Path, threads: int) -> int:
    h = cfg["hyper"]
    # the swarming system needs some alignment; these two live in the hyper section
    params = _model(cfg, zeta=h["zeta"], kappa_align=h["kappa_align"])
    if h["kinetic_limit"] and not params.alpha > 1.5:
        raise ParameterError(f"alpha = {params.alpha}: the swarming limit of the kinetic model needs alpha > 1.5")
    system = HyperSystem.from_params(params)
    system.check()
    grid = Grid2D(h["nx"], h["ny"], h["lx"], h["ly"], "periodic")
    X, Y = grid.mesh()
    kx, ky = 2.0 * math.pi / grid.lx, 2.0 * math.pi / grid.ly
    u0 = 1.0 + h["amplitude"] * np.sin(kx * X) * np.cos(ky * Y)
    ang = h["angle_amplitude"] * np.sin(ky * Y)
    state = HyperState(u0, np.stack((np.cos(ang), np.sin(ang))))
    run = run_hyper(state, system, grid, h["dt"], h["t_end"], h["store_every"])
    for k, s in enumerate(run.states):
        write_field(out / "fields" / f"{h['out_prefix']}_{k:06d}.csv", grid, u=s.u, lx=s.lam[0], ly=s.lam[1])
    write_manifest(out, "hyper", cfg, {"stats": run.stats, "system": dataclasses.asdict(system),
                                       "snapshot_times": run.times})
    return EXIT_OK


def _scenario(cfg) -> EPuckScenario:
    m, c, g = cfg["model"], cfg["coverage"], cfg["grid"]
    base = EPuckScenario()
    return EPuckScenario(
        arena=tuple(m.get("arena", base.arena)),
        rho_diam=m.get("rho_diam", base.rho_diam),
        c=m.get("c", base.c),
        epsilon=m.get("epsilon", base.epsilon),
        gamma=m.get("gamma", base.gamma),
        sigma0=m.get("sigma0", base.sigma0),
        n_robots=m.get("n_robots", base.n_robots),
        alphas=tuple(c["alphas"]),
        grid_shape=(g["nx"], g["ny"]),
        boundary_mode=g["boundary"],
        mobility_mode=cfg["pde"]["mobility_mode"],
        dt=c["dt"],
        t_end=c["t_end"],
        normalize_mass=c["normalize_mass"],
        coverage_level=c["level"],
    )


def cmd_coverage(cfg, out: Path, threads: int) -> int:
    c = cfg["coverage"]
    sc = _scenario(cfg)
    study = run_coverage_study(sc, c["alphas"], c["n_list"], threads=threads)
    write_csv(out / "coverage.csv", ["alpha", "n_robots", "time", "instantaneous", "time_averaged"],
              study.long_rows())
    for (a, n), curve in sorted(study.curves.items()):
        write_csv(out / "curves" / f"alpha_{a:g}_n_{n}.csv", ["time", "instantaneous", "time_averaged"],
                  zip(curve.times, curve.instantaneous, curve.time_averaged))
    results = {"summary": study.summary, "scenario": sc.to_dict(),
               "stats": {f"{a}:{n}": s for (a, n), s in study.stats.items()}}
    if c["cluster_check"]:
        results["cluster_check"] = [cluster_doubling_check(sc, a, t_early=c["t_early"]) for a in c["alphas"]]
    write_manifest(out, "coverage-study", cfg, results)
    print(dumps(study.summary["orderings"]))
    return EXIT_SOLVER if study.failures else EXIT_OK


def cmd_xval(cfg, out: Path, threads: int) -> int:
    x = cfg["xval"]
    params = _model(cfg, alpha=x["alpha"])
    grid = Grid2D(x["nx"], x["ny"], x["lx"], x["ly"], "periodic")
    settings = XvalSettings(epsilon_kinetic=x["epsilon_kinetic"], compare_factor=x["compare_factor"],
                            pde_dt=x["pde_dt"], seed=cfg["seed"], workers=threads)
    rep = run_cross_validation(params, x["n_walkers"], grid, x["checkpoints"], settings)
    write_csv(out / "xval.csv", ["time", "l1_micro_pde", "l1_control", "l1_stable_limit"],
              zip(rep.checkpoints, rep.distances, rep.control_distances, rep.stable_limit_distances))
    write_manifest(out, "xval", cfg, rep.to_dict())
    print(dumps({"passes": rep.passes, "distances": rep.distances, "control": rep.control_distances,
                 "distance_t0": rep.distance_t0}))
    return EXIT_OK if rep.passes else EXIT_ACCEPTANCE


COMMANDS = {
    "coeffs": cmd_coeffs,
    "micro": cmd_micro,
    "pde": cmd_pde,
    "hyper": cmd_hyper,
    "coverage-study": cmd_coverage,
    "xval": cmd_xval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args.config, _overrides(args))
        threads = resolve_threads(args.threads, cfg.get("threads"))
        cfg["threads"] = threads
        out = Path(args.out) if args.out else (None if args.command == "coeffs" else Path(f"levyswarm-{args.command}"))
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        if args.command == "coeffs":
            return cmd_coeffs(cfg, out, threads, laplace=args.laplace)
        return COMMANDS[args.command](cfg, out, threads)
    except (ConfigError, ParameterError, ValueError, TypeError, KeyError) as exc:
        print(f"levyswarm: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, CollisionError, FloatingPointError) as exc:
        print(f"levyswarm: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
