"""Command-line front end.

Subcommands ``build-model``, ``solve``, ``scan``, ``compare`` and
``stress``.  Exit codes: 0 success, 2 usage, 3 non-convergence, 4 resource
cap, 1 anything else.  Models are cached under ``$KOOPMAN_LAMBERT_CACHE``
(default ``~/.cache/koopman-lambert``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_simpson

from . import __version__
from .basis import DomainBox
from .config import ConfigError, ScenarioConfig, load_config, with_gravity
from .elements import (
    CartesianState,
    cartesian_to_elements_array,
    elements_to_cartesian_array,
    time_rate,
)
from .exceptions import KoopmanLambertError, ResourceLimitError, SolverError
from .koopman import MODEL_FORMAT_VERSION, KoopmanModel
from .lambert import (
    LARGE_MODEL_SIZE,
    build_element_model,
    default_order,
    energy_scan,
    estimate_build_cost,
    plan_domain,
    scan_argmin,
    solve,
)
from .oracles import propagate_elements_numeric, propagate_numeric, universal_lambert
from .report import fmt, line_plot_svg, provenance, write_csv

log = logging.getLogger("koopman_lambert")

CACHE_ENV = "KOOPMAN_LAMBERT_CACHE"
EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_UNCONVERGED, EXIT_RESOURCE = 0, 1, 2, 3, 4

SOLUTION_HEADER = ["tof", "revolutions", "v0x", "v0y", "v0z", "specific_energy",
                   "semi_major_axis", "position_residual", "tof_residual", "iterations",
                   "converged"]


class UsageError(Exception):
    pass


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "koopman-lambert")


def model_key(gravity, order, domain: DomainBox, assembly) -> str:
    data = {"gravity": gravity.to_dict(), "order": order, "domain": domain.to_dict(),
            "assembly": assembly, "format": MODEL_FORMAT_VERSION}
    text = json.dumps(data, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class ModelHandle:
    model: KoopmanModel
    key: str
    cache_hit: bool
    build_seconds: float
    warm: list | None


def obtain_model(config: ScenarioConfig, problems, allow_large=False, use_cache=True) -> ModelHandle:
    """Load the matching cached model or build and cache a new one."""
    gravity = config.gravity
    order = config.basis.order or default_order(gravity)
    cost = estimate_build_cost(order)
    if cost["basis_size"] > LARGE_MODEL_SIZE and not allow_large:
        raise ResourceLimitError(
            f"order {order} gives m = {cost['basis_size']} basis functions "
            f"(~{cost['matrix_mb']:.0f} MB per matrix, est. {cost['seconds_estimate']:.0f} s "
            "to build, more to propagate); rerun with --allow-large-model")
    domain, warm = plan_domain(problems, gravity, config.basis.inflation,
                               config.basis.min_half_width, config.solver)
    if config.basis.lower is not None:
        domain = DomainBox(config.basis.lower, config.basis.upper)
    key = model_key(gravity, order, domain, config.basis.assembly)
    path = cache_dir() / f"model-{key}.json"
    if use_cache and path.exists():
        try:
            return ModelHandle(KoopmanModel.load(path), key, True, 0.0, warm)
        except (ValueError, KeyError, TypeError) as exc:
            log.warning("cached model %s is unreadable (%s); rebuilding", path, exc)
    start = time.perf_counter()
    model = build_element_model(gravity, order, domain, config.basis.assembly, allow_large)
    elapsed = time.perf_counter() - start
    if use_cache:
        try:
            model.save(path)
        except OSError as exc:
            log.warning("could not write model cache %s: %s", path, exc)
    return ModelHandle(model, key, False, elapsed, warm)


def _out(config) -> Path:
    path = Path(config.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_eigenvalues(config, handle):
    table = handle.model.eigenvalue_table()
    return write_csv(_out(config) / "eigenvalues.csv", ["index", "re", "im"],
                     [(k, re, im) for k, (re, im) in enumerate(table)],
                     provenance(config.digest(), handle.key))


def _eigen_summary(model) -> str:
    lam = model.eigenvalues
    return (f"eigenvalues: {lam.size}, max |Re| {np.abs(lam.real).max():.3e}, "
            f"max |Im| {np.abs(lam.imag).max():.6f}, "
            f"diagonalizable {model.diagonalizable}, cond(P) {model.condition_P:.3e}")


def _solution_row(sol):
    return [sol.tof, sol.revolutions, *sol.v0, sol.specific_energy, sol.semi_major_axis,
            sol.position_residual, sol.tof_residual, sol.iterations, sol.converged]


def _print_solution(sol):
    print(f"tof {sol.tof:.3f} s  N {sol.revolutions}  converged {sol.converged}  "
          f"iterations {sol.iterations}  wall {sol.wall_time:.3f} s")
    print(f"v0 [km/s] {sol.v0[0]:.9f} {sol.v0[1]:.9f} {sol.v0[2]:.9f}")
    print(f"E {sol.specific_energy:.6f} kJ/kg  a {sol.semi_major_axis:.3f} km")
    print(f"residuals: position {sol.position_residual:.3e} km  tof {sol.tof_residual:.3e} s")


# -- commands -------------------------------------------------------------------

def cmd_build_model(config, args) -> int:
    handle = obtain_model(config, [config.problem()], args.allow_large_model)
    print(f"model {handle.key}  m = {handle.model.size}  order {handle.model.basis.max_order}")
    print(f"cache {'hit' if handle.cache_hit else 'miss'}  build time {handle.build_seconds:.3f} s")
    print(_eigen_summary(handle.model))
    _write_eigenvalues(config, handle)
    return EXIT_OK


def trajectory_rows(model, x0, theta_end, gravity, n_samples):
    thetas, states = model.trajectory(x0, theta_end, n_samples)
    times = cumulative_simpson(time_rate(states, gravity), x=thetas, initial=0.0)
    cart = elements_to_cartesian_array(states, gravity)
    return [(th, t, *c) for th, t, c in zip(thetas, times, cart)]


def cmd_solve(config, args) -> int:
    problem = config.problem()
    handle = obtain_model(config, [problem], args.allow_large_model)
    guess = handle.warm[0] if handle.warm else None
    sol = solve(problem, handle.model, config.solver, guess)
    _print_solution(sol)
    out = _out(config)
    comments = provenance(config.digest(), handle.key)
    write_csv(out / "solution.csv", SOLUTION_HEADER, [_solution_row(sol)], comments)
    x0 = cartesian_to_elements_array(np.concatenate([problem.r0, sol.v0]), problem.gravity)
    try:
        rows = trajectory_rows(handle.model, x0, sol.delta_theta, problem.gravity,
                               config.integrator.n_samples)
        write_csv(out / "trajectory.csv", ["theta", "t", "x", "y", "z", "vx", "vy", "vz"],
                  rows, comments)
    except KoopmanLambertError as exc:
        log.warning("trajectory not written: %s", exc)
    _write_eigenvalues(config, handle)
    print(f"wrote {out / 'solution.csv'}")
    return EXIT_OK if sol.converged else EXIT_UNCONVERGED


def cmd_scan(config, args) -> int:
    tof_min = args.tof_min if args.tof_min is not None else config.scan.tof_min
    tof_max = args.tof_max if args.tof_max is not None else config.scan.tof_max
    steps = args.steps if args.steps is not None else config.scan.steps
    if tof_min is None or tof_max is None:
        raise UsageError("scan needs tof_min and tof_max ([scan] section or --tof-min/--tof-max)")
    if not tof_min < tof_max or steps < 2:
        raise UsageError("scan needs tof_min < tof_max and steps >= 2")
    grid = np.linspace(tof_min, tof_max, steps)
    problem = config.problem()
    problems = [problem.with_tof(t) for t in grid]
    handle = obtain_model(config, problems, args.allow_large_model)
    guess = np.stack(handle.warm) if handle.warm else None
    points = energy_scan(problem, grid, handle.model, config.solver,
                         warm_start=config.scan.warm_start, initial_guess=guess)
    rows = []
    for p in points:
        s = p.solution
        if s is None:
            rows.append([p.tof, None, None, None, None, 0, False, p.error])
        else:
            rows.append([p.tof, s.specific_energy, s.semi_major_axis, s.position_residual,
                         s.tof_residual, s.iterations, s.converged, ""])
    out = _out(config)
    comments = provenance(config.digest(), handle.key)
    write_csv(out / "scan.csv", ["tof", "specific_energy", "semi_major_axis",
                                 "position_residual", "tof_residual", "iterations",
                                 "converged", "error"], rows, comments)
    _write_eigenvalues(config, handle)
    best = scan_argmin(points)
    good = [p for p in points if p.ok]
    marker = None
    if best is not None:
        marker = (best.tof, best.solution.specific_energy,
                  f"min {best.solution.specific_energy:.3f} at {best.tof:.0f} s")
    line_plot_svg(out / "scan.svg",
                  {"specific energy": ([p.tof for p in good],
                                       [p.solution.specific_energy for p in good])},
                  title="Specific energy vs time of flight", xlabel="time of flight [s]",
                  ylabel="specific energy [kJ/kg]", marker=marker)
    print(f"{len(good)}/{len(points)} points converged")
    if best is None:
        print("no point converged")
        return EXIT_UNCONVERGED
    print(f"argmin tof {best.tof:.3f} s  E {best.solution.specific_energy:.6f} kJ/kg  "
          f"a {best.solution.semi_major_axis:.3f} km")
    print(f"wrote {out / 'scan.csv'} and {out / 'scan.svg'}")
    return EXIT_OK


def cmd_compare(config, args) -> int:
    problem = config.problem()
    velocities = {"universal": universal_lambert(problem.r0, problem.rf, problem.tof,
                                                 problem.revolutions, problem.prograde,
                                                 problem.gravity)}
    status = EXIT_OK
    keys = []
    for label, enabled in (("koopman-two-body", False), ("koopman-j2", True)):
        sub = with_gravity(config, enabled)
        if not enabled:
            sub = replace(sub, basis=replace(sub.basis, order=1))
        p = sub.problem()
        handle = obtain_model(sub, [p], args.allow_large_model)
        sol = solve(p, handle.model, sub.solver, handle.warm[0] if handle.warm else None)
        if not sol.converged:
            log.warning("%s solve did not converge (residual %.3e km)", label,
                        sol.position_residual)
            status = EXIT_UNCONVERGED
        velocities[label] = sol.v0
        keys.append(handle.key)
    rows = []
    for label, v0 in velocities.items():
        for world, enabled in (("two-body", False), ("j2", True)):
            result = propagate_numeric(CartesianState(problem.r0, v0), problem.tof,
                                       problem.gravity.with_j2(enabled), config.integrator)
            miss = float(np.linalg.norm(result.final_state.position - problem.rf))
            rows.append([label, world, *v0, miss])
            print(f"{label:>17s} v0 in {world:>8s} world: miss {miss:.6e} km")
    out = _out(config)
    write_csv(out / "compare.csv", ["solution", "world", "v0x", "v0y", "v0z", "miss_km"], rows,
              provenance(config.digest(), ",".join(keys)))
    print(f"wrote {out / 'compare.csv'}")
    return status


def cmd_stress(config, args) -> int:
    """Spectral vs numerical element propagation over many revolutions."""
    problem = config.problem()
    handle = obtain_model(config, [problem], args.allow_large_model)
    sol = solve(problem, handle.model, config.solver, handle.warm[0] if handle.warm else None)
    x0 = cartesian_to_elements_array(np.concatenate([problem.r0, sol.v0]), problem.gravity)
    revs = np.arange(0, args.max_revs + 1, max(1, args.every))
    thetas = 2.0 * math.pi * revs
    _, ko = handle.model.trajectory(x0, thetas[-1], len(thetas))
    span = thetas[-1]
    _, truth, _ = propagate_elements_numeric(x0, span, problem.gravity, config.integrator,
                                             len(thetas))
    rows = []
    for k, th, a, b in zip(revs, thetas, ko, truth):
        try:
            err = float(np.linalg.norm(elements_to_cartesian_array(a, problem.gravity)[:3]
                                       - elements_to_cartesian_array(b, problem.gravity)[:3]))
        except KoopmanLambertError:
            err = math.nan
        rows.append([int(k), th, err])
    out = _out(config)
    write_csv(out / "stress.csv", ["revolutions", "theta", "position_error_km"], rows,
              provenance(config.digest(), handle.key))
    shown = rows[:: max(1, len(rows) // 10)]
    if shown[-1] is not rows[-1]:
        shown.append(rows[-1])
    for k, _, err in shown:
        print(f"{k:5d} revolutions: position error {fmt(err)} km")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario INI file")
    common.add_argument("--j2", choices=("on", "off"), help="override J2 setting")
    common.add_argument("--order", type=int, help="basis order c_max")
    common.add_argument("--revs", type=int, help="number of full revolutions N")
    common.add_argument("--tof", type=float, help="time of flight [s]")
    common.add_argument("--out", help="output directory")
    common.add_argument("--allow-large-model", action="store_true",
                        help=f"permit models above {LARGE_MODEL_SIZE} basis functions")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="koopman-lambert",
                                     description="Lambert transfers through a Koopman model")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build-model", parents=[common], help="build or load the Koopman model")
    sub.add_parser("solve", parents=[common], help="solve one transfer")
    scan = sub.add_parser("scan", parents=[common], help="specific energy over a tof grid")
    scan.add_argument("--tof-min", type=float)
    scan.add_argument("--tof-max", type=float)
    scan.add_argument("--steps", type=int)
    sub.add_parser("compare", parents=[common],
                   help="miss distances of universal and Koopman solutions with and without J2")
    stress = sub.add_parser("stress", parents=[common],
                            help="long-arc spectral propagation error")
    stress.add_argument("--max-revs", type=int, default=100)
    stress.add_argument("--every", type=int, default=1)
    return parser


COMMANDS = {
    "build-model": cmd_build_model,
    "solve": cmd_solve,
    "scan": cmd_scan,
    "compare": cmd_compare,
    "stress": cmd_stress,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    overrides = {
        "j2": None if args.j2 is None else args.j2 == "on",
        "order": args.order,
        "revolutions": args.revs,
        "tof": args.tof,
        "output": args.out,
    }
    try:
        config = load_config(args.config, overrides)
        return COMMANDS[args.command](config, args)
    except (ConfigError, UsageError, OSError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceLimitError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except SolverError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_UNCONVERGED
    except KoopmanLambertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
