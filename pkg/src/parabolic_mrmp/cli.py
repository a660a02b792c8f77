"""Command-line entry point: generate, solve, verify, bench and plot.

Exit codes: 0 success/feasible, 1 bad input or usage, 2 generation failure,
3 solution infeasible, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bench, conic, plot
from .conic import CapabilityError
from .model import (
    Tolerances,
    dumps,
    load_scenario,
    load_solution,
    save_scenario,
    save_solution,
    verify,
)
from .sequential import SUBPROBLEM_FAILURE, TRACE_COLUMNS, SequentialConfig
from .validation import InvalidInstanceError

EXIT_OK, EXIT_INPUT, EXIT_GENERATION, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3, 4

SOLVE_METHODS = ("parabolic", "parabolic-full", "sdp", "scp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would exit with 2, which is reserved for generation failures
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _horizon_flags(p):
    p.add_argument("--horizon", "-T", type=int, default=bench.DEFAULT_T, help="control steps")
    p.add_argument("--dt", type=float, default=bench.DEFAULT_DT, help="time step in seconds")
    p.add_argument("--u-max", type=float, default=bench.DEFAULT_U_MAX, help="control bound")
    p.add_argument("-p", type=int, choices=(1, 2), default=1, help="control-bound norm")
    p.add_argument("-q", type=int, choices=(1, 2), default=1, help="objective norm")


def _solver_flags(p):
    p.add_argument("--eta", type=float, default=50.0, help="penalty weight")
    p.add_argument("--tol", type=float, default=1e-4, help="relative objective tolerance")
    p.add_argument("--max-iters", type=int, default=200, help="iteration cap")
    p.add_argument("--backend", choices=sorted(conic.BACKENDS), default="clarabel",
                   help="conic backend")


def build_parser():
    parser = _Parser(prog="parabolic-mrmp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a scenario file",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    g.add_argument("--map", choices=("random",) + bench.PRESETS, default="random",
                   help="map type")
    g.add_argument("--robots", type=int, default=5, help="number of robots")
    g.add_argument("--obstacles", type=int, default=0, help="number of obstacles (random map)")
    g.add_argument("--seed", type=int, default=0, help="rng seed (random map)")
    g.add_argument("--dimension", type=int, choices=(2, 3), default=2, help="random map dimension")
    g.add_argument("--diameter", type=float, default=0.1, help="entity diameter")
    g.add_argument("--max-attempts", type=int, default=10000, help="placement attempt budget")
    g.add_argument("--gap", type=float, default=0.25, help="bottleneck opening width")
    g.add_argument("--clearance", type=float, default=0.15, help="maze corridor width")
    g.add_argument("--radius", type=float, default=0.4, help="swap_circle radius")
    g.add_argument("--phase", type=float, default=0.0, help="swap_circle angular offset (rad)")
    _horizon_flags(g)
    g.add_argument("-o", "--output", required=True, help="scenario JSON path")

    s = sub.add_parser("solve", help="plan trajectories for a scenario",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("scenario")
    s.add_argument("--method", choices=SOLVE_METHODS, default="parabolic", help="planner")
    _solver_flags(s)
    s.add_argument("--seed-file", help="JSON map robot id -> (T+1) x n seed positions")
    s.add_argument("-o", "--output", default="solution.json", help="solution JSON path")
    s.add_argument("--report", help="report JSON path")
    s.add_argument("--trace", help="convergence trace CSV path")

    v = sub.add_parser("verify", help="check a solution against its scenario",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    v.add_argument("scenario")
    v.add_argument("solution")

    b = sub.add_parser("bench", help="run an experiment harness",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    b.add_argument("mode", choices=("success-rate", "scaling", "bad-seed"))
    b.add_argument("--methods", default="parabolic,scp", help="comma-separated methods")
    b.add_argument("--obstacles", type=_ints, default=[10, 20, 30], help="obstacle counts")
    b.add_argument("--robots", type=_ints, default=None,
                   help="robot count(s); defaults 5 / 2,4,8,16 / 4 per mode")
    b.add_argument("--trials", type=int, default=None, help="trials per point (20 or 3 by mode)")
    b.add_argument("--seed", type=int, default=0, help="base rng seed")
    b.add_argument("--dimension", type=int, choices=(2, 3), default=2,
                   help="workspace dimension (scaling)")
    b.add_argument("--point", type=_floats, default=[0.1, 0.1], help="bad-seed meeting point")
    _horizon_flags(b)
    _solver_flags(b)
    b.add_argument("--no-timing", action="store_true",
                   help="write 'redacted' in wall-clock columns so repeated runs match byte for byte")
    b.add_argument("-o", "--output", required=True, help="table CSV path")
    b.add_argument("--records", help="per-trial CSV path")

    pl = sub.add_parser("plot", help="render a scenario and solution to SVG",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    pl.add_argument("scenario")
    pl.add_argument("solution", nargs="?")
    pl.add_argument("-o", "--output", default="plot.svg", help="SVG path")
    return parser


def cmd_generate(args):
    if args.map == "random":
        spec = bench.RandomMapSpec(num_robots=args.robots, num_obstacles=args.obstacles,
                                   rng_seed=args.seed, entity_diameter=args.diameter,
                                   max_placement_attempts=args.max_attempts,
                                   dimension=args.dimension)
        instance = bench.generate_random_instance(spec, T=args.horizon, u_max=args.u_max,
                                                  p=args.p, q=args.q, dt=args.dt)
    else:
        common = dict(T=args.horizon, dt=args.dt, u_max=args.u_max, p=args.p, q=args.q)
        extra = {
            "bottleneck": dict(num_robots=args.robots, gap=args.gap, robot_diameter=args.diameter),
            "maze": dict(num_robots=args.robots, clearance=args.clearance,
                         robot_diameter=args.diameter),
            "swap_circle": dict(k=args.robots, radius=args.radius, phase=args.phase,
                                robot_diameter=args.diameter),
        }[args.map]
        instance = bench.generate_preset(args.map, **extra, **common)
    save_scenario(instance, args.output)
    print(f"wrote {args.output}: {len(instance.robots)} robots, {len(instance.obstacles)} "
          f"obstacles, n={instance.n}, T={instance.T}, dt={instance.dt}")
    return EXIT_OK


def _load_seed(path, instance):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if "states" in data:
        data = data["states"]
    return {int(k): np.asarray(v, dtype=float) for k, v in data.items()}


def cmd_solve(args):
    instance = load_scenario(args.scenario)
    seed = _load_seed(args.seed_file, instance) if args.seed_file else None
    report = bench.run_method(instance, args.method, seed, eta=args.eta, rel_obj_tol=args.tol,
                              max_iters=args.max_iters, backend=args.backend)
    if report.final is not None:
        save_solution(report.final, args.output, report.feasibility)
    if args.report:
        _write(args.report, report.to_json())
    if args.trace:
        _write(args.trace, report.to_csv())
    last = report.iterations[-1] if report.iterations else None
    print(f"{args.method}: {report.termination} after {report.num_iterations} iterations, "
          f"feasible={str(report.feasible).lower()}"
          + (f", objective={last.true_objective:.6g}, max_gap={last.max_gap:.3g}" if last else ""))
    if report.termination == SUBPROBLEM_FAILURE:
        print(report.message, file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_verify(args):
    instance = load_scenario(args.scenario)
    solution = load_solution(args.solution, instance)
    report = verify(instance, solution, Tolerances())
    print(dumps(report.to_dict()))
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_bench(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    common = dict(T=args.horizon, dt=args.dt, u_max=args.u_max, eta=args.eta,
                  rel_obj_tol=args.tol, max_iters=args.max_iters, backend=args.backend)
    if args.mode == "success-rate":
        robots = (args.robots or [5])[0]
        result = bench.run_success_rate(methods, args.obstacles, trials=args.trials or 20,
                                        base_rng_seed=args.seed, num_robots=robots, **common)
    elif args.mode == "scaling":
        result = bench.run_scaling(methods, args.robots or [2, 4, 8, 16],
                                   dimension=args.dimension, trials=args.trials or 3,
                                   base_rng_seed=args.seed, **common)
    else:
        instance = bench.generate_preset("swap_circle", k=(args.robots or [4])[0], T=args.horizon,
                                         dt=args.dt, u_max=args.u_max)
        config = SequentialConfig(eta=args.eta, rel_obj_tol=args.tol, max_iters=args.max_iters)
        report = bench.run_bad_seed_recovery(instance, args.point, config, args.backend)
        text = report.to_csv()
        if args.no_timing:
            text = _redact_trace(text)
        _write(args.output, text)
        print(f"bad-seed: {report.termination} after {report.num_iterations} iterations, "
              f"feasible={str(report.feasible).lower()}")
        if report.termination == SUBPROBLEM_FAILURE:
            return EXIT_SOLVER
        return EXIT_OK if report.feasible else EXIT_INFEASIBLE
    _write(args.output, result.to_csv(timing=not args.no_timing))
    if args.records:
        _write(args.records, result.records_csv(timing=not args.no_timing))
    for row in result.rows():
        print(", ".join(f"{k}={v}" for k, v in row.items()))
    for count, seed, message in result.generation_failures:
        print(f"generation failed (count={count}, seed={seed}): {message}", file=sys.stderr)
    return EXIT_OK


def _redact_trace(text):
    lines = text.splitlines()
    col = TRACE_COLUMNS.index("time")
    out = [lines[0]]
    for line in lines[1:]:
        cells = line.split(",")
        cells[col] = bench.REDACTED
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


def cmd_plot(args):
    instance = load_scenario(args.scenario)
    solution = load_solution(args.solution, instance) if args.solution else None
    plot.save_svg(instance, args.output, solution)
    print(f"wrote {args.output}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "verify": cmd_verify,
            "bench": cmd_bench, "plot": cmd_plot}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except bench.GenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except CapabilityError as exc:
        print(f"backend capability error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidInstanceError, OSError, ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
