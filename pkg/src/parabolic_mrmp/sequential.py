"""Sequential penalized relaxation: solve, re-seed from the iterate, repeat."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .model import Tolerances, dumps, solution_to_dict, straight_line_seed, verify
from .relax import (
    SIMPLIFIED,
    RelaxationConfig,
    build_relaxation,
    extract_iterate,
    iterate_solution,
    relaxation_gap,
    reseed,
)
from .validation import InvalidInstanceError, check_positions

CONVERGED = "converged"
MAX_ITERS = "max_iters"
SUBPROBLEM_FAILURE = "subproblem_failure"

STOP_EPS = 1e-12
TRACE_COLUMNS = ("iter", "true_objective", "penalized_objective", "max_gap",
                 "collision_violation", "time")


@dataclass(frozen=True)
class SequentialConfig:
    eta: float = 50.0
    rel_obj_tol: float = 1e-4
    max_iters: int = 200
    variant: str = SIMPLIFIED
    tolerances: Tolerances = field(default_factory=Tolerances)
    fix_obstacle_y: bool = True
    exempt_endpoints: bool = True

    def __post_init__(self):
        if not self.rel_obj_tol > 0:
            raise InvalidInstanceError("rel_obj_tol must be positive")
        if int(self.max_iters) < 1:
            raise InvalidInstanceError("max_iters must be at least 1")
        if not self.eta > 0:
            raise InvalidInstanceError("eta must be positive")

    def relaxation(self):
        return RelaxationConfig(variant=self.variant, eta=self.eta,
                                fix_obstacle_y=self.fix_obstacle_y,
                                exempt_endpoints=self.exempt_endpoints)


@dataclass
class IterationRecord:
    k: int
    true_objective: float
    penalized_objective: float
    max_gap: float
    collision_violation: float
    subproblem_time: float
    feasible: bool = False


@dataclass
class SolveReport:
    iterations: list
    termination: str
    final: object
    feasible: bool
    method: str = SIMPLIFIED
    message: str = ""
    feasibility: object = None

    @property
    def num_iterations(self):
        return len(self.iterations)

    @property
    def total_time(self):
        return float(sum(r.subproblem_time for r in self.iterations))

    def trace_rows(self):
        return [
            (r.k, r.true_objective, r.penalized_objective, r.max_gap,
             r.collision_violation, r.subproblem_time)
            for r in self.iterations
        ]

    def to_dict(self):
        return {
            "method": self.method,
            "termination": self.termination,
            "feasible": self.feasible,
            "message": self.message,
            "iterations": [
                {
                    "iter": r.k,
                    "true_objective": r.true_objective,
                    "penalized_objective": r.penalized_objective,
                    "max_gap": r.max_gap,
                    "collision_violation": r.collision_violation,
                    "subproblem_time": r.subproblem_time,
                    "feasible": r.feasible,
                }
                for r in self.iterations
            ],
            "solution": None if self.final is None
            else solution_to_dict(self.final, self.feasibility),
        }

    def to_json(self):
        return dumps(self.to_dict())

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in self.trace_rows():
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def stopping_criterion(prev_obj, cur_obj, config=None):
    """True once successive objectives agree to ``rel_obj_tol`` (relative)."""
    tol = config if isinstance(config, float) else (config or SequentialConfig()).rel_obj_tol
    return abs(cur_obj - prev_obj) / max(abs(prev_obj), STOP_EPS) <= tol


def _finalize(report, instance, solution, max_gap, tolerances):
    report.final = solution
    if solution is None:
        report.feasible = False
        return report
    fr = verify(instance, solution, tolerances)
    report.feasibility = fr
    report.feasible = bool(fr.feasible and max_gap <= tolerances.collision)
    return report


def solve_sequential(instance, seed=None, config=None, backend=None, callback=None):
    """Run the sequential penalized relaxation from ``seed`` (straight lines if absent).

    ``callback(k, iterate, record)`` is invoked after every successful subproblem.
    """
    config = config or SequentialConfig()
    backend = conic.get_backend(backend)
    seed = check_positions(instance, straight_line_seed(instance) if seed is None else seed)
    prog, layout = build_relaxation(instance, seed, config.relaxation())
    report = SolveReport([], MAX_ITERS, None, False, method=config.variant)
    solution, max_gap, prev = None, np.inf, None
    for k in range(1, int(config.max_iters) + 1):
        reseed(prog, layout, seed)
        result = conic.solve(prog, backend)
        if result.status != conic.OPTIMAL:
            report.termination = SUBPROBLEM_FAILURE
            report.message = f"iteration {k}: {result.status} ({result.message})"
            break
        iterate = extract_iterate(layout, result, instance)
        candidate = iterate_solution(iterate, instance)
        gap = relaxation_gap(iterate, instance)
        fr = verify(instance, candidate, config.tolerances)
        record = IterationRecord(
            k=k,
            true_objective=candidate.objective,
            penalized_objective=result.objective_value,
            max_gap=gap.max_gap,
            collision_violation=fr.collision_violation,
            subproblem_time=result.solve_time,
            feasible=bool(fr.feasible and gap.max_gap <= config.tolerances.collision),
        )
        report.iterations.append(record)
        solution, max_gap = candidate, gap.max_gap
        if callback is not None:
            callback(k, iterate, record)
        seed = {rid: iterate.states[rid][:, : instance.n] for rid in instance.robot_ids}
        if prev is not None and stopping_criterion(prev, record.penalized_objective, config):
            report.termination = CONVERGED
            break
        prev = record.penalized_objective
    return _finalize(report, instance, solution, max_gap, config.tolerances)


def feasibility_preservation_check(instance, feasible_seed_solution, config=None, backend=None,
                                   slack=1e-6):
    """Run from a feasible seed and check every iterate stays feasible and never costs more.

    The seed's own objective is the first entry of the returned trace.
    """
    config = config or SequentialConfig()
    fr = verify(instance, feasible_seed_solution, config.tolerances)
    if not fr.feasible:
        raise InvalidInstanceError(
            f"seed solution is not feasible (collision {fr.collision_violation:.3g}, "
            f"dynamics {fr.dynamics_residual:.3g}, control {fr.control_violation:.3g})"
        )
    seed = {r.id: np.asarray(feasible_seed_solution.states[r.id])[:, : instance.n]
            for r in instance.robots}
    report = solve_sequential(instance, seed, config, backend)
    trace = [feasible_seed_solution.objective] + [r.true_objective for r in report.iterations]
    all_feasible = bool(report.iterations) and all(r.feasible for r in report.iterations)
    monotone = all(b <= a + slack for a, b in zip(trace, trace[1:]))
    ok = all_feasible and monotone and report.termination != SUBPROBLEM_FAILURE
    return ok, {"objectives": trace, "all_feasible": all_feasible, "monotone": monotone,
                "report": report}
