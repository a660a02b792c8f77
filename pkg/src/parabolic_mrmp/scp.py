"""Sequential convex programming baseline with linearized collision constraints.

Each subproblem keeps dynamics, boundary and control bounds exact and
replaces ``|p_i - p_j| >= r_i + r_j`` by its supporting half-space at the
current reference positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import NONNEGATIVE, Affine, ConicProgram
from .model import Tolerances, straight_line_seed, verify
from .relax import (
    Layout,
    LiftedIterate,
    RelaxationConfig,
    _pairs,
    add_trajectory_block,
    iterate_solution,
)
from .sequential import (
    CONVERGED,
    MAX_ITERS,
    SUBPROBLEM_FAILURE,
    IterationRecord,
    SolveReport,
    _finalize,
    stopping_criterion,
)
from .validation import InvalidInstanceError, check_positions

DEGENERATE_EPS = 1e-9


@dataclass(frozen=True)
class ScpConfig:
    rel_obj_tol: float = 1e-4
    max_iters: int = 200
    trust_region: float | None = None
    degenerate_direction: tuple | None = None
    tolerances: Tolerances = Tolerances()

    def __post_init__(self):
        if not self.rel_obj_tol > 0:
            raise InvalidInstanceError("rel_obj_tol must be positive")
        if int(self.max_iters) < 1:
            raise InvalidInstanceError("max_iters must be at least 1")
        if self.trust_region is not None and not self.trust_region > 0:
            raise InvalidInstanceError("trust_region must be positive when given")


def linearize_collision(xi_ref, xj_ref, r_sum, degenerate_direction=None):
    """Half-space ``a @ (x_i - x_j) >= r_sum`` supporting the collision ball at the reference.

    Returns ``(a, r_sum)``.  Coincident references fall back to
    ``degenerate_direction`` (default: first coordinate axis).
    """
    d = np.asarray(xi_ref, dtype=float) - np.asarray(xj_ref, dtype=float)
    norm = np.linalg.norm(d)
    if norm < DEGENERATE_EPS:
        if degenerate_direction is None:
            a = np.zeros_like(d)
            a[0] = 1.0
        else:
            a = np.asarray(degenerate_direction, dtype=float)
            a = a / np.linalg.norm(a)
    else:
        a = d / norm
    return a, float(r_sum)


def _build(instance, reference, config):
    prog = ConicProgram()
    layout = Layout(instance=instance, config=RelaxationConfig())
    add_trajectory_block(prog, instance, layout)
    n, T = instance.n, instance.T
    times = np.arange(1, T)
    radius = {e.id: e.radius for e in instance.entities}
    obstacle_pos = {o.id: o.states[:, :n] for o in instance.obstacles}
    rows, cols, vals, consts = [], [], [], []
    r = 0
    for i, j in _pairs(instance):
        for t in times:
            pj = obstacle_pos[j][t] if j in obstacle_pos else reference[j][t]
            a, rsum = linearize_collision(reference[i][t], pj, radius[i] + radius[j],
                                          config.degenerate_direction)
            idx_i = layout.x[i][t, :n]
            rows += [r] * n
            cols += list(idx_i)
            vals += list(a)
            c = -rsum
            if j in obstacle_pos:
                c -= float(a @ pj)
            else:
                rows += [r] * n
                cols += list(layout.x[j][t, :n])
                vals += list(-a)
            consts.append(c)
            r += 1
    if r:
        coef = sp.csr_matrix((vals, (rows, cols)), shape=(r, prog.num_vars))
        prog.add_cone(NONNEGATIVE, Affine(coef, consts))
    if config.trust_region is not None and times.size:
        for rid in instance.robot_ids:
            idx = layout.x[rid][times, :n].reshape(-1)
            ref = reference[rid][times].reshape(-1)
            move = Affine.var(idx) - ref
            prog.add_cone(NONNEGATIVE, Affine.stack([config.trust_region - move,
                                                     config.trust_region + move]))
    layout.counts["linearized_rows"] = r
    layout.counts["num_vars"] = prog.num_vars
    return prog, layout


def solve_scp(instance, seed=None, config=None, backend=None):
    config = config or ScpConfig()
    backend = conic.get_backend(backend)
    reference = check_positions(instance, straight_line_seed(instance) if seed is None else seed)
    report = SolveReport([], MAX_ITERS, None, False, method="scp")
    solution, prev = None, None
    for k in range(1, int(config.max_iters) + 1):
        prog, layout = _build(instance, reference, config)
        result = conic.solve(prog, backend)
        if result.status != conic.OPTIMAL:
            report.termination = SUBPROBLEM_FAILURE
            report.message = f"iteration {k}: {result.status} ({result.message})"
            break
        z = result.primal
        states = {rid: z[idx] for rid, idx in layout.x.items()}
        controls = {rid: z[idx] for rid, idx in layout.u.items()}
        for o in instance.obstacles:
            states[o.id] = o.states.copy()
        candidate = iterate_solution(LiftedIterate(states, controls, {}, np.zeros(0, int)), instance)
        fr = verify(instance, candidate, config.tolerances)
        record = IterationRecord(
            k=k,
            true_objective=candidate.objective,
            penalized_objective=result.objective_value,
            max_gap=0.0,
            collision_violation=fr.collision_violation,
            subproblem_time=result.solve_time,
            feasible=fr.feasible,
        )
        report.iterations.append(record)
        solution = candidate
        reference = {rid: states[rid][:, : instance.n] for rid in instance.robot_ids}
        if prev is not None and stopping_criterion(prev, record.penalized_objective,
                                                   config.rel_obj_tol):
            report.termination = CONVERGED
            break
        prev = record.penalized_objective
    return _finalize(report, instance, solution, 0.0, config.tolerances)
