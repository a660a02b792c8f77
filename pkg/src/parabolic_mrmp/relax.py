"""Penalized convex relaxations of the lifted planning problem.

Three builders share one variable layout:

* ``parabolic_simplified`` keeps only the diagonal lifted entries ``Y_ii[t]``
  (``Y_ii >= |G x_i|^2`` and ``2 (Y_ii + Y_jj) >= (r_i + r_j)^2 + |G (x_i + x_j)|^2``);
* ``parabolic_full`` also keeps the off-diagonal ``Y_ij[t]`` with the two
  paraboloid bounds on ``Y_ii + Y_jj +- 2 Y_ij`` and the linear separation row;
* ``sdp`` constrains ``[[Y, M^T], [M, I]]`` to be positive semidefinite.

All of them minimize fuel plus ``eta * sum(Y_ii - 2 seed_i^T G x_i)`` over the
robots.  The seed only changes the linear objective, so :func:`reseed` updates
a built program in place between sequential iterations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import NONNEGATIVE, PSD, SECOND_ORDER, Affine, ConicProgram
from .model import Solution, evaluate_objective
from .validation import InvalidInstanceError, check_positions

SIMPLIFIED = "parabolic_simplified"
FULL = "parabolic_full"
SDP = "sdp"
VARIANTS = (SIMPLIFIED, FULL, SDP)


@dataclass(frozen=True)
class RelaxationConfig:
    variant: str = SIMPLIFIED
    eta: float = 50.0
    fix_obstacle_y: bool = True
    exempt_endpoints: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInstanceError(f"unknown relaxation variant {self.variant!r}")
        if not np.isfinite(self.eta) or self.eta < 0:
            raise InvalidInstanceError(f"eta must be a finite nonnegative number, got {self.eta}")


@dataclass
class Layout:
    """Where every named quantity lives in the primal vector."""

    instance: object
    config: RelaxationConfig
    x: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)
    y_diag: dict = field(default_factory=dict)
    y_off: dict = field(default_factory=dict)
    lifted_times: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    pairs: list = field(default_factory=list)
    aux: list = field(default_factory=list)
    base_objective: np.ndarray | None = None
    base_offset: float = 0.0
    counts: dict = field(default_factory=dict)


@dataclass
class LiftedIterate:
    states: dict
    controls: dict
    y_diag: dict
    lifted_times: np.ndarray
    y_full: dict | None = None

    def positions(self, n):
        return {k: v[:, :n] for k, v in self.states.items()}


@dataclass
class GapReport:
    gaps: dict
    max_gap: float
    sum_gap: float


# --- shared trajectory block -----------------------------------------------------


def _entries(var_idx, const):
    """Rows equal to ``z[var_idx]`` where ``var_idx >= 0``, else ``const``."""
    var_idx = np.asarray(var_idx, dtype=np.int64).reshape(-1)
    const = np.broadcast_to(np.asarray(const, dtype=float).reshape(-1)
                            if np.ndim(const) else const, var_idx.shape).astype(float)
    has = var_idx >= 0
    rows = np.nonzero(has)[0]
    width = int(var_idx.max()) + 1 if has.any() else 0
    coef = sp.csr_matrix((np.ones(rows.size), (rows, var_idx[has])), shape=(var_idx.size, width))
    const[has] = 0.0
    return Affine(coef, const)


def _combine(terms, offset=0.0):
    """Rows ``sum_k w_k * entry_k + offset`` where each term is ``(var_idx, const, w)``.

    Entries follow :func:`_entries`: a variable where ``var_idx >= 0``,
    otherwise the constant.
    """
    rows, cols, vals = [], [], []
    total = None
    for var_idx, const, w in terms:
        var_idx = np.asarray(var_idx, dtype=np.int64).reshape(-1)
        const = np.asarray(const, dtype=float).reshape(-1)
        has = var_idx >= 0
        r = np.nonzero(has)[0]
        rows.append(r)
        cols.append(var_idx[has])
        vals.append(np.full(r.size, float(w)))
        part = w * np.where(has, 0.0, const)
        total = part if total is None else total + part
    cols = np.concatenate(cols)
    width = int(cols.max()) + 1 if cols.size else 0
    coef = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), cols)),
                         shape=(total.size, width))
    return Affine(coef, total + offset)


def _dynamics_rows(x, u, A, B):
    """Rows ``x[t+1] - A x[t] - B u[t]`` for every step, assembled in one sparse build."""
    T, nx = x.shape[0] - 1, x.shape[1]
    m = B.shape[1]
    row = np.arange(T * nx).reshape(T, nx)
    rows = [row.reshape(-1)]
    cols = [x[1:].reshape(-1)]
    vals = [np.ones(T * nx)]
    ra, ca = np.nonzero(A)
    rows.append((row[:, ra]).reshape(-1))
    cols.append(x[:-1][:, ca].reshape(-1))
    vals.append(np.tile(-A[ra, ca], T))
    if m:
        rb, cb = np.nonzero(B)
        rows.append((row[:, rb]).reshape(-1))
        cols.append(u[:, cb].reshape(-1))
        vals.append(np.tile(-B[rb, cb], T))
    cols = np.concatenate(cols)
    coef = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), cols)),
                         shape=(T * nx, int(cols.max()) + 1))
    return Affine(coef, np.zeros(T * nx))


def _linear(matrix, idx):
    """Rows ``matrix @ z[idx]``."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    select = sp.csr_matrix((np.ones(idx.size), (np.arange(idx.size), idx)),
                           shape=(idx.size, int(idx.max()) + 1))
    return Affine(sp.csr_matrix(matrix) @ select, np.zeros(matrix.shape[0]))


def add_trajectory_block(prog, instance, layout):
    """Robot states and controls with dynamics, boundary and control-bound rows.

    Fuel terms are added to the objective.  Abs/norm epigraph auxiliaries are
    recorded in ``layout.aux`` so a primal vector can be packed from values.
    """
    T, n, p, q = instance.T, instance.n, instance.p, instance.q
    for robot in instance.robots:
        dyn, m = robot.dynamics, robot.dynamics.m
        x = prog.add_variables((T + 1) * 2 * n, f"x{robot.id}").reshape(T + 1, 2 * n)
        u = prog.add_variables(T * m, f"u{robot.id}").reshape(T, m)
        layout.x[robot.id], layout.u[robot.id] = x, u

        if T:
            prog.add_equality(_dynamics_rows(x, u, dyn.A, dyn.B))
        prog.add_equality(Affine.var(np.concatenate([x[0], x[T]]))
                          - np.concatenate([robot.x_init, robot.x_goal]))

        if m == 0 or T == 0:
            continue
        uv = Affine.var(u.reshape(-1))
        if q == 1:
            s = conic.add_abs_epigraph(prog, uv)
            layout.aux.append(("abs", s, u.reshape(-1)))
            prog.add_objective(Affine.var(s))
        else:
            t = conic.add_norm2_epigraph(prog, uv, dim=m)
            layout.aux.append(("norm2", t, u))
            prog.add_objective(Affine.var(t))
        if p == 1:
            if q != 1:
                s = conic.add_abs_epigraph(prog, uv)
                layout.aux.append(("abs", s, u.reshape(-1)))
            sums = sp.kron(sp.identity(T), np.ones((1, m)))
            prog.add_cone(NONNEGATIVE, robot.u_max - _linear(sums, s))
        else:
            head = Affine.constant(np.full(T, robot.u_max))
            prog.add_cone(SECOND_ORDER, conic._interleave([head], [uv], m), m + 1)


# --- builders ------------------------------------------------------------------------


def _lifted_times(instance, config):
    if config.exempt_endpoints:
        return np.arange(1, instance.T)
    return np.arange(0, instance.T + 1)


def _pairs(instance):
    robots = [r.id for r in instance.robots]
    out = list(itertools.combinations(robots, 2))
    out += [(r, o.id) for r in robots for o in instance.obstacles]
    return out


class _Geometry:
    """Per-entity position rows and diagonal lifted entries at the lifted times."""

    def __init__(self, instance, layout):
        n, lt = instance.n, layout.lifted_times
        self.n, self.L = n, lt.size
        self.radius = {e.id: e.radius for e in instance.entities}
        self.pos_idx, self.pos_const = {}, {}
        for r in instance.robots:
            self.pos_idx[r.id] = layout.x[r.id][lt, :n]
            self.pos_const[r.id] = np.zeros((lt.size, n))
        for o in instance.obstacles:
            self.pos_idx[o.id] = np.full((lt.size, n), -1)
            self.pos_const[o.id] = o.states[lt, :n]
        self.y_idx, self.y_const = {}, {}
        for e in instance.entities:
            if e.id in layout.y_diag:
                self.y_idx[e.id] = layout.y_diag[e.id]
                self.y_const[e.id] = np.zeros(lt.size)
            else:
                self.y_idx[e.id] = np.full(lt.size, -1)
                self.y_const[e.id] = np.sum(self.pos_const[e.id] ** 2, axis=1)

    def pos(self, eid):
        return _entries(self.pos_idx[eid], self.pos_const[eid])

    def stacked(self, pairs):
        """Per-pair-and-time index/constant arrays for both ends, pairs outermost."""
        def cat(table, side):
            return np.concatenate([np.asarray(table[p[side]]).reshape(-1) for p in pairs])

        ends = {}
        for side in (0, 1):
            ends[side] = dict(y=(cat(self.y_idx, side), cat(self.y_const, side)),
                              pos=(cat(self.pos_idx, side), cat(self.pos_const, side)))
        rsum2 = np.repeat([(self.radius[i] + self.radius[j]) ** 2 for i, j in pairs], self.L)
        return ends[0], ends[1], rsum2

    def y(self, eid):
        return _entries(self.y_idx[eid], self.y_const[eid])


def _start(instance, config):
    if not isinstance(config, RelaxationConfig):
        raise InvalidInstanceError("config must be a RelaxationConfig")
    prog = ConicProgram()
    layout = Layout(instance=instance, config=config)
    layout.lifted_times = _lifted_times(instance, config)
    layout.pairs = _pairs(instance)
    add_trajectory_block(prog, instance, layout)
    L = layout.lifted_times.size
    for r in instance.robots:
        layout.y_diag[r.id] = prog.add_variables(L, f"Y{r.id}")
    if not config.fix_obstacle_y:
        for o in instance.obstacles:
            layout.y_diag[o.id] = prog.add_variables(L, f"Y{o.id}")
    layout.base_objective = prog.objective.copy()
    layout.base_offset = prog.offset
    return prog, layout, _Geometry(instance, layout)


def _diagonal_rows(prog, instance, layout, geo):
    """``Y_ii >= |G x_i|^2`` for robots (paraboloid) and free obstacle entries (linear)."""
    robots = [r.id for r in instance.robots]
    if geo.L and robots:
        lin = Affine.stack([geo.y(i) for i in robots])
        vec = Affine.stack([geo.pos(i) for i in robots])
        conic.add_quadratic_upper_bound(prog, lin, vec)
    free_obs = [o.id for o in instance.obstacles if o.id in layout.y_diag]
    if geo.L and free_obs:
        rows = [geo.y(j) - np.sum(geo.pos_const[j] ** 2, axis=1) for j in free_obs]
        prog.add_cone(NONNEGATIVE, Affine.stack(rows))
    layout.counts["diag_rows"] = geo.L * len(robots)


def _finish(prog, layout, seed):
    _finalize_base(prog, layout)
    reseed(prog, layout, seed)
    return prog, layout


def _finalize_base(prog, layout):
    # Everything added so far except the penalty is fixed fuel cost.
    width = prog.num_vars
    base = np.zeros(width)
    base[: layout.base_objective.size] = layout.base_objective
    layout.base_objective = base
    layout.counts["num_vars"] = prog.num_vars


def build_penalized_parabolic(instance, seed_positions, config=None):
    config = config or RelaxationConfig()
    if config.variant != SIMPLIFIED:
        raise InvalidInstanceError(f"simplified builder called with variant {config.variant!r}")
    seed = check_positions(instance, seed_positions)
    prog, layout, geo = _start(instance, config)
    _diagonal_rows(prog, instance, layout, geo)
    if geo.L and layout.pairs:
        a, b, rsum2 = geo.stacked(layout.pairs)
        lin = _combine([(*a["y"], 2.0), (*b["y"], 2.0)], -rsum2)
        vec = _combine([(*a["pos"], 1.0), (*b["pos"], 1.0)])
        conic.add_quadratic_upper_bound(prog, lin, vec)
    layout.counts["pair_rows"] = geo.L * len(layout.pairs)
    return _finish(prog, layout, seed)


def build_full_parabolic(instance, seed_positions, config=None):
    config = config or RelaxationConfig(variant=FULL)
    if config.variant != FULL:
        raise InvalidInstanceError(f"full builder called with variant {config.variant!r}")
    seed = check_positions(instance, seed_positions)
    prog, layout, geo = _start(instance, config)
    _diagonal_rows(prog, instance, layout, geo)
    for i, j in layout.pairs:
        layout.y_off[(i, j)] = prog.add_variables(geo.L, f"Y{i},{j}")
    if geo.L and layout.pairs:
        a, b, rsum2 = geo.stacked(layout.pairs)
        off = (np.concatenate([layout.y_off[p] for p in layout.pairs]), 0.0)
        ysum = [(*a["y"], 1.0), (*b["y"], 1.0)]
        conic.add_quadratic_upper_bound(prog, _combine(ysum + [(*off, 2.0)]),
                                        _combine([(*a["pos"], 1.0), (*b["pos"], 1.0)]))
        conic.add_quadratic_upper_bound(prog, _combine(ysum + [(*off, -2.0)]),
                                        _combine([(*a["pos"], 1.0), (*b["pos"], -1.0)]))
        prog.add_cone(NONNEGATIVE, _combine(ysum + [(*off, -2.0)], -rsum2))
    layout.counts["pair_rows"] = geo.L * len(layout.pairs)
    return _finish(prog, layout, seed)


def build_sdp(instance, seed_positions, config=None):
    config = config or RelaxationConfig(variant=SDP)
    if config.variant != SDP:
        raise InvalidInstanceError(f"sdp builder called with variant {config.variant!r}")
    seed = check_positions(instance, seed_positions)
    prog, layout, geo = _start(instance, config)
    ids = [e.id for e in instance.entities]
    N, n, L = len(ids), instance.n, geo.L
    obstacle_ids = instance.obstacle_ids

    # Off-diagonal entries: variables unless both ends are fixed obstacles.
    off_idx, off_const = {}, {}
    for a, b in itertools.combinations(range(N), 2):
        i, j = ids[a], ids[b]
        if i in obstacle_ids and j in obstacle_ids and config.fix_obstacle_y:
            off_idx[a, b] = np.full(L, -1)
            off_const[a, b] = np.sum(geo.pos_const[i] * geo.pos_const[j], axis=1)
        else:
            off_idx[a, b] = prog.add_variables(L, f"Y{i},{j}")
            off_const[a, b] = np.zeros(L)
            if not (i in obstacle_ids and j in obstacle_ids):
                layout.y_off[(i, j)] = off_idx[a, b]

    d = N + n
    var = np.full((L, d, d), -1, dtype=np.int64)
    const = np.zeros((L, d, d))
    for a, eid in enumerate(ids):
        var[:, a, a], const[:, a, a] = geo.y_idx[eid], geo.y_const[eid]
        for k in range(n):
            var[:, N + k, a] = var[:, a, N + k] = geo.pos_idx[eid][:, k]
            const[:, N + k, a] = const[:, a, N + k] = geo.pos_const[eid][:, k]
    for (a, b), idx in off_idx.items():
        var[:, a, b] = var[:, b, a] = idx
        const[:, a, b] = const[:, b, a] = off_const[a, b]
    for k in range(n):
        const[:, N + k, N + k] = 1.0
    if L and N:
        # Column-wise vectorization of each per-time block.
        prog.add_cone(PSD, _entries(var.transpose(0, 2, 1).reshape(-1),
                                    const.transpose(0, 2, 1).reshape(-1)), d * d)

    index = {eid: a for a, eid in enumerate(ids)}
    if L and layout.pairs:
        ends_a, ends_b, rsum2 = geo.stacked(layout.pairs)
        keys = [tuple(sorted((index[i], index[j]))) for i, j in layout.pairs]
        off = (np.concatenate([off_idx[k] for k in keys]),
               np.concatenate([off_const[k] for k in keys]))
        prog.add_cone(NONNEGATIVE, _combine([(*ends_a["y"], 1.0), (*ends_b["y"], 1.0),
                                             (*off, -2.0)], -rsum2))
    layout.counts["pair_rows"] = L * len(layout.pairs)
    layout.counts["diag_rows"] = L * len(instance.robots)
    layout.counts["psd_block"] = d
    return _finish(prog, layout, seed)


BUILDERS = {SIMPLIFIED: build_penalized_parabolic, FULL: build_full_parabolic, SDP: build_sdp}


def build_relaxation(instance, seed_positions, config=None):
    config = config or RelaxationConfig()
    return BUILDERS[config.variant](instance, seed_positions, config)


def penalty_terms(layout, seed_positions):
    """Linear coefficients and constant of ``eta * sum(Y_ii - 2 seed^T G x_i)``."""
    instance, eta, lt = layout.instance, layout.config.eta, layout.lifted_times
    n = instance.n
    seed = check_positions(instance, seed_positions)
    coef = np.zeros(layout.base_objective.size)
    offset = 0.0
    for r in instance.robots:
        coef[layout.y_diag[r.id]] += eta
        coef[layout.x[r.id][lt, :n].reshape(-1)] += -2.0 * eta * seed[r.id][lt].reshape(-1)
    for o in instance.obstacles:
        if o.id in layout.y_diag:
            coef[layout.y_diag[o.id]] += eta
            offset -= 2.0 * eta * float(np.sum(o.states[lt, :n] ** 2))
    return coef, offset


def seed_constant(layout, seed_positions):
    """``eta * sum |G seed|^2``; adding it makes the penalty origin-independent.

    With it the penalty equals ``eta * sum(gap + |G x - seed|^2)`` where
    ``gap = Y_ii - |G x_i|^2``.
    """
    instance, lt, eta = layout.instance, layout.lifted_times, layout.config.eta
    seed = check_positions(instance, seed_positions)
    total = sum(float(np.sum(seed[r.id][lt] ** 2)) for r in instance.robots)
    for o in instance.obstacles:
        if o.id in layout.y_diag:
            total += float(np.sum(o.states[lt, : instance.n] ** 2))
    return eta * total


def reseed(prog, layout, seed_positions):
    """Replace the penalty part of the objective for a new seed."""
    coef, offset = penalty_terms(layout, seed_positions)
    prog.objective = layout.base_objective + coef
    prog.offset = layout.base_offset + offset + seed_constant(layout, seed_positions)
    return prog


# --- extraction and diagnostics --------------------------------------------------------


def extract_iterate(layout, result, instance=None):
    instance = instance or layout.instance
    if result.status != conic.OPTIMAL or result.primal is None:
        raise InvalidInstanceError(f"cannot extract an iterate from status {result.status!r}")
    z = np.asarray(result.primal, dtype=float)
    states = {rid: z[idx] for rid, idx in layout.x.items()}
    for o in instance.obstacles:
        states[o.id] = o.states.copy()
    controls = {rid: z[idx] for rid, idx in layout.u.items()}
    y_diag = {eid: z[idx] for eid, idx in layout.y_diag.items()}
    y_full = None
    if layout.config.variant in (FULL, SDP):
        y_full = {(i, j): z[idx] for (i, j), idx in layout.y_off.items()}
    return LiftedIterate(states, controls, y_diag, layout.lifted_times.copy(), y_full)


def pack(layout, states, controls, y_diag=None, y_off=None):
    """Primal vector holding the given values; epigraph auxiliaries set tight.

    Missing ``y_diag`` entries default to the exact lift ``|G x_i|^2`` and
    missing off-diagonal entries to ``x_i^T G^T G x_j``.
    """
    instance, lt, n = layout.instance, layout.lifted_times, layout.instance.n
    z = np.zeros(layout.counts["num_vars"])
    for rid, idx in layout.x.items():
        z[idx] = states[rid]
    for rid, idx in layout.u.items():
        z[idx] = controls[rid]
    pos = {e.id: np.asarray(states[e.id] if e.id in states else e.states)[lt, :n]
           for e in instance.entities}
    for eid, idx in layout.y_diag.items():
        given = None if y_diag is None else y_diag.get(eid)
        z[idx] = np.sum(pos[eid] ** 2, axis=1) if given is None else given
    for (i, j), idx in layout.y_off.items():
        given = None if y_off is None else y_off.get((i, j))
        z[idx] = np.sum(pos[i] * pos[j], axis=1) if given is None else given
    for kind, idx, src in layout.aux:
        if kind == "abs":
            z[idx] = np.abs(z[src])
        else:
            z[idx] = np.linalg.norm(z[src], axis=1)
    return z


def iterate_solution(iterate, instance):
    sol = Solution(states=dict(iterate.states), controls=dict(iterate.controls))
    sol.objective = evaluate_objective(instance, sol)
    return sol


def relaxation_gap(iterate, instance):
    n = instance.n
    gaps = {}
    for r in instance.robots:
        pos = iterate.states[r.id][iterate.lifted_times, :n]
        gaps[r.id] = np.asarray(iterate.y_diag[r.id]) - np.sum(pos**2, axis=1)
    flat = np.concatenate(list(gaps.values())) if gaps else np.zeros(0)
    max_gap = float(flat.max()) if flat.size else 0.0
    return GapReport(gaps=gaps, max_gap=max_gap, sum_gap=float(flat.sum()))


def penalized_objective(layout, iterate, seed_positions):
    """Objective of the penalized program at ``iterate`` for ``seed_positions``."""
    z = pack(layout, iterate.states, iterate.controls, iterate.y_diag, iterate.y_full)
    coef, offset = penalty_terms(layout, seed_positions)
    offset += seed_constant(layout, seed_positions)
    return float((layout.base_objective + coef) @ z + layout.base_offset + offset)
