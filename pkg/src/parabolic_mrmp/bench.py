"""Scenario generators and the experiment harnesses built on them.

Randomness comes from numpy's ``PCG64`` bit generator seeded through
``SeedSequence``; trial ``k`` of a sweep with base seed ``s`` uses seed
``s + k`` so any single trial can be regenerated on its own.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ObstacleSpec,
    ProblemInstance,
    RobotSpec,
    Tolerances,
    build_double_integrator,
    straight_line_seed,
    verify,
)
from .relax import FULL, SDP, SIMPLIFIED
from .scp import ScpConfig, solve_scp
from .sequential import CONVERGED, SequentialConfig, solve_sequential
from .validation import InvalidInstanceError

RNG_ALGORITHM = "numpy.PCG64/SeedSequence v1"

DEFAULT_T = 30
DEFAULT_DT = 0.1
DEFAULT_U_MAX = 2.0


class GenerationError(RuntimeError):
    """Random placement or preset construction could not produce a valid instance."""


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & (2**64 - 1))))


@dataclass(frozen=True)
class RandomMapSpec:
    num_robots: int
    num_obstacles: int = 0
    rng_seed: int = 0
    arena: tuple = ((0.0, 1.0), (0.0, 1.0))
    entity_diameter: float = 0.1
    max_placement_attempts: int = 10000
    dimension: int = 2

    def bounds(self):
        if len(self.arena) != self.dimension:
            return np.array([[0.0, 1.0]] * self.dimension)
        return np.asarray(self.arena, dtype=float)


def _place(rng, count, lo, hi, radius, fixed, attempts):
    """Sequential rejection sampling; ``fixed`` are already-placed centers."""
    placed = list(fixed)
    out = []
    used = 0
    for _ in range(count):
        while True:
            if used >= attempts:
                raise GenerationError(
                    f"could not place {count} entities after {attempts} attempts"
                )
            used += 1
            cand = rng.uniform(lo, hi)
            if all(np.linalg.norm(cand - c) >= 2 * radius for c in placed):
                placed.append(cand)
                out.append(cand)
                break
    return out, used


def generate_random_instance(spec, dynamics=None, T=DEFAULT_T, u_max=DEFAULT_U_MAX, p=1, q=1,
                             dt=DEFAULT_DT):
    """Random starts, goals and static obstacles, all pairwise non-overlapping."""
    n = spec.dimension
    if n not in (2, 3):
        raise InvalidInstanceError(f"random maps support dimension 2 or 3, got {n}")
    dynamics = dynamics or build_double_integrator(n, dt)
    radius = spec.entity_diameter / 2.0
    bounds = spec.bounds()
    lo, hi = bounds[:, 0] + radius, bounds[:, 1] - radius
    rng = make_rng(spec.rng_seed)
    budget = spec.max_placement_attempts
    obstacles, used = _place(rng, spec.num_obstacles, lo, hi, radius, [], budget)
    starts, used2 = _place(rng, spec.num_robots, lo, hi, radius, obstacles, budget - used)
    goals, _ = _place(rng, spec.num_robots, lo, hi, radius, obstacles, budget - used - used2)
    zeros = np.zeros(n)
    robots = [
        RobotSpec(id=k + 1, dynamics=dynamics, radius=radius, u_max=u_max,
                  x_init=np.concatenate([s, zeros]), x_goal=np.concatenate([g, zeros]))
        for k, (s, g) in enumerate(zip(starts, goals))
    ]
    obs = [
        ObstacleSpec(id=spec.num_robots + k + 1, radius=radius,
                     states=np.tile(np.concatenate([c, zeros]), (T + 1, 1)))
        for k, c in enumerate(obstacles)
    ]
    return ProblemInstance(robots=robots, obstacles=obs, T=T, n=n, p=p, q=q, dt=dynamics.dt)


# -- structured presets ------------------------------------------------------

PRESETS = ("bottleneck", "maze", "swap_circle")


def _robot(rid, dynamics, radius, u_max, start, goal):
    zeros = np.zeros(len(start))
    return RobotSpec(id=rid, dynamics=dynamics, radius=radius, u_max=u_max,
                     x_init=np.concatenate([start, zeros]),
                     x_goal=np.concatenate([goal, zeros]))


def _static(oid, radius, center, T):
    center = np.asarray(center, dtype=float)
    return ObstacleSpec(id=oid, radius=radius,
                        states=np.tile(np.concatenate([center, np.zeros_like(center)]), (T + 1, 1)))


WALL_PITCH = 1.0 + 1e-6  # keeps touching wall obstacles clear of round-off overlap


def _column(x, y_lo, y_hi, diameter):
    """Centers of (almost) touching obstacles filling ``[y_lo, y_hi]`` at abscissa ``x``."""
    pitch = diameter * WALL_PITCH
    count = int(np.floor((y_hi - y_lo - diameter) / pitch + 1e-9)) + 1
    if y_hi - y_lo < diameter:
        return []
    return [(x, y_lo + diameter / 2.0 + pitch * k) for k in range(count)]


def swap_circle(k=4, radius=0.4, center=(0.5, 0.5), phase=0.0, robot_diameter=0.1,
                T=DEFAULT_T, dt=DEFAULT_DT, u_max=DEFAULT_U_MAX, p=1, q=1):
    """``k`` robots evenly spaced on a circle, each heading to its antipode."""
    if k < 1:
        raise GenerationError("swap_circle needs at least one robot")
    r = robot_diameter / 2.0
    if k > 1 and 2 * radius * np.sin(np.pi / k) < robot_diameter:
        raise GenerationError(f"{k} robots of diameter {robot_diameter} do not fit on radius {radius}")
    dyn = build_double_integrator(2, dt)
    c = np.asarray(center, dtype=float)
    robots = []
    for i in range(k):
        th = phase + 2 * np.pi * i / k
        offset = radius * np.array([np.cos(th), np.sin(th)])
        robots.append(_robot(i + 1, dyn, r, u_max, c + offset, c - offset))
    return ProblemInstance(robots, [], T=T, n=2, p=p, q=q, dt=dt)


def bottleneck(num_robots=3, gap=0.25, wall_x=0.5, robot_diameter=0.1, obstacle_diameter=0.1,
               T=DEFAULT_T, dt=DEFAULT_DT, u_max=DEFAULT_U_MAX, p=1, q=1):
    """A wall of obstacles across the arena with one opening of width ``gap`` in the middle.

    Robots start on the left and finish on the right at the same heights, so
    their straight-line seeds run into the wall away from the opening.
    """
    if gap < robot_diameter:
        raise GenerationError(f"gap {gap} is narrower than a robot ({robot_diameter})")
    ro = obstacle_diameter / 2.0
    lower = _column(wall_x, 0.0, 0.5 - gap / 2.0, obstacle_diameter)
    upper = _column(wall_x, 0.5 + gap / 2.0, 1.0, obstacle_diameter)
    # push the upper segment flush against the opening
    upper = [(x, y - (upper[0][1] - ro - (0.5 + gap / 2.0))) for x, y in upper] if upper else []
    lower = [(x, y + ((0.5 - gap / 2.0) - lower[-1][1] - ro)) for x, y in lower] if lower else []
    centers = lower + upper
    heights = np.linspace(0.1, 0.9, num_robots + 2)[1:-1] if num_robots > 1 else np.array([0.2])
    dyn = build_double_integrator(2, dt)
    r = robot_diameter / 2.0
    robots = [_robot(i + 1, dyn, r, u_max, np.array([0.1, y]), np.array([0.9, y]))
              for i, y in enumerate(heights)]
    obstacles = [_static(num_robots + j + 1, ro, c, T) for j, c in enumerate(centers)]
    return ProblemInstance(robots, obstacles, T=T, n=2, p=p, q=q, dt=dt)


def maze(num_robots=2, clearance=0.15, robot_diameter=0.1, obstacle_diameter=0.1,
         T=DEFAULT_T, dt=DEFAULT_DT, u_max=DEFAULT_U_MAX, p=1, q=1):
    """Two staggered obstacle walls forming an S-shaped corridor of width ``clearance``.

    The first wall leaves an opening at the top of the arena and the second
    at the bottom; robots travel from the left strip to the right strip.
    """
    if clearance < robot_diameter:
        raise GenerationError(
            f"maze clearance {clearance} is below the robot diameter {robot_diameter}: "
            "no feasible corridor"
        )
    ro = obstacle_diameter / 2.0
    centers = _column(1.0 / 3.0, 0.0, 1.0 - clearance, obstacle_diameter)
    centers += _column(2.0 / 3.0, clearance, 1.0, obstacle_diameter)
    if not centers:
        raise GenerationError("maze clearance leaves no room for walls")
    dyn = build_double_integrator(2, dt)
    r = robot_diameter / 2.0
    heights = np.linspace(0.1, 0.9, num_robots + 2)[1:-1]
    robots = [_robot(i + 1, dyn, r, u_max, np.array([0.1, y]), np.array([0.9, y]))
              for i, y in enumerate(heights)]
    obstacles = [_static(num_robots + j + 1, ro, c, T) for j, c in enumerate(centers)]
    return ProblemInstance(robots, obstacles, T=T, n=2, p=p, q=q, dt=dt)


_PRESET_BUILDERS = {"bottleneck": bottleneck, "maze": maze, "swap_circle": swap_circle}


def generate_preset(name, **params):
    try:
        builder = _PRESET_BUILDERS[name]
    except KeyError:
        raise GenerationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    try:
        return builder(**params)
    except InvalidInstanceError as exc:
        raise GenerationError(f"{name}: {exc}") from exc


# -- harnesses -----------------------------------------------------------------

METHODS = (SIMPLIFIED, FULL, SDP, "scp")
METHOD_ALIASES = {"parabolic": SIMPLIFIED, "parabolic-full": FULL, "parabolic_full": FULL,
                  "parabolic_simplified": SIMPLIFIED, "sdp": SDP, "scp": "scp"}

SUCCESS_COLUMNS = ("obstacles", "method", "trials", "successes", "success_rate",
                   "mean_objective", "mean_time")
SCALING_COLUMNS = ("robots", "dimension", "variant", "mean_subproblem_time", "mean_total_time",
                   "converged_fraction")
TIMING_COLUMNS = frozenset({"mean_time", "mean_subproblem_time", "mean_total_time"})
REDACTED = "redacted"


def canonical_method(name):
    try:
        return METHOD_ALIASES[name]
    except KeyError:
        raise InvalidInstanceError(f"unknown method {name!r}; choose from {', '.join(METHODS)}") from None


def run_method(instance, method, seed=None, eta=50.0, rel_obj_tol=1e-4, max_iters=200,
               tolerances=None, backend=None):
    tolerances = tolerances or Tolerances()
    method = canonical_method(method)
    if method == "scp":
        cfg = ScpConfig(rel_obj_tol=rel_obj_tol, max_iters=max_iters, tolerances=tolerances)
        return solve_scp(instance, seed, cfg, backend)
    cfg = SequentialConfig(eta=eta, rel_obj_tol=rel_obj_tol, max_iters=max_iters, variant=method,
                           tolerances=tolerances)
    return solve_sequential(instance, seed, cfg, backend)


@dataclass
class TrialRecord:
    rng_seed: int
    method: str
    status: str
    feasible: bool
    objective: float
    iterations: int
    total_time: float
    obstacles: int = 0
    robots: int = 0
    dimension: int = 2
    max_gap: float = float("nan")

    @property
    def mean_subproblem_time(self):
        return self.total_time / self.iterations if self.iterations else float("nan")


def _record(report, instance, method, rng_seed, tolerances):
    # success is judged by the verifier alone, never by the solver's own flag
    feasible = report.final is not None and verify(instance, report.final, tolerances).feasible
    objective = report.final.objective if report.final is not None else float("nan")
    return TrialRecord(rng_seed=rng_seed, method=method, status=report.termination,
                       feasible=bool(feasible), objective=float(objective),
                       iterations=report.num_iterations, total_time=report.total_time,
                       obstacles=len(instance.obstacles), robots=len(instance.robots),
                       dimension=instance.n,
                       max_gap=report.iterations[-1].max_gap if report.iterations else float("nan"))


def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _csv(columns, rows, timing=True):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([REDACTED if (not timing and c in TIMING_COLUMNS) else _fmt(row[c])
                         for c in columns])
    return buf.getvalue()


@dataclass
class ExperimentResult:
    """Per-trial records plus aggregate tables; rows are emitted in sorted key order."""

    kind: str
    records: list = field(default_factory=list)
    generation_failures: list = field(default_factory=list)
    rng_algorithm: str = RNG_ALGORITHM

    def _groups(self, key):
        groups = {}
        for rec in sorted(self.records, key=lambda r: (key(r), r.rng_seed)):
            groups.setdefault(key(rec), []).append(rec)
        return groups

    def success_rows(self):
        rows = []
        for (obstacles, method), recs in self._groups(lambda r: (r.obstacles, r.method)).items():
            # objectives are compared only over trials every method solved
            mutual = self._mutual_seeds(obstacles)
            objs = [r.objective for r in recs if r.rng_seed in mutual]
            successes = sum(r.feasible for r in recs)
            rows.append({
                "obstacles": obstacles, "method": method, "trials": len(recs),
                "successes": successes, "success_rate": successes / len(recs),
                "mean_objective": float(np.mean(objs)) if objs else float("nan"),
                "mean_time": float(np.mean([r.total_time for r in recs])),
            })
        return rows

    def _mutual_seeds(self, obstacles):
        per_seed = {}
        for r in self.records:
            if r.obstacles == obstacles:
                per_seed.setdefault(r.rng_seed, []).append(r.feasible)
        return {s for s, flags in per_seed.items() if all(flags)}

    def success_rate(self, method, obstacles=None):
        recs = [r for r in self.records if r.method == canonical_method(method)
                and (obstacles is None or r.obstacles == obstacles)]
        return sum(r.feasible for r in recs) / len(recs) if recs else float("nan")

    def scaling_rows(self):
        rows = []
        key = lambda r: (r.robots, r.dimension, r.method)  # noqa: E731
        for (robots, dim, method), recs in self._groups(key).items():
            solved = [r for r in recs if r.iterations]
            rows.append({
                "robots": robots, "dimension": dim, "variant": method,
                "mean_subproblem_time": float(np.mean([r.mean_subproblem_time for r in solved]))
                if solved else float("nan"),
                "mean_total_time": float(np.mean([r.total_time for r in recs])),
                "converged_fraction": sum(r.status == CONVERGED for r in recs) / len(recs),
            })
        return rows

    def rows(self):
        return self.success_rows() if self.kind == "success_rate" else self.scaling_rows()

    def to_csv(self, timing=True):
        """CSV table; ``timing=False`` replaces wall-clock columns so output is reproducible."""
        columns = SUCCESS_COLUMNS if self.kind == "success_rate" else SCALING_COLUMNS
        return _csv(columns, self.rows(), timing)

    def records_csv(self, timing=True):
        columns = ("rng_seed", "obstacles", "robots", "dimension", "method", "status",
                   "feasible", "objective", "iterations", "max_gap", "total_time")
        order = lambda r: (r.obstacles, r.robots, r.method, r.rng_seed)  # noqa: E731
        rows = [dict(r.__dict__) for r in sorted(self.records, key=order)]
        if not timing:
            for row in rows:
                row["total_time"] = REDACTED
        return _csv(columns, rows)


def run_success_rate(methods, obstacle_counts, trials=20, base_rng_seed=0, num_robots=5,
                     T=DEFAULT_T, dt=DEFAULT_DT, u_max=DEFAULT_U_MAX, eta=50.0,
                     rel_obj_tol=1e-4, max_iters=200, tolerances=None, backend=None,
                     progress=None):
    """Success rate of each method over a sweep of obstacle counts.

    Trial ``k`` uses rng seed ``base_rng_seed + k`` for every density, and
    all methods start from the same straight-line seed.
    """
    methods = [canonical_method(m) for m in methods]
    tolerances = tolerances or Tolerances()
    result = ExperimentResult("success_rate")
    for count, k in itertools.product(obstacle_counts, range(trials)):
        seed = base_rng_seed + k
        try:
            instance = generate_random_instance(
                RandomMapSpec(num_robots=num_robots, num_obstacles=count, rng_seed=seed),
                T=T, u_max=u_max, dt=dt)
        except GenerationError as exc:
            result.generation_failures.append((count, seed, str(exc)))
            continue
        start = straight_line_seed(instance)
        for method in methods:
            report = run_method(instance, method, start, eta, rel_obj_tol, max_iters,
                                tolerances, backend)
            rec = _record(report, instance, method, seed, tolerances)
            result.records.append(rec)
            if progress is not None:
                progress(rec)
    return result


def run_scaling(variants, robot_counts, dimension=2, trials=3, base_rng_seed=0,
                T=DEFAULT_T, dt=DEFAULT_DT, u_max=DEFAULT_U_MAX, eta=50.0, rel_obj_tol=1e-4,
                max_iters=200, tolerances=None, backend=None, progress=None):
    """Solve time of each relaxation variant as the robot count grows (no obstacles)."""
    variants = [canonical_method(v) for v in variants]
    tolerances = tolerances or Tolerances()
    result = ExperimentResult("scaling")
    for count, k in itertools.product(robot_counts, range(trials)):
        seed = base_rng_seed + k
        try:
            instance = generate_random_instance(
                RandomMapSpec(num_robots=count, num_obstacles=0, rng_seed=seed,
                              dimension=dimension), T=T, u_max=u_max, dt=dt)
        except GenerationError as exc:
            result.generation_failures.append((count, seed, str(exc)))
            continue
        start = straight_line_seed(instance)
        for variant in variants:
            report = run_method(instance, variant, start, eta, rel_obj_tol, max_iters,
                                tolerances, backend)
            rec = _record(report, instance, variant, seed, tolerances)
            result.records.append(rec)
            if progress is not None:
                progress(rec)
    return result


def adversarial_seed(instance, point=None, via_step=None):
    """Seed whose every robot path runs start -> ``point`` -> goal, meeting ``point`` at one step.

    With ``point=None`` this is the straight-line seed.
    """
    base = straight_line_seed(instance)
    if point is None:
        return base
    point = np.asarray(point, dtype=float)
    T = instance.T
    mid = T // 2 if via_step is None else int(via_step)
    if not 0 < mid < T:
        raise InvalidInstanceError(f"via_step must lie strictly inside the horizon, got {mid}")
    out = {}
    for r in instance.robots:
        a, b = base[r.id][0], base[r.id][-1]
        first = a + np.outer(np.arange(mid + 1) / mid, point - a)
        second = point + np.outer(np.arange(1, T - mid + 1) / (T - mid), b - point)
        path = np.vstack([first, second])
        path[-1] = b
        out[r.id] = path
    return out


def run_bad_seed_recovery(instance, point=(0.1, 0.1), config=None, backend=None, via_step=None):
    """Solve from a seed that routes every robot through ``point`` at the same step."""
    seed = adversarial_seed(instance, point, via_step)
    return solve_sequential(instance, seed, config or SequentialConfig(), backend)
