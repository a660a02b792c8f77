"""Problem data, linear dynamics, and the independent feasibility verifier.

Time indexing is one-based in the documentation and zero-based in arrays:
``states[i]`` has shape ``(T + 1, 2n)`` with row ``k`` holding time ``k + 1``,
and ``controls[i]`` has shape ``(T, m)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .validation import (
    InvalidInstanceError,
    check_instance,
    check_matrix,
    check_positive,
    check_solution,
    check_vector,
)

SCENARIO_VERSION = 1


@dataclass(frozen=True)
class DynamicsModel:
    A: np.ndarray
    B: np.ndarray
    n: int
    dt: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float).reshape(self.A.shape[0], -1))

    @property
    def m(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class RobotSpec:
    id: int
    dynamics: DynamicsModel
    radius: float
    u_max: float
    x_init: np.ndarray
    x_goal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_init", np.asarray(self.x_init, dtype=float))
        object.__setattr__(self, "x_goal", np.asarray(self.x_goal, dtype=float))


@dataclass(frozen=True)
class ObstacleSpec:
    id: int
    radius: float
    states: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", np.atleast_2d(np.asarray(self.states, dtype=float)))


@dataclass(frozen=True)
class ProblemInstance:
    robots: list
    obstacles: list
    T: int
    n: int
    p: int = 1
    q: int = 1
    dt: float = 0.1

    def __post_init__(self):
        check_instance(self)

    @property
    def G(self):
        return np.hstack([np.eye(self.n), np.zeros((self.n, self.n))])

    @property
    def robot_ids(self):
        return [r.id for r in self.robots]

    @property
    def obstacle_ids(self):
        return {o.id for o in self.obstacles}

    @property
    def entities(self):
        return list(self.robots) + list(self.obstacles)

    def robot(self, rid):
        for r in self.robots:
            if r.id == rid:
                return r
        raise KeyError(rid)


@dataclass
class Solution:
    states: dict
    controls: dict
    objective: float = 0.0


@dataclass(frozen=True)
class Tolerances:
    dynamics: float = 1e-6
    boundary: float = 1e-6
    control: float = 1e-6
    collision: float = 1e-4


@dataclass
class FeasibilityReport:
    dynamics_residual: float
    boundary_residual: float
    control_violation: float
    collision_violation: float
    feasible: bool
    tolerances: Tolerances = field(default_factory=Tolerances)

    def to_dict(self):
        return {
            "dynamics_residual": self.dynamics_residual,
            "boundary_residual": self.boundary_residual,
            "control_violation": self.control_violation,
            "collision_violation": self.collision_violation,
            "feasible": self.feasible,
        }


def build_double_integrator(n, dt):
    """Zero-order-hold double integrator with state ``[position, velocity]``."""
    if n not in (1, 2, 3):
        raise InvalidInstanceError(f"unsupported configuration dimension {n}; expected 1, 2 or 3")
    dt = check_positive(dt, "dt")
    eye = np.eye(n)
    A = np.block([[eye, dt * eye], [np.zeros((n, n)), eye]])
    B = np.vstack([0.5 * dt**2 * eye, dt * eye])
    return DynamicsModel(A=A, B=B, n=n, dt=dt)


def propagate(model, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.A.shape[0],):
        raise InvalidInstanceError(f"state has shape {x.shape}, expected ({model.A.shape[0]},)")
    if u.shape != (model.m,):
        raise InvalidInstanceError(f"control has shape {u.shape}, expected ({model.m},)")
    return model.A @ x + model.B @ u


def rollout(robot, controls):
    """States reached from ``robot.x_init`` under ``controls``; no constraint checks."""
    controls = np.asarray(controls, dtype=float)
    if controls.ndim != 2 or controls.shape[1] != robot.dynamics.m:
        raise InvalidInstanceError(
            f"controls must have shape (T, {robot.dynamics.m}), got {controls.shape}"
        )
    states = np.empty((controls.shape[0] + 1, robot.x_init.shape[0]))
    states[0] = robot.x_init
    for k, u in enumerate(controls):
        states[k + 1] = propagate(robot.dynamics, states[k], u)
    return states


def straight_line_seed(instance):
    """Positions linearly interpolated from start to goal, ``{id: (T+1, n)}``."""
    G = instance.G
    frac = np.arange(instance.T + 1)[:, None] / instance.T
    seed = {}
    for robot in instance.robots:
        start, goal = G @ robot.x_init, G @ robot.x_goal
        pos = start + frac * (goal - start)
        pos[-1] = goal
        seed[robot.id] = pos
    return seed


def control_norm(u, q):
    return np.linalg.norm(np.atleast_2d(u), ord=q, axis=1)


def evaluate_objective(instance, solution):
    total = 0.0
    for robot in instance.robots:
        if robot.id not in solution.controls:
            raise InvalidInstanceError(f"solution has no controls for robot {robot.id}")
        u = np.asarray(solution.controls[robot.id], dtype=float)
        if u.shape != (instance.T, robot.dynamics.m):
            raise InvalidInstanceError(f"controls[{robot.id}] has shape {u.shape}")
        total += float(np.sum(control_norm(u, instance.q)))
    return total


def positions_at(instance, solution):
    """Array ``(num_entities, T+1, n)`` of positions, robots first then obstacles."""
    n = instance.n
    rows = [np.asarray(solution.states[r.id])[:, :n] for r in instance.robots]
    rows += [o.states[:, :n] for o in instance.obstacles]
    if not rows:
        return np.zeros((0, instance.T + 1, n))
    return np.stack(rows)


def collision_violation(instance, positions):
    """Max over robot-involving pairs and all times of ``(r_i + r_j - distance)_+``.

    ``positions`` is either a solution-shaped array from :func:`positions_at`
    or a robot-position map (obstacles are taken from the instance).
    """
    if isinstance(positions, dict):
        pos = [np.asarray(positions[r.id])[:, : instance.n] for r in instance.robots]
        pos += [o.states[:, : instance.n] for o in instance.obstacles]
        positions = np.stack(pos) if pos else np.zeros((0, instance.T + 1, instance.n))
    radii = np.array([e.radius for e in instance.entities])
    n_rob = len(instance.robots)
    worst = 0.0
    for i in range(n_rob):
        others = slice(i + 1, len(radii))
        diff = positions[others] - positions[i][None]
        dist = np.linalg.norm(diff, axis=2)
        viol = radii[i] + radii[others][:, None] - dist
        if viol.size:
            worst = max(worst, float(viol.max()))
    return max(worst, 0.0)


def verify(instance, solution, tolerances=None):
    tol = tolerances or Tolerances()
    check_solution(instance, solution)
    dyn_res = bnd_res = ctl_viol = 0.0
    for robot in instance.robots:
        x = np.asarray(solution.states[robot.id], dtype=float)
        u = np.asarray(solution.controls[robot.id], dtype=float)
        A, B = robot.dynamics.A, robot.dynamics.B
        if instance.T:
            pred = x[:-1] @ A.T + u @ B.T
            dyn_res = max(dyn_res, float(np.abs(x[1:] - pred).max()))
        bnd_res = max(
            bnd_res,
            float(np.abs(x[0] - robot.x_init).max()),
            float(np.abs(x[-1] - robot.x_goal).max()),
        )
        if u.size:
            ctl_viol = max(ctl_viol, float((control_norm(u, instance.p) - robot.u_max).max()))
    ctl_viol = max(ctl_viol, 0.0)
    col_viol = collision_violation(instance, positions_at(instance, solution))
    feasible = (
        dyn_res <= tol.dynamics
        and bnd_res <= tol.boundary
        and ctl_viol <= tol.control
        and col_viol <= tol.collision
    )
    return FeasibilityReport(dyn_res, bnd_res, ctl_viol, col_viol, feasible, tol)


# --- file formats -----------------------------------------------------------


def _fmt(value):
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not np.isfinite(value):
            raise ValueError(f"cannot serialize non-finite value {value}")
        return f"{value:.16e}"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in value.items()) + "}"
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(payload):
    """JSON text with every real printed to 17 significant digits."""
    return _fmt(payload) + "\n"


def instance_to_dict(instance):
    robots = []
    for r in instance.robots:
        entry = {
            "id": r.id,
            "radius": float(r.radius),
            "u_max": float(r.u_max),
            "x_init": r.x_init,
            "x_goal": r.x_goal,
        }
        default = build_double_integrator(instance.n, instance.dt)
        if not (np.array_equal(r.dynamics.A, default.A) and np.array_equal(r.dynamics.B, default.B)):
            entry["A"] = r.dynamics.A
            entry["B"] = r.dynamics.B
        robots.append(entry)
    return {
        "version": SCENARIO_VERSION,
        "n": instance.n,
        "T": instance.T,
        "p": instance.p,
        "q": instance.q,
        "dt": float(instance.dt),
        "robots": robots,
        "obstacles": [
            {"id": o.id, "radius": float(o.radius), "states": o.states} for o in instance.obstacles
        ],
    }


def instance_from_dict(data):
    try:
        if data.get("version") != SCENARIO_VERSION:
            raise InvalidInstanceError(f"unsupported scenario version {data.get('version')!r}")
        n, T, dt = int(data["n"]), int(data["T"]), float(data["dt"])
        robots = []
        for entry in data["robots"]:
            if "A" in entry or "B" in entry:
                A = check_matrix(entry["A"], (2 * n, 2 * n), "A")
                B = np.asarray(entry["B"], dtype=float).reshape(2 * n, -1)
                dyn = DynamicsModel(A=A, B=B, n=n, dt=dt)
            else:
                dyn = build_double_integrator(n, dt)
            robots.append(
                RobotSpec(
                    id=int(entry["id"]),
                    dynamics=dyn,
                    radius=float(entry["radius"]),
                    u_max=float(entry["u_max"]),
                    x_init=check_vector(entry["x_init"], 2 * n, "x_init"),
                    x_goal=check_vector(entry["x_goal"], 2 * n, "x_goal"),
                )
            )
        obstacles = [
            ObstacleSpec(
                id=int(o["id"]),
                radius=float(o["radius"]),
                states=check_matrix(o["states"], (T + 1, 2 * n), f"obstacle {o['id']} states"),
            )
            for o in data.get("obstacles", [])
        ]
        return ProblemInstance(
            robots=robots, obstacles=obstacles, T=T, n=n,
            p=data.get("p", 1), q=data.get("q", 1), dt=dt,
        )
    except (KeyError, TypeError) as exc:
        raise InvalidInstanceError(f"malformed scenario: {exc!r}") from exc


def save_scenario(instance, path):
    Path(path).write_text(dumps(instance_to_dict(instance)), encoding="utf-8")


def load_scenario(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInstanceError(f"{path}: not valid JSON ({exc})") from exc
    return instance_from_dict(data)


def solution_to_dict(solution, report=None):
    out = {
        "objective": float(solution.objective),
        "states": {str(k): v for k, v in sorted(solution.states.items())},
        "controls": {str(k): v for k, v in sorted(solution.controls.items())},
    }
    if report is not None:
        out["report"] = report.to_dict()
    return out


def solution_from_dict(data, instance=None):
    try:
        states = {int(k): np.asarray(v, dtype=float) for k, v in data["states"].items()}
        controls = {}
        for k, v in data["controls"].items():
            arr = np.asarray(v, dtype=float)
            if arr.ndim == 1:
                arr = arr.reshape(-1, 0) if instance is None else arr.reshape(instance.T, -1)
            controls[int(k)] = arr
        sol = Solution(states=states, controls=controls, objective=float(data["objective"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInstanceError(f"malformed solution: {exc!r}") from exc
    if instance is not None:
        check_solution(instance, sol)
    return sol


def save_solution(solution, path, report=None):
    Path(path).write_text(dumps(solution_to_dict(solution, report)), encoding="utf-8")


def load_solution(path, instance=None):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInstanceError(f"{path}: not valid JSON ({exc})") from exc
    return solution_from_dict(data, instance)


def solution_with_obstacles(instance, states, controls):
    """Assemble a :class:`Solution` from robot arrays and copy obstacle states in."""
    states = dict(states)
    for o in instance.obstacles:
        states[o.id] = o.states.copy()
    sol = Solution(states=states, controls=dict(controls))
    sol.objective = evaluate_objective(instance, sol)
    return sol
