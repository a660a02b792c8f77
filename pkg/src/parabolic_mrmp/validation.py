"""Input validation helpers shared by the planners and file loaders.

Every helper raises :class:`InvalidInstanceError` (a ``ValueError``) with a
diagnostic message and returns the validated, converted value otherwise.
"""

from __future__ import annotations

import itertools

import numpy as np


class InvalidInstanceError(ValueError):
    """Raised when a problem instance, seed or solution is malformed."""


def check_vector(value, size=None, name="vector"):
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 1:
        raise InvalidInstanceError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise InvalidInstanceError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInstanceError(f"{name} contains non-finite entries")
    return arr


def check_matrix(value, shape=None, name="matrix"):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1 and shape is not None and shape[1] == 0:
        arr = arr.reshape(shape)
    if arr.ndim != 2:
        raise InvalidInstanceError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise InvalidInstanceError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInstanceError(f"{name} contains non-finite entries")
    return arr


def check_positive(value, name="value"):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise InvalidInstanceError(f"{name} must be positive and finite, got {value}")
    return value


def check_norm(value, name="norm"):
    if value not in (1, 2):
        raise InvalidInstanceError(f"{name} must be 1 or 2, got {value!r}")
    return int(value)


def check_instance(instance):
    """Structural and geometric checks run whenever an instance is built.

    Besides shapes, this rejects obstacle pairs that overlap at any time and
    endpoint configurations (starts at t=1, goals at t=T+1) that already
    collide, since no trajectory could repair either.
    """
    n, T = instance.n, instance.T
    if n not in (1, 2, 3):
        raise InvalidInstanceError(f"configuration dimension must be 1, 2 or 3, got {n}")
    if T < 1:
        raise InvalidInstanceError(f"horizon must be at least 1, got {T}")
    check_norm(instance.p, "p")
    check_norm(instance.q, "q")

    ids = [e.id for e in instance.robots] + [e.id for e in instance.obstacles]
    if len(set(ids)) != len(ids):
        raise InvalidInstanceError(f"entity ids must be unique, got {ids}")

    for robot in instance.robots:
        dyn = robot.dynamics
        if dyn.n != n:
            raise InvalidInstanceError(f"robot {robot.id}: dynamics dimension {dyn.n} != {n}")
        check_matrix(dyn.A, (2 * n, 2 * n), f"robot {robot.id} A")
        check_matrix(dyn.B, (2 * n, dyn.m), f"robot {robot.id} B")
        check_positive(robot.radius, f"robot {robot.id} radius")
        check_positive(robot.u_max, f"robot {robot.id} u_max")
        check_vector(robot.x_init, 2 * n, f"robot {robot.id} x_init")
        check_vector(robot.x_goal, 2 * n, f"robot {robot.id} x_goal")

    for obs in instance.obstacles:
        check_positive(obs.radius, f"obstacle {obs.id} radius")
        check_matrix(obs.states, (T + 1, 2 * n), f"obstacle {obs.id} states")

    for a, b in itertools.combinations(instance.obstacles, 2):
        dist = np.linalg.norm(a.states[:, :n] - b.states[:, :n], axis=1)
        bad = np.nonzero(dist < a.radius + b.radius)[0]
        if bad.size:
            raise InvalidInstanceError(
                f"obstacles {a.id} and {b.id} overlap at t={bad[0] + 1} "
                f"(distance {dist[bad[0]]:.6g} < {a.radius + b.radius:.6g})"
            )

    for t, attr in ((0, "x_init"), (T, "x_goal")):
        points = [(r.id, r.radius, getattr(r, attr)[:n]) for r in instance.robots]
        points += [(o.id, o.radius, o.states[t, :n]) for o in instance.obstacles]
        for (ia, ra, pa), (ib, rb, pb) in itertools.combinations(points, 2):
            if ia in instance.obstacle_ids and ib in instance.obstacle_ids:
                continue
            gap = np.linalg.norm(pa - pb) - (ra + rb)
            if gap < -1e-12:
                raise InvalidInstanceError(
                    f"entities {ia} and {ib} overlap at t={t + 1} by {-gap:.6g}"
                )
    return instance


def check_positions(instance, positions, name="seed"):
    """Validate a per-robot position map ``{id: (T+1, n) array}``."""
    if positions is None:
        raise InvalidInstanceError(f"{name} is missing")
    out = {}
    for robot in instance.robots:
        if robot.id not in positions:
            raise InvalidInstanceError(f"{name} has no entry for robot {robot.id}")
        arr = np.asarray(positions[robot.id], dtype=float)
        if arr.ndim == 2 and arr.shape[1] == 2 * instance.n:
            arr = arr[:, : instance.n]
        out[robot.id] = check_matrix(arr, (instance.T + 1, instance.n), f"{name}[{robot.id}]")
    return out


def check_solution(instance, solution):
    """Shape checks for a solution against its instance."""
    T, n = instance.T, instance.n
    known = {e.id for e in instance.entities}
    extra = sorted(set(solution.states) - known) + sorted(set(solution.controls) - known)
    if extra:
        raise InvalidInstanceError(f"solution has entities {extra} that the instance does not")
    for robot in instance.robots:
        if robot.id not in solution.states or robot.id not in solution.controls:
            raise InvalidInstanceError(f"solution is missing robot {robot.id}")
        check_matrix(solution.states[robot.id], (T + 1, 2 * n), f"states[{robot.id}]")
        check_matrix(solution.controls[robot.id], (T, robot.dynamics.m), f"controls[{robot.id}]")
    return solution
