"""Deterministic SVG rendering of scenarios and trajectories.

Each panel is an 800x800 canvas.  Planar scenarios use one panel; spatial
ones get three orthographic projections (xy, xz, yz) side by side.
"""

from __future__ import annotations

import numpy as np

from .validation import InvalidInstanceError

PANEL = 800
MARGIN = 40.0
ARENA = (0.0, 1.0)
OBSTACLE_COLOR = "red"
START_COLOR = "blue"
GOAL_COLOR = "green"
PATH_COLOR = "black"
MARKER_PX = 4.0

PROJECTIONS = {1: [(0, None)], 2: [(0, 1)], 3: [(0, 1), (0, 2), (1, 2)]}


def _num(v):
    return f"{v:.3f}"


def _extent(instance, solution, axes):
    """Bounding box of the arena square and everything drawn on the given axes."""
    lo = np.array([ARENA[0], ARENA[0]])
    hi = np.array([ARENA[1], ARENA[1]])
    pts = []
    for robot in instance.robots:
        pts.append((robot.x_init, robot.radius))
        pts.append((robot.x_goal, robot.radius))
        if solution is not None and robot.id in solution.states:
            for x in np.asarray(solution.states[robot.id]):
                pts.append((x, robot.radius))
    for obs in instance.obstacles:
        for x in obs.states:
            pts.append((x, obs.radius))
    for x, r in pts:
        xy = _project(x, axes)
        lo = np.minimum(lo, xy - r)
        hi = np.maximum(hi, xy + r)
    return lo, hi


def _project(x, axes):
    a, b = axes
    return np.array([x[a], 0.0 if b is None else x[b]], dtype=float)


def viewport(lo, hi, panel=PANEL, margin=MARGIN):
    """Affine map from world coordinates to pixels (uniform scale, y pointing up)."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-12))
    scale = (panel - 2 * margin) / span

    def to_px(p, offset=0.0):
        return (offset + margin + (p[0] - lo[0]) * scale,
                panel - margin - (p[1] - lo[1]) * scale)

    return to_px, scale


def _panel(instance, solution, axes, offset):
    lo, hi = _extent(instance, solution, axes)
    to_px, scale = viewport(lo, hi)
    out = []
    x0, y0 = to_px((ARENA[0], ARENA[0]), offset)
    x1, y1 = to_px((ARENA[1], ARENA[1]), offset)
    out.append(f'<rect x="{_num(x0)}" y="{_num(y1)}" width="{_num(x1 - x0)}" '
               f'height="{_num(y0 - y1)}" fill="none" stroke="black" stroke-width="2"/>')
    for obs in instance.obstacles:
        cx, cy = to_px(_project(obs.states[0], axes), offset)
        out.append(f'<circle cx="{_num(cx)}" cy="{_num(cy)}" r="{_num(obs.radius * scale)}" '
                   f'fill="{OBSTACLE_COLOR}"/>')
    for robot in instance.robots:
        if solution is not None and robot.id in solution.states:
            path = np.asarray(solution.states[robot.id])
            pts = " ".join(f"{_num(px)},{_num(py)}"
                           for px, py in (to_px(_project(x, axes), offset) for x in path))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{PATH_COLOR}" '
                       f'stroke-width="1.5"/>')
        for state, color in ((robot.x_init, START_COLOR), (robot.x_goal, GOAL_COLOR)):
            cx, cy = to_px(_project(state, axes), offset)
            out.append(f'<circle cx="{_num(cx)}" cy="{_num(cy)}" r="{_num(MARKER_PX)}" '
                       f'fill="{color}"/>')
    return out


def render_svg(instance, solution=None):
    """SVG text for ``instance`` with optional trajectories; identical inputs give identical bytes."""
    if instance.n not in PROJECTIONS:
        raise InvalidInstanceError(f"cannot plot dimension {instance.n}")
    views = PROJECTIONS[instance.n]
    width = PANEL * len(views)
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL}" '
             f'viewBox="0 0 {width} {PANEL}">']
    for k, axes in enumerate(views):
        lines.append(f'<g id="panel{k}">')
        lines.extend(_panel(instance, solution, axes, k * PANEL))
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def save_svg(instance, path, solution=None):
    text = render_svg(instance, solution)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return text
