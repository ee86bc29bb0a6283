"""
SVG figure of a simulated run: arena, gate walls, obstacles with their
motion paths, the goal path, and every drone trajectory.

Coordinates are in metres scaled by PX_PER_M, with y flipped so the arena
reads the usual way up.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from lxml import etree

from scene import ObstacleKind, Scenario, WALL_HALF_THICKNESS
from swarm_sim import Role, Trajectories

SVG_NS = "http://www.w3.org/2000/svg"
PX_PER_M = 100.0
MARGIN = 20.0
MAX_POINTS = 600

KIND_COLORS = {ObstacleKind.SOFT: "#e07a2f", ObstacleKind.HARD: "#4a5568"}
LEADER_COLOR = "#c53030"
FOLLOWER_COLORS = ["#2b6cb0", "#2f855a", "#6b46c1", "#b7791f"]
GOAL_COLOR = "#d69e2e"


class _Canvas:
    def __init__(self, width_m: float, height_m: float):
        self.height_m = height_m
        size = (2 * MARGIN + width_m * PX_PER_M, 2 * MARGIN + height_m * PX_PER_M)
        self.root = etree.Element(f"{{{SVG_NS}}}svg", nsmap={None: SVG_NS},
                                  width=f"{size[0]:.0f}", height=f"{size[1]:.0f}",
                                  viewBox=f"0 0 {size[0]:.0f} {size[1]:.0f}")

    def xy(self, p) -> tuple[float, float]:
        return MARGIN + float(p[0]) * PX_PER_M, MARGIN + (self.height_m - float(p[1])) * PX_PER_M

    def group(self, name: str) -> etree._Element:
        return etree.SubElement(self.root, f"{{{SVG_NS}}}g", id=name)

    def add(self, parent, tag: str, **attrs) -> etree._Element:
        return etree.SubElement(parent, f"{{{SVG_NS}}}{tag}",
                                {k.replace("_", "-"): str(v) for k, v in attrs.items()})

    def polyline(self, parent, points, **attrs) -> etree._Element:
        pts = " ".join("%.1f,%.1f" % self.xy(p) for p in points)
        return self.add(parent, "polyline", points=pts, fill="none", **attrs)

    def circle(self, parent, center, radius_m: float, **attrs) -> etree._Element:
        x, y = self.xy(center)
        return self.add(parent, "circle", cx=f"{x:.1f}", cy=f"{y:.1f}",
                        r=f"{radius_m * PX_PER_M:.1f}", **attrs)


def _thin(points: np.ndarray) -> np.ndarray:
    if len(points) <= MAX_POINTS:
        return points
    idx = np.linspace(0, len(points) - 1, MAX_POINTS).round().astype(int)
    return points[idx]


def build_svg(scenario: Scenario, traj: Trajectories) -> etree._Element:
    arena = scenario.arena
    canvas = _Canvas(arena.width, arena.height)

    frame = canvas.group("arena")
    canvas.polyline(frame, [(0, 0), (arena.width, 0), (arena.width, arena.height), (0, arena.height), (0, 0)],
                    stroke="#000000", stroke_width=1)

    walls = canvas.group("gate")
    for a, b in scenario.wall_segments():
        canvas.polyline(walls, [a, b], stroke="#000000",
                        stroke_width=f"{2 * WALL_HALF_THICKNESS * PX_PER_M:.1f}")

    obstacles = canvas.group("obstacles")
    for o in scenario.obstacles:
        color = KIND_COLORS[o.kind]
        if o.is_moving:
            canvas.polyline(obstacles, o.path()[1], stroke=color, stroke_width=1, stroke_dasharray="4 3")
        disc = canvas.circle(obstacles, o.pos, o.radius, fill=color, fill_opacity=0.6, stroke=color)
        canvas.add(disc, "title").text = f"obstacle {o.id} ({o.kind.value})"

    goal = canvas.group("goal")
    goal_points = [w.pos for w in scenario.goal]
    if len(goal_points) > 1:
        canvas.polyline(goal, goal_points, stroke=GOAL_COLOR, stroke_width=1.5, stroke_dasharray="6 3")
    canvas.circle(goal, goal_points[-1], 0.05, fill=GOAL_COLOR)

    drones = canvas.group("trajectories")
    for d in range(traj.n_drones):
        leader = traj.roles[d] is Role.LEADER
        color = LEADER_COLOR if leader else FOLLOWER_COLORS[(d - 1) % len(FOLLOWER_COLORS)]
        canvas.polyline(drones, _thin(traj.pos[:, d]), stroke=color, stroke_width=2 if leader else 1.2)
        canvas.circle(drones, traj.pos[0, d], 0.04, fill="none", stroke=color, stroke_width=1.5)
    return canvas.root


def write_svg(scenario: Scenario, traj: Trajectories, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tree = etree.ElementTree(build_svg(scenario, traj))
    tree.write(str(path), pretty_print=True, xml_declaration=True, encoding="utf-8")
