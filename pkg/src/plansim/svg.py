"""Deterministic SVG rendering of one episode on the scenario map.

Element order is fixed (lanes, goal, histories, executed paths, markers),
so identical inputs produce identical bytes.
"""
from __future__ import annotations

from .planner import EpisodeLog, EpisodeStatus
from .scene import Scenario

_MARGIN = 10.0
_LANE_STYLE = 'stroke="#bbbbbb" stroke-width="0.3" fill="none"'
_HISTORY_STYLE = 'stroke="#9467bd" stroke-width="0.25" stroke-dasharray="1,0.7" fill="none"'
_EGO_STYLE = 'stroke="#d62728" stroke-width="0.4" fill="none"'
_AGENT_STYLE = 'stroke="#e377c2" stroke-width="0.3" fill="none"'
_GOAL_STYLE = 'stroke="#2ca02c" stroke-width="0.3" fill="none"'


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _polyline(points, style: str) -> str:
    coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    return f'<polyline points="{coords}" {style} />'


def render_trajectory_svg(scenario: Scenario, log: EpisodeLog) -> str:
    xs: list[float] = []
    ys: list[float] = []
    for lane in scenario.lanes:
        xs.extend(p[0] for p in lane.points)
        ys.extend(p[1] for p in lane.points)
    xs.append(scenario.goal.x)
    ys.append(scenario.goal.y)
    for track in scenario.tracks:
        xs.extend(s.x for s in track.states)
        ys.extend(s.y for s in track.states)

    x0, x1 = min(xs) - _MARGIN, max(xs) + _MARGIN
    y0, y1 = min(ys) - _MARGIN, max(ys) + _MARGIN

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_fmt(x0)} {_fmt(-y1)} '
        f'{_fmt(x1 - x0)} {_fmt(y1 - y0)}">',
        # Flip the y axis so +y points up in the drawing.
        '<g transform="scale(1,-1)">',
        f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(x1 - x0)}" '
        f'height="{_fmt(y1 - y0)}" fill="#ffffff" />',
    ]

    for lane in sorted(scenario.lanes, key=lambda l: l.lane_id):
        parts.append(_polyline(lane.points, _LANE_STYLE))

    parts.append(
        f'<circle cx="{_fmt(scenario.goal.x)}" cy="{_fmt(scenario.goal.y)}" '
        f'r="{_fmt(scenario.goal.radius)}" {_GOAL_STYLE} />'
    )

    obs = scenario.observation_horizon
    for track in sorted(scenario.tracks, key=lambda t: t.agent_id):
        history = [(s.x, s.y) for s in track.states[:obs]]
        if len(history) >= 2:
            parts.append(_polyline(history, _HISTORY_STYLE))

    ego_path = [(s.x, s.y) for s in log.ego_path()]
    if len(ego_path) >= 2:
        parts.append(_polyline(ego_path, _EGO_STYLE))

    agent_paths: dict[str, list[tuple[float, float]]] = {}
    for rec in log.records:
        for aid, seq in rec.agent_states.items():
            agent_paths.setdefault(aid, []).extend((s.x, s.y) for s in seq)
    for aid in sorted(agent_paths):
        if len(agent_paths[aid]) >= 2:
            parts.append(_polyline(agent_paths[aid], _AGENT_STYLE))

    if log.status is EpisodeStatus.COLLISION and ego_path:
        cx, cy = ego_path[-1]
        r = 1.5
        style = 'stroke="#ff0000" stroke-width="0.5"'
        parts.append(
            f'<line x1="{_fmt(cx - r)}" y1="{_fmt(cy - r)}" x2="{_fmt(cx + r)}" '
            f'y2="{_fmt(cy + r)}" {style} />'
        )
        parts.append(
            f'<line x1="{_fmt(cx - r)}" y1="{_fmt(cy + r)}" x2="{_fmt(cx + r)}" '
            f'y2="{_fmt(cy - r)}" {style} />'
        )

    parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
