"""Core scene types: agents, lanes, routes, and scenario file I/O.

Everything here is immutable after construction so scenarios can be shared
freely across planner workers. The world runs on a single 10 Hz clock
(``DT`` = 0.1 s); all horizons are integer step counts.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ScenarioFormatError, ScenarioValidationError

# Simulation timestep in seconds (10 Hz). Single global clock.
DT = 0.1

DEFAULT_FOOTPRINT = (4.8, 2.0)  # typical sedan, length x width [m]
DEFAULT_GOAL_RADIUS = 2.0  # arrival tolerance [m]
DEFAULT_OBSERVATION_HORIZON = 50  # steps (5 s at 10 Hz)
DEFAULT_PLANNING_HORIZON = 60  # steps (6 s at 10 Hz)

SCHEMA_VERSION = 1


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class AgentState:
    """Pose and velocity of one agent at one timestep."""

    x: float
    y: float
    vx: float
    vy: float
    heading: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "vx", "vy", "heading"):
            if not math.isfinite(getattr(self, name)):
                raise ScenarioValidationError(f"AgentState.{name} is not finite")
        if not (-math.pi <= self.heading < math.pi):
            raise ScenarioValidationError(
                f"AgentState.heading={self.heading} outside [-pi, pi)"
            )

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class AgentTrack:
    """Time-ordered state sequence for one agent at DT spacing.

    States up to the scenario observation horizon are history; anything
    beyond is a recorded future (used for playback prediction and as the
    planning-error reference).
    """

    agent_id: str
    states: tuple[AgentState, ...]
    footprint: tuple[float, float] = DEFAULT_FOOTPRINT

    def __post_init__(self) -> None:
        if not self.states:
            raise ScenarioValidationError(f"track '{self.agent_id}': states is empty")
        length, width = self.footprint
        if length <= 0 or width <= 0:
            raise ScenarioValidationError(
                f"track '{self.agent_id}': footprint dimensions must be > 0"
            )


@dataclass(frozen=True)
class LaneCenterline:
    """One lane's centerline polyline with routing successors."""

    lane_id: str
    points: tuple[tuple[float, float], ...]
    successors: tuple[str, ...] = ()
    speed_limit: float = 15.0

    def __post_init__(self) -> None:
        if len(self.points) < 2:
            raise ScenarioValidationError(
                f"lane '{self.lane_id}': needs at least 2 points"
            )
        for i in range(1, len(self.points)):
            ax, ay = self.points[i - 1]
            bx, by = self.points[i]
            if ax == bx and ay == by:
                raise ScenarioValidationError(
                    f"lane '{self.lane_id}': points[{i - 1}] and points[{i}] coincide"
                )

    @cached_property
    def points_array(self) -> np.ndarray:
        arr = np.asarray(self.points, dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def arc_lengths(self) -> np.ndarray:
        """Cumulative arc length at each point, starting at 0."""
        pts = self.points_array
        seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
        s = np.concatenate(([0.0], np.cumsum(seg)))
        s.setflags(write=False)
        return s

    @property
    def length(self) -> float:
        return float(self.arc_lengths[-1])


@dataclass(frozen=True)
class Goal:
    x: float
    y: float
    radius: float = DEFAULT_GOAL_RADIUS

    def contains(self, x: float, y: float) -> bool:
        return math.hypot(x - self.x, y - self.y) <= self.radius


@dataclass(frozen=True)
class EgoControlSample:
    """Ego control at one step: longitudinal acceleration and steer angle."""

    t: int
    accel: float
    steer: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.accel) and math.isfinite(self.steer)):
            raise ScenarioValidationError("EgoControlSample values must be finite")


@dataclass(frozen=True)
class Scenario:
    """The planner's input world: map, tracks, route, and goal.

    tracks[0] is always the ego track. Immutable; safe to share read-only
    across concurrent workers.
    """

    lanes: tuple[LaneCenterline, ...]
    tracks: tuple[AgentTrack, ...]
    ego_route: tuple[str, ...]
    goal: Goal
    observation_horizon: int = DEFAULT_OBSERVATION_HORIZON
    planning_horizon: int = DEFAULT_PLANNING_HORIZON

    def __post_init__(self) -> None:
        if not self.tracks:
            raise ScenarioValidationError("tracks: no tracks present")
        if not self.ego_route:
            raise ScenarioValidationError("ego_route: empty")
        lane_ids = {lane.lane_id for lane in self.lanes}
        if len(lane_ids) != len(self.lanes):
            raise ScenarioValidationError("lanes: duplicate lane_id")
        for i, lane_id in enumerate(self.ego_route):
            if lane_id not in lane_ids:
                raise ScenarioValidationError(
                    f"ego_route[{i}]='{lane_id}' references unknown lane_id"
                )
        by_id = {lane.lane_id: lane for lane in self.lanes}
        for i in range(1, len(self.ego_route)):
            prev, nxt = self.ego_route[i - 1], self.ego_route[i]
            if nxt not in by_id[prev].successors:
                raise ScenarioValidationError(
                    f"ego_route[{i}]='{nxt}' is not a successor of '{prev}'"
                )
        track_ids = {t.agent_id for t in self.tracks}
        if len(track_ids) != len(self.tracks):
            raise ScenarioValidationError("tracks: duplicate agent_id")
        if self.observation_horizon < 1:
            raise ScenarioValidationError("observation_horizon must be >= 1")
        if self.planning_horizon < 1:
            raise ScenarioValidationError("planning_horizon must be >= 1")
        for track in self.tracks:
            if len(track.states) < self.observation_horizon:
                raise ScenarioValidationError(
                    f"track '{track.agent_id}': {len(track.states)} states do not "
                    f"cover the {self.observation_horizon}-step observation window"
                )

    @property
    def ego_track(self) -> AgentTrack:
        return self.tracks[0]

    @cached_property
    def lane_by_id(self) -> dict[str, LaneCenterline]:
        return {lane.lane_id: lane for lane in self.lanes}

    def track(self, agent_id: str) -> AgentTrack:
        for t in self.tracks:
            if t.agent_id == agent_id:
                return t
        raise KeyError(agent_id)

    def initial_states(self) -> dict[str, AgentState]:
        """Joint world state at the end of the observation window."""
        idx = self.observation_horizon - 1
        return {t.agent_id: t.states[idx] for t in self.tracks}


# ---------------------------------------------------------------------------
# Scenario JSON I/O (schema version 1)
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "schema",
    "lanes",
    "tracks",
    "ego_route",
    "goal",
    "observation_horizon",
    "planning_horizon",
}
_LANE_KEYS = {"id", "points", "successors", "speed_limit"}
_TRACK_KEYS = {"id", "is_ego", "footprint", "states"}
_GOAL_KEYS = {"x", "y", "radius"}


def _reject_nonfinite(token: str):
    raise ScenarioFormatError(f"non-finite number '{token}' in scenario file")


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ScenarioFormatError(
            f"{where}: unknown key(s) {sorted(unknown)}"
        )


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ScenarioFormatError(f"{where}: missing required key '{key}'")
    return obj[key]


def _parse_lane(obj: dict, index: int) -> LaneCenterline:
    where = f"lanes[{index}]"
    if not isinstance(obj, dict):
        raise ScenarioFormatError(f"{where}: expected an object")
    _check_keys(obj, _LANE_KEYS, where)
    lane_id = _require(obj, "id", where)
    raw_points = _require(obj, "points", where)
    try:
        points = tuple((float(p[0]), float(p[1])) for p in raw_points)
    except (TypeError, ValueError, IndexError) as exc:
        raise ScenarioFormatError(f"{where}.points: malformed point list") from exc
    successors = tuple(str(s) for s in obj.get("successors", []))
    speed_limit = float(obj.get("speed_limit", 15.0))
    return LaneCenterline(str(lane_id), points, successors, speed_limit)


def _parse_track(obj: dict, index: int) -> tuple[AgentTrack, bool]:
    where = f"tracks[{index}]"
    if not isinstance(obj, dict):
        raise ScenarioFormatError(f"{where}: expected an object")
    _check_keys(obj, _TRACK_KEYS, where)
    agent_id = str(_require(obj, "id", where))
    is_ego = bool(obj.get("is_ego", False))
    fp_raw = obj.get("footprint")
    footprint = DEFAULT_FOOTPRINT if fp_raw is None else (float(fp_raw[0]), float(fp_raw[1]))
    raw_states = _require(obj, "states", where)
    states = []
    for j, row in enumerate(raw_states):
        try:
            x, y, vx, vy, heading = (float(v) for v in row)
        except (TypeError, ValueError) as exc:
            raise ScenarioFormatError(
                f"{where}.states[{j}]: expected [x, y, vx, vy, heading]"
            ) from exc
        states.append(AgentState(x, y, vx, vy, wrap_angle(heading)))
    return AgentTrack(agent_id, tuple(states), footprint), is_ego


def scenario_from_dict(data: dict) -> Scenario:
    """Build a validated Scenario from a schema-1 dict."""
    if not isinstance(data, dict):
        raise ScenarioFormatError("top level: expected a JSON object")
    _check_keys(data, _TOP_KEYS, "top level")
    schema = _require(data, "schema", "top level")
    if schema != SCHEMA_VERSION:
        raise ScenarioFormatError(f"schema: unsupported version {schema!r}")

    lanes = tuple(_parse_lane(o, i) for i, o in enumerate(_require(data, "lanes", "top level")))

    tracks: list[AgentTrack] = []
    ego_index = None
    for i, obj in enumerate(_require(data, "tracks", "top level")):
        track, is_ego = _parse_track(obj, i)
        if is_ego:
            if ego_index is not None:
                raise ScenarioValidationError("tracks: more than one ego track")
            ego_index = len(tracks)
        tracks.append(track)
    if ego_index is None:
        raise ScenarioValidationError("tracks: missing ego track (no is_ego=true)")
    # Ego first, others keep file order.
    ordered = [tracks[ego_index]] + [t for i, t in enumerate(tracks) if i != ego_index]

    goal_obj = _require(data, "goal", "top level")
    if not isinstance(goal_obj, dict):
        raise ScenarioFormatError("goal: expected an object")
    _check_keys(goal_obj, _GOAL_KEYS, "goal")
    goal = Goal(
        float(_require(goal_obj, "x", "goal")),
        float(_require(goal_obj, "y", "goal")),
        float(goal_obj.get("radius", DEFAULT_GOAL_RADIUS)),
    )

    ego_route = tuple(str(s) for s in _require(data, "ego_route", "top level"))

    return Scenario(
        lanes=lanes,
        tracks=tuple(ordered),
        ego_route=ego_route,
        goal=goal,
        observation_horizon=int(data.get("observation_horizon", DEFAULT_OBSERVATION_HORIZON)),
        planning_horizon=int(data.get("planning_horizon", DEFAULT_PLANNING_HORIZON)),
    )


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario JSON file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioFormatError(f"cannot read scenario file '{path}': {exc}") from exc
    try:
        data = json.loads(text, parse_constant=_reject_nonfinite)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"'{path}': malformed JSON: {exc}") from exc
    return scenario_from_dict(data)


def scenario_to_dict(scenario: Scenario) -> dict:
    """Serialize a Scenario to its schema-1 dict form (exact round trip)."""
    return {
        "schema": SCHEMA_VERSION,
        "lanes": [
            {
                "id": lane.lane_id,
                "points": [[x, y] for x, y in lane.points],
                "successors": list(lane.successors),
                "speed_limit": lane.speed_limit,
            }
            for lane in scenario.lanes
        ],
        "tracks": [
            {
                "id": track.agent_id,
                "is_ego": i == 0,
                "footprint": list(track.footprint),
                "states": [[s.x, s.y, s.vx, s.vy, s.heading] for s in track.states],
            }
            for i, track in enumerate(scenario.tracks)
        ],
        "ego_route": list(scenario.ego_route),
        "goal": {"x": scenario.goal.x, "y": scenario.goal.y, "radius": scenario.goal.radius},
        "observation_horizon": scenario.observation_horizon,
        "planning_horizon": scenario.planning_horizon,
    }


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=1, sort_keys=True))


def resample_centerline(lane: LaneCenterline, spacing: float) -> LaneCenterline:
    """Resample a centerline at uniform arc-length spacing.

    Returned points are <= ``spacing`` apart along the original polyline's
    arc length; both endpoints are preserved exactly.
    """
    if spacing <= 0:
        raise ValueError(f"spacing must be > 0, got {spacing}")
    s = lane.arc_lengths
    total = float(s[-1])
    n_intervals = max(1, math.ceil(total / spacing - 1e-12))
    s_new = np.linspace(0.0, total, n_intervals + 1)
    pts = lane.points_array
    x_new = np.interp(s_new, s, pts[:, 0])
    y_new = np.interp(s_new, s, pts[:, 1])
    # Pin the endpoints to the originals (no interpolation round-off).
    x_new[0], y_new[0] = lane.points[0]
    x_new[-1], y_new[-1] = lane.points[-1]
    return LaneCenterline(
        lane.lane_id,
        tuple(zip(x_new.tolist(), y_new.tolist())),
        lane.successors,
        lane.speed_limit,
    )
