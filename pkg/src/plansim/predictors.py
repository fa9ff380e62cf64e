"""Agent prediction behind a uniform, incrementally-extendable interface.

Every predictor outputs six weighted future trajectories per non-ego agent,
conditioned on a branch history that includes the ego's committed motion.
Branch contexts are value-semantic: extending one returns a child sharing
the immutable tail, so parents never mutate and extension work stays
constant regardless of total history length. Map geometry is processed once
per init_branch and rides along in the context's private cache.
"""
from __future__ import annotations

import enum
import math
import random
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import PlanSimError, ProjectionError
from .frenet import ReferenceLine, project_point, reference_line_from_points
from .scene import DT, AgentState, LaneCenterline, Scenario, wrap_angle

N_MODES = 6
_CHAIN_TARGET_LENGTH = 300.0  # m of lane chain built per agent
_LANE_TABLE_SPACING = 0.5  # m


class ModePolicy(enum.Enum):
    MOST_PROBABLE = "most_probable"
    SAMPLE = "sample"


@dataclass
class PredictorStats:
    """Instrumentation counters (not part of predictive behavior)."""

    map_encodings: int = 0
    branch_inits: int = 0
    branch_extensions: int = 0
    predictions: int = 0
    extension_units: list[int] = field(default_factory=list)


class _Link:
    """One immutable history step shared between branch contexts."""

    __slots__ = ("states", "prev")

    def __init__(self, states: dict[str, AgentState], prev: Optional["_Link"]):
        self.states = states
        self.prev = prev


@dataclass(frozen=True)
class BranchContext:
    """Per-branch agent history plus the predictor's private cache."""

    branch_id: str
    agent_ids: tuple[str, ...]  # ego first
    ego_id: str
    length: int
    cache: object
    _tip: _Link

    @property
    def tip(self) -> dict[str, AgentState]:
        """Joint state at the branch tip."""
        return dict(self._tip.states)

    @property
    def history(self) -> dict[str, tuple[AgentState, ...]]:
        """Full per-agent state sequences from scenario start to the tip."""
        links = []
        link: Optional[_Link] = self._tip
        while link is not None:
            links.append(link)
            link = link.prev
        links.reverse()
        return {
            aid: tuple(lnk.states[aid] for lnk in links) for aid in self.agent_ids
        }

    def last(self, agent_id: str) -> AgentState:
        return self._tip.states[agent_id]


def _branch_id(length: int, states: Mapping[str, AgentState]) -> str:
    payload = ";".join(
        f"{aid}:{s.x:.6f},{s.y:.6f}" for aid, s in sorted(states.items())
    )
    return f"{length}:{zlib.crc32(payload.encode()) & 0xFFFFFFFF:08x}"


@dataclass(frozen=True)
class AgentPrediction:
    """Six candidate futures for one agent with a probability simplex."""

    trajectories: np.ndarray  # (6, horizon, 2)
    probabilities: np.ndarray  # (6,)
    origin: AgentState  # agent state at the branch tip

    def __post_init__(self) -> None:
        if self.trajectories.shape[0] != N_MODES or self.trajectories.ndim != 3:
            raise PlanSimError("expected (6, horizon, 2) trajectory array")
        if self.probabilities.shape != (N_MODES,):
            raise PlanSimError("expected 6 mode probabilities")
        if np.any(self.probabilities < 0):
            raise PlanSimError("mode probabilities must be non-negative")
        if abs(float(self.probabilities.sum()) - 1.0) > 1e-9:
            raise PlanSimError(
                f"mode probabilities sum to {float(self.probabilities.sum())}, not 1"
            )
        if not np.all(np.isfinite(self.trajectories)):
            raise PlanSimError("trajectories contain non-finite values")


@dataclass(frozen=True)
class PredictionSet:
    horizon: int
    agents: dict[str, AgentPrediction]

    def __post_init__(self) -> None:
        for aid, pred in self.agents.items():
            if pred.trajectories.shape[1] != self.horizon:
                raise PlanSimError(f"agent '{aid}': trajectory length != horizon")


def _single_mode(points: np.ndarray, origin: AgentState) -> AgentPrediction:
    """One real mode duplicated into the six-mode output shape."""
    traj = np.repeat(points[None, :, :], N_MODES, axis=0)
    probs = np.zeros(N_MODES)
    probs[0] = 1.0
    return AgentPrediction(trajectories=traj, probabilities=probs, origin=origin)


class Predictor:
    """Base predictor: branch bookkeeping plus instrumentation.

    Subclasses implement _build_cache (map processing, once per init) and
    _predict. Instances hold no branch state; contexts carry everything.
    """

    name = "base"
    window = 1  # history steps a predict call actually reads

    def __init__(self) -> None:
        self.stats = PredictorStats()

    # -- cache -------------------------------------------------------------

    def _build_cache(self, scenario: Scenario) -> object:
        self.stats.map_encodings += 1
        return None

    # -- branch lifecycle ---------------------------------------------------

    def init_branch(self, scenario: Scenario) -> BranchContext:
        """Context holding the observation-window history for all agents."""
        self.stats.branch_inits += 1
        cache = self._build_cache(scenario)
        agent_ids = tuple(t.agent_id for t in scenario.tracks)
        link: Optional[_Link] = None
        for step in range(scenario.observation_horizon):
            states = {t.agent_id: t.states[step] for t in scenario.tracks}
            link = _Link(states, link)
        assert link is not None
        return BranchContext(
            branch_id=_branch_id(scenario.observation_horizon, link.states),
            agent_ids=agent_ids,
            ego_id=scenario.tracks[0].agent_id,
            length=scenario.observation_horizon,
            cache=cache,
            _tip=link,
        )

    def extend_branch(
        self, ctx: BranchContext, new_states: Mapping[str, AgentState]
    ) -> BranchContext:
        """Child context one step longer; the parent is untouched."""
        if set(new_states) != set(ctx.agent_ids):
            missing = set(ctx.agent_ids) - set(new_states)
            extra = set(new_states) - set(ctx.agent_ids)
            raise PlanSimError(
                f"agent set mismatch on extend: missing={sorted(missing)} extra={sorted(extra)}"
            )
        self.stats.branch_extensions += 1
        self.stats.extension_units.append(len(new_states))
        states = dict(new_states)
        return BranchContext(
            branch_id=_branch_id(ctx.length + 1, states),
            agent_ids=ctx.agent_ids,
            ego_id=ctx.ego_id,
            length=ctx.length + 1,
            cache=ctx.cache,
            _tip=_Link(states, ctx._tip),
        )

    # -- prediction ----------------------------------------------------------

    def predict(self, ctx: BranchContext, horizon: int) -> PredictionSet:
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.stats.predictions += 1
        return self._predict(ctx, horizon)

    def _predict(self, ctx: BranchContext, horizon: int) -> PredictionSet:
        raise NotImplementedError


class ConstantVelocityPredictor(Predictor):
    """Every agent keeps its tip velocity."""

    name = "constant_velocity"

    def _predict(self, ctx: BranchContext, horizon: int) -> PredictionSet:
        agents: dict[str, AgentPrediction] = {}
        steps = np.arange(1, horizon + 1)[:, None] * DT
        for aid in ctx.agent_ids:
            if aid == ctx.ego_id:
                continue
            tip = ctx.last(aid)
            points = np.array([tip.x, tip.y]) + steps * np.array([tip.vx, tip.vy])
            agents[aid] = _single_mode(points, tip)
        return PredictionSet(horizon=horizon, agents=agents)


def _lane_chain_reference(
    scenario: Scenario, start_lane: LaneCenterline
) -> ReferenceLine:
    """Reference line along a lane and its successors, extended straight
    past the last lane so projections never fall off the end."""
    chain_pts = [start_lane.points_array]
    total = start_lane.length
    lane = start_lane
    visited = {lane.lane_id}
    while total < _CHAIN_TARGET_LENGTH and lane.successors:
        nxt = scenario.lane_by_id.get(lane.successors[0])
        if nxt is None or nxt.lane_id in visited:
            break
        pts = nxt.points_array
        if np.hypot(*(pts[0] - chain_pts[-1][-1])) < 1e-9:
            pts = pts[1:]
        chain_pts.append(pts)
        total += nxt.length
        visited.add(nxt.lane_id)
        lane = nxt
    merged = np.vstack(chain_pts)
    tail = merged[-1] - merged[-2]
    tail = tail / max(float(np.hypot(*tail)), 1e-12)
    extension = merged[-1] + tail * max(_CHAIN_TARGET_LENGTH - total, 50.0)
    merged = np.vstack([merged, extension])
    return reference_line_from_points(merged, spacing=_LANE_TABLE_SPACING)


def _nearest_lane(scenario: Scenario, x: float, y: float) -> LaneCenterline:
    best = None
    best_d = math.inf
    for lane in scenario.lanes:
        pts = lane.points_array
        d = float(np.hypot(pts[:, 0] - x, pts[:, 1] - y).min())
        if d < best_d:
            best_d = d
            best = lane
    assert best is not None
    return best


@dataclass(frozen=True)
class _LaneFollowCache:
    agent_refs: dict[str, ReferenceLine]


class LaneFollowPredictor(Predictor):
    """Constant speed along the nearest lane chain, lateral offset held.

    The rule-based baseline: agents ignore the ego entirely.
    """

    name = "lane_follow"

    def _build_cache(self, scenario: Scenario) -> _LaneFollowCache:
        self.stats.map_encodings += 1
        refs: dict[str, ReferenceLine] = {}
        idx = scenario.observation_horizon - 1
        for track in scenario.tracks[1:]:
            tip = track.states[idx]
            lane = _nearest_lane(scenario, tip.x, tip.y)
            refs[track.agent_id] = _lane_chain_reference(scenario, lane)
        return _LaneFollowCache(agent_refs=refs)

    def _advance_speeds(
        self, ctx: BranchContext, aid: str, tip: AgentState, horizon: int
    ) -> np.ndarray:
        """Per-step speeds over the horizon; constant by default."""
        return np.full(horizon, tip.speed)

    def _predict(self, ctx: BranchContext, horizon: int) -> PredictionSet:
        cache: _LaneFollowCache = ctx.cache
        agents: dict[str, AgentPrediction] = {}
        for aid in ctx.agent_ids:
            if aid == ctx.ego_id:
                continue
            tip = ctx.last(aid)
            ref = cache.agent_refs.get(aid)
            points = None
            if ref is not None and tip.speed > 1e-9:
                try:
                    s0 = project_point(ref, tip.x, tip.y)
                except ProjectionError:
                    ref = None
                else:
                    rx, ry, rheading, _ = ref.eval(s0)
                    d0 = -(tip.x - rx) * math.sin(rheading) + (tip.y - ry) * math.cos(rheading)
                    if abs(d0) > 10.0:
                        ref = None
                    else:
                        speeds = self._advance_speeds(ctx, aid, tip, horizon)
                        s_arr = s0 + np.cumsum(speeds) * DT
                        x, y, heading, _ = ref.eval(np.minimum(s_arr, ref.total_length))
                        points = np.column_stack(
                            (x - d0 * np.sin(heading), y + d0 * np.cos(heading))
                        )
            if points is None:
                # Off-map or degenerate agents fall back to constant velocity.
                steps = np.arange(1, horizon + 1)[:, None] * DT
                points = np.array([tip.x, tip.y]) + steps * np.array([tip.vx, tip.vy])
            agents[aid] = _single_mode(points, tip)
        return PredictionSet(horizon=horizon, agents=agents)


class LaneFollowYieldPredictor(LaneFollowPredictor):
    """Lane following that brakes when the ego sits ahead in the agent's lane.

    The interactive variant: predictions depend on the ego state at the
    branch tip, so branches with different ego histories diverge.
    """

    name = "lane_follow_yield"

    def __init__(self, yield_gap: float = 15.0, yield_lateral: float = 2.0, brake: float = 4.0):
        super().__init__()
        self.yield_gap = yield_gap
        self.yield_lateral = yield_lateral
        self.brake = brake

    def _advance_speeds(
        self, ctx: BranchContext, aid: str, tip: AgentState, horizon: int
    ) -> np.ndarray:
        cache: _LaneFollowCache = ctx.cache
        ref = cache.agent_refs.get(aid)
        speeds = np.full(horizon, tip.speed)
        if ref is None:
            return speeds
        ego = ctx.last(ctx.ego_id)
        try:
            s_agent = project_point(ref, tip.x, tip.y)
            s_ego = project_point(ref, ego.x, ego.y)
        except ProjectionError:
            return speeds
        ax, ay, ah, _ = ref.eval(s_agent)
        ex, ey, eh, _ = ref.eval(s_ego)
        d_agent = -(tip.x - ax) * math.sin(ah) + (tip.y - ay) * math.cos(ah)
        d_ego = -(ego.x - ex) * math.sin(eh) + (ego.y - ey) * math.cos(eh)
        gap = s_ego - s_agent
        if 0.0 < gap < self.yield_gap and abs(d_ego - d_agent) < self.yield_lateral:
            steps = np.arange(1, horizon + 1) * DT
            speeds = np.maximum(tip.speed - self.brake * steps, 0.0)
        return speeds


@dataclass(frozen=True)
class _PlaybackCache:
    tracks: dict[str, tuple[AgentState, ...]]


class PlaybackPredictor(Predictor):
    """Replays each agent's recorded track beyond the branch tip index."""

    name = "playback"

    def _build_cache(self, scenario: Scenario) -> _PlaybackCache:
        self.stats.map_encodings += 1
        return _PlaybackCache(
            tracks={t.agent_id: t.states for t in scenario.tracks[1:]}
        )

    def _predict(self, ctx: BranchContext, horizon: int) -> PredictionSet:
        cache: _PlaybackCache = ctx.cache
        agents: dict[str, AgentPrediction] = {}
        for aid in ctx.agent_ids:
            if aid == ctx.ego_id:
                continue
            tip = ctx.last(aid)
            recorded = cache.tracks.get(aid, ())
            points = np.empty((horizon, 2))
            cursor = ctx.length
            n_rec = max(0, min(horizon, len(recorded) - cursor))
            for k in range(n_rec):
                st = recorded[cursor + k]
                points[k] = (st.x, st.y)
            if n_rec < horizon:
                # Recording exhausted: continue at the last recorded velocity.
                last = recorded[-1] if recorded else tip
                base = np.array(points[n_rec - 1]) if n_rec > 0 else np.array([last.x, last.y])
                for k in range(n_rec, horizon):
                    step = k - n_rec + 1
                    points[k] = base + np.array([last.vx, last.vy]) * DT * step
            agents[aid] = _single_mode(points, tip)
        return PredictionSet(horizon=horizon, agents=agents)


PREDICTOR_REGISTRY = {
    cls.name: cls
    for cls in (
        ConstantVelocityPredictor,
        LaneFollowPredictor,
        LaneFollowYieldPredictor,
        PlaybackPredictor,
    )
}


def make_predictor(name: str) -> Predictor:
    try:
        return PREDICTOR_REGISTRY[name]()
    except KeyError:
        raise PlanSimError(
            f"unknown predictor '{name}'; choose from {sorted(PREDICTOR_REGISTRY)}"
        ) from None


# ---------------------------------------------------------------------------
# Turning a prediction set into concrete next states
# ---------------------------------------------------------------------------


def _choose_modes(
    pred: PredictionSet, policy: ModePolicy, rng_seed: int
) -> dict[str, int]:
    choices: dict[str, int] = {}
    rng = random.Random(rng_seed)
    for aid, ap in pred.agents.items():
        if policy is ModePolicy.MOST_PROBABLE:
            choices[aid] = int(np.argmax(ap.probabilities))  # ties: lowest index
        else:
            r = rng.random()
            acc = 0.0
            chosen = N_MODES - 1
            for k, p in enumerate(ap.probabilities):
                acc += float(p)
                if r < acc:
                    chosen = k
                    break
            choices[aid] = chosen
    return choices


def _mode_states(ap: AgentPrediction, k: int) -> list[AgentState]:
    """Realize mode k as agent states, velocities by backward differences."""
    pts = ap.trajectories[k]
    states: list[AgentState] = []
    prev_xy = (ap.origin.x, ap.origin.y)
    prev_heading = ap.origin.heading
    for j in range(pts.shape[0]):
        x, y = float(pts[j, 0]), float(pts[j, 1])
        vx = (x - prev_xy[0]) / DT
        vy = (y - prev_xy[1]) / DT
        heading = math.atan2(vy, vx) if math.hypot(vx, vy) > 1e-9 else prev_heading
        heading = wrap_angle(heading)
        states.append(AgentState(x, y, vx, vy, heading))
        prev_xy = (x, y)
        prev_heading = heading
    return states


def select_transition_sequence(
    pred: PredictionSet, policy: ModePolicy, rng_seed: int
) -> dict[str, list[AgentState]]:
    """Per-agent state sequences over the full prediction horizon."""
    choices = _choose_modes(pred, policy, rng_seed)
    return {aid: _mode_states(pred.agents[aid], k) for aid, k in choices.items()}


def select_transition(
    pred: PredictionSet, policy: ModePolicy, rng_seed: int
) -> dict[str, AgentState]:
    """Each agent's next-step state under the chosen mode-selection policy."""
    return {
        aid: seq[0]
        for aid, seq in select_transition_sequence(pred, policy, rng_seed).items()
    }
