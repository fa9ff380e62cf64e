"""Five-term segment objective: speed keeping, smoothness, harshness, collision.

The assembled total mixes a reward-like speed term (positive weight) with
penalty terms carrying negative weights, so a well-driven segment scores
near +1 and a colliding one scores strongly negative. The tree search
maximizes reward = -(segment cost) with segment cost defined as the negated
total; see planner_reward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .scene import AgentState, EgoControlSample

SPEED_CLAMP = 0.1  # m/s floor for the speed term's denominator


@dataclass(frozen=True)
class CostWeights:
    """Term weights and shape constants."""

    w1: float = 1.0
    w2: float = -0.01
    w3: float = -1.5
    w4: float = -1.0
    w5: float = -14.0
    v_max: float = 15.0
    alpha: float = 4.0  # comfortable acceleration ceiling [m/s^2]
    beta: float = -5.0  # comfortable braking floor [m/s^2]
    kappa: float = 15.0  # harshness softplus sharpness
    l_x: float = 10.0  # longitudinal collision half-extent [m]
    l_y: float = 2.0  # lateral collision half-extent [m]
    lambda_x: float = 0.5  # 1/m
    lambda_y: float = 9.0  # 1/m
    reward_is_negcost: bool = True

    def __post_init__(self) -> None:
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if self.l_x <= 0 or self.l_y <= 0:
            raise ValueError("l_x and l_y must be > 0")


@dataclass(frozen=True)
class CostBreakdown:
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    total: float
    speed_clamped: bool = False


def _softplus(x: float) -> float:
    # ln(1 + e^x), stable for large |x|.
    if x > 30.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _shifted_sigmoid(x: float) -> float:
    # S(x) = sigmoid(x) - 1/2, stable for large |x|.
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x)) - 0.5
    e = math.exp(x)
    return e / (1.0 + e) - 0.5


def speed_cost(v_tau: float, v_max: float) -> float:
    """Speed-keeping term 1 - ((v - v_max)/v)^2; v clamped at 0.1 m/s."""
    v = max(v_tau, SPEED_CLAMP)
    return 1.0 - ((v - v_max) / v) ** 2


def smoothness_costs(controls: Sequence[EgoControlSample]) -> tuple[float, float]:
    """Sums of squared consecutive acceleration and steer differences."""
    if len(controls) < 2:
        return (0.0, 0.0)
    c2 = 0.0
    c3 = 0.0
    for prev, cur in zip(controls, controls[1:]):
        c2 += (cur.accel - prev.accel) ** 2
        c3 += (cur.steer - prev.steer) ** 2
    return (c2, c3)


def harshness_cost(controls: Sequence[EgoControlSample], w: CostWeights) -> float:
    """Softplus pair penalizing acceleration outside [beta, alpha]."""
    total = 0.0
    for c in controls:
        total += _softplus(w.kappa * (c.accel - w.alpha))
        total += _softplus(-w.kappa * (c.accel - w.beta))
    return total


def collision_step_term(dx: float, dy: float, w: CostWeights) -> float:
    """One step's rectangle-proximity product from body-frame offsets."""
    fx = _shifted_sigmoid(w.lambda_x * (dx + w.l_x)) + _shifted_sigmoid(w.lambda_x * (w.l_x - dx))
    fy = _shifted_sigmoid(w.lambda_y * (dy + w.l_y)) + _shifted_sigmoid(w.lambda_y * (w.l_y - dy))
    return fx * fy


def collision_cost(
    ego_states: Sequence[AgentState],
    offsets: Sequence[Optional[tuple[float, float]]],
    w: CostWeights,
) -> float:
    """Summed proximity term over per-step nearest-agent body-frame offsets.

    offsets[t] is (dx, dy) of the nearest agent center in the ego body frame
    at step t, or None when no agent is present at that step.
    """
    if len(offsets) != len(ego_states):
        raise ValueError("offsets and ego_states must have equal length")
    total = 0.0
    for off in offsets:
        if off is None:
            continue
        total += collision_step_term(off[0], off[1], w)
    return total


def nearest_agent_offsets(
    ego_states: Sequence[AgentState],
    agents_per_step: Sequence[Sequence[AgentState]],
) -> list[Optional[tuple[float, float]]]:
    """Body-frame (dx, dy) to the nearest agent center at each step."""
    offsets: list[Optional[tuple[float, float]]] = []
    for ego, agents in zip(ego_states, agents_per_step):
        if not agents:
            offsets.append(None)
            continue
        nearest = min(agents, key=lambda a: (a.x - ego.x) ** 2 + (a.y - ego.y) ** 2)
        rel_x = nearest.x - ego.x
        rel_y = nearest.y - ego.y
        cos_h, sin_h = math.cos(ego.heading), math.sin(ego.heading)
        dx = rel_x * cos_h + rel_y * sin_h  # longitudinal, forward-positive
        dy = -rel_x * sin_h + rel_y * cos_h  # lateral, left-positive
        offsets.append((dx, dy))
    return offsets


def segment_cost(
    ego_states: Sequence[AgentState],
    controls: Sequence[EgoControlSample],
    agents_per_step: Sequence[Sequence[AgentState]],
    w: CostWeights,
) -> CostBreakdown:
    """Assemble all five terms over one simulated segment.

    The speed term uses the ego speed at the segment's final step.
    """
    if not ego_states:
        raise ValueError("segment has no ego states")
    v_tau = ego_states[-1].speed
    clamped = v_tau <= SPEED_CLAMP
    c1 = speed_cost(v_tau, w.v_max)
    c2, c3 = smoothness_costs(controls)
    c4 = harshness_cost(controls, w)
    c5 = collision_cost(ego_states, nearest_agent_offsets(ego_states, agents_per_step), w)
    total = w.w1 * c1 + w.w2 * c2 + w.w3 * c3 + w.w4 * c4 + w.w5 * c5
    return CostBreakdown(c1=c1, c2=c2, c3=c3, c4=c4, c5=c5, total=total, speed_clamped=clamped)


def planner_reward(breakdown: CostBreakdown, w: CostWeights) -> float:
    """Reward handed to the tree search for one segment.

    The signed-weight total is a utility (rises with speed near the limit,
    drops near collision), so the segment cost proper is its negation and
    the search reward is -cost = total. Setting reward_is_negcost False
    negates the raw total instead; that literal reading drives the search
    toward standstill and is kept only for sensitivity probes.
    """
    return breakdown.total if w.reward_is_negcost else -breakdown.total
