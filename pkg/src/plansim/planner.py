"""Scenario-tree search: UCB selection over target-speed actions, ego
transitions from the Frenet planning set, agent transitions from the
predictor, discounted backup with incremental-mean Q updates.

One decision grows one tree. Within a tree, transitions for the default
most-probable mode policy are deterministic, so node-action children are
cached and revisits descend without recomputation. All randomness flows
from PlannerConfig.rng_seed through a single stream.
"""
from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .cost import CostBreakdown, CostWeights, planner_reward, segment_cost
from .errors import (
    NoFeasibleTrajectoryError,
    PlanningFailureError,
)
from .frenet import FrenetState, ReferenceLine, build_reference_line, to_cartesian_batch, to_frenet
from .geometry import rectangle_clearance
from .predictors import (
    BranchContext,
    LaneFollowPredictor,
    ModePolicy,
    PredictionSet,
    Predictor,
    select_transition_sequence,
)
from .scene import DT, AgentState, EgoControlSample, Scenario, wrap_angle
from .trajgen import SamplingConfig, generate_planning_set, select_best_path

import numpy as np

TRANSITION_FAILURE_REWARD = -100.0


@dataclass(frozen=True)
class ActionSet:
    """Ordered target speeds [m/s]."""

    target_speeds: tuple[float, ...] = tuple(0.5 + i for i in range(15))

    def __post_init__(self) -> None:
        if not self.target_speeds:
            raise ValueError("action set is empty")
        if any(v <= 0 for v in self.target_speeds):
            raise ValueError("target speeds must be > 0")
        if any(b <= a for a, b in zip(self.target_speeds, self.target_speeds[1:])):
            raise ValueError("target speeds must be strictly increasing")

    def __len__(self) -> int:
        return len(self.target_speeds)


@dataclass(frozen=True)
class PlannerConfig:
    iterations: int = 300
    max_depth: int = 3
    exploration_c: float = 1.0
    discount: float = 0.9
    rollout_depth: int = 2
    macro_step: float = 1.0
    rng_seed: int = 0
    mode_policy: ModePolicy = ModePolicy.MOST_PROBABLE
    cheap_rollout: bool = False
    check_invariants: bool = False
    reuse_tree: bool = False
    predict_once_per_action: bool = False  # PS-Niter ablation
    fixed_profiles: bool = False  # PS-Fixed ablation
    fixed_profile_accel: float = 4.0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must be in (0, 1]")
        if self.exploration_c < 0:
            raise ValueError("exploration_c must be >= 0")

    @property
    def substeps(self) -> int:
        return max(1, int(round(self.macro_step / DT)))


@dataclass
class _FrozenFutures:
    """PS-Niter: agent futures predicted once and replayed down the branch."""

    sequences: dict[str, list[AgentState]]
    offset: int


class ScenarioTreeNode:
    """One joint world state in the tree with per-action Q/N statistics."""

    __slots__ = (
        "joint_state",
        "branch",
        "ego_fstate",
        "depth",
        "key",
        "q_values",
        "visit_counts",
        "children",
        "failed_actions",
        "cached_rewards",
        "cached_segments",
        "explored",
        "prediction",
        "frozen",
    )

    def __init__(
        self,
        joint_state: dict[str, AgentState],
        branch: Optional[BranchContext],
        ego_fstate: Optional[FrenetState],
        depth: int,
        n_actions: int,
        key: object = None,
        frozen: Optional[_FrozenFutures] = None,
    ):
        self.joint_state = joint_state
        self.branch = branch
        self.ego_fstate = ego_fstate
        self.depth = depth
        self.key = key
        self.q_values = [0.0] * n_actions
        self.visit_counts = [0] * n_actions
        self.children: dict[int, "ScenarioTreeNode"] = {}
        self.failed_actions: set[int] = set()
        self.cached_rewards: dict[int, float] = {}
        self.cached_segments: dict[int, "SegmentPlan"] = {}
        self.explored = False
        self.prediction: Optional[PredictionSet] = None
        self.frozen = frozen

    @property
    def total_visits(self) -> int:
        return sum(self.visit_counts)


@dataclass
class SegmentPlan:
    """One executed macro-step: ego substates, controls, agent substates."""

    ego_states: list[AgentState]  # substeps 1..n
    controls: list[EgoControlSample]
    agent_states: dict[str, list[AgentState]]
    end_fstate: FrenetState
    breakdown: CostBreakdown
    reward: float


@dataclass
class PlanDiagnostics:
    chosen_action: float
    actions: tuple[float, ...]
    q_values: tuple[float, ...]
    visit_counts: tuple[int, ...]
    failed_actions: tuple[int, ...]
    iterations: int
    best_chain: list[tuple[float, float]]  # (action, Q) down the max-Q path

    def as_dict(self) -> dict:
        return {
            "chosen_action": self.chosen_action,
            "actions": list(self.actions),
            "q_values": list(self.q_values),
            "visit_counts": list(self.visit_counts),
            "failed_actions": list(self.failed_actions),
            "iterations": self.iterations,
            "best_chain": [[a, q] for a, q in self.best_chain],
        }


class TreeInvariantViolation(AssertionError):
    pass


class ScenarioTreePlanner:
    """Grows one scenario tree per decision.

    A stub ``transition_fn(key, action_index) -> (child_key, reward) | None``
    replaces the driving transition for table-driven tests; returning None
    signals a transition failure.
    """

    def __init__(
        self,
        scenario: Optional[Scenario],
        cfg: PlannerConfig,
        predictor: Optional[Predictor] = None,
        weights: Optional[CostWeights] = None,
        sampling: Optional[SamplingConfig] = None,
        action_set: Optional[ActionSet] = None,
        transition_fn: Optional[Callable] = None,
        reference: Optional[ReferenceLine] = None,
    ):
        self.cfg = cfg
        self.actions = action_set or ActionSet()
        self.weights = weights or CostWeights()
        self.sampling = sampling or SamplingConfig()
        self.rng = random.Random(cfg.rng_seed)
        self.transition_fn = transition_fn
        self.scenario = scenario
        self.invariant_violations = 0
        if transition_fn is None:
            if scenario is None:
                raise ValueError("need a scenario unless a transition_fn is given")
            self.predictor = predictor or LaneFollowPredictor()
            self.reference = reference if reference is not None else build_reference_line(scenario)
        else:
            self.predictor = predictor
            self.reference = reference

    # -- node construction ---------------------------------------------------

    def make_root(
        self,
        root_states: Optional[dict[str, AgentState]] = None,
        branch: Optional[BranchContext] = None,
        ego_fstate: Optional[FrenetState] = None,
        key: object = (),
    ) -> ScenarioTreeNode:
        if self.transition_fn is not None:
            return ScenarioTreeNode({}, None, None, 0, len(self.actions), key=key)
        assert self.scenario is not None and root_states is not None
        if branch is None:
            branch = self.predictor.init_branch(self.scenario)
        ego_id = self.scenario.tracks[0].agent_id
        if ego_fstate is None:
            ego_fstate = to_frenet(self.reference, root_states[ego_id])
        return ScenarioTreeNode(dict(root_states), branch, ego_fstate, 0, len(self.actions))

    # -- public ops ------------------------------------------------------------

    def select_action(
        self, root: ScenarioTreeNode | dict[str, AgentState]
    ) -> tuple[float, PlanDiagnostics]:
        """Run the configured number of simulations, return argmax-Q action.

        Ties break toward the lowest target speed. Actions whose transition
        failed are never returned; if every action failed, planning fails.
        """
        if isinstance(root, dict):
            root = self.make_root(root)
        root.explored = True  # pre-expanded: every iteration scores an action
        for _ in range(self.cfg.iterations):
            self.simulate(root, self.cfg.max_depth)
            if self.cfg.check_invariants:
                self.assert_tree_invariants(root)

        best_idx = None
        best_q = -math.inf
        for a in range(len(self.actions)):
            if root.visit_counts[a] == 0 or a in root.failed_actions:
                continue
            if root.q_values[a] > best_q:
                best_q = root.q_values[a]
                best_idx = a
        if best_idx is None:
            raise PlanningFailureError(
                "no executable action at the root (every candidate transition failed)"
            )
        return self.actions.target_speeds[best_idx], self._diagnostics(root, best_idx)

    def simulate(self, node: ScenarioTreeNode, depth_remaining: int) -> float:
        """One search pass: select by UCB, recurse, back up the mean."""
        if depth_remaining <= 0:
            return 0.0
        if not node.explored:
            node.explored = True  # Q/N were zero-initialized at construction
            return self.rollout(node, min(depth_remaining, self.cfg.rollout_depth))

        a = self._select_ucb(node)
        child, reward = self._step(node, a, cache=self._cache_enabled)
        if child is None:
            q = TRANSITION_FAILURE_REWARD  # terminal: prune unreachable branch
        else:
            q = reward + self.cfg.discount * self.simulate(child, depth_remaining - 1)
        node.visit_counts[a] += 1
        node.q_values[a] += (q - node.q_values[a]) / node.visit_counts[a]
        return q

    def rollout(self, node: ScenarioTreeNode, depth_remaining: int) -> float:
        """Random-policy value estimate from a fresh leaf."""
        if depth_remaining <= 0:
            return 0.0
        a = self.rng.randrange(len(self.actions))
        child, reward = self._step(node, a, cache=False, cheap=self.cfg.cheap_rollout)
        if child is None:
            return TRANSITION_FAILURE_REWARD
        return reward + self.cfg.discount * self.rollout(child, depth_remaining - 1)

    def transition(
        self, node: ScenarioTreeNode, action_index: int
    ) -> tuple[Optional[ScenarioTreeNode], float]:
        """Advance one macro-step under one action (cached when deterministic)."""
        return self._step(node, action_index, cache=self._cache_enabled)

    # -- internals ---------------------------------------------------------

    @property
    def _cache_enabled(self) -> bool:
        return self.cfg.mode_policy is ModePolicy.MOST_PROBABLE

    def _select_ucb(self, node: ScenarioTreeNode) -> int:
        untried = [a for a in range(len(self.actions)) if node.visit_counts[a] == 0]
        if untried:
            return untried[0]  # lowest target speed first
        total = node.total_visits
        log_total = math.log(total)
        best_a = 0
        best_score = -math.inf
        for a in range(len(self.actions)):
            score = node.q_values[a] + self.cfg.exploration_c * math.sqrt(
                log_total / node.visit_counts[a]
            )
            if score > best_score:
                best_score = score
                best_a = a
        return best_a

    def _step(
        self,
        node: ScenarioTreeNode,
        a: int,
        cache: bool,
        cheap: bool = False,
    ) -> tuple[Optional[ScenarioTreeNode], float]:
        if cache:
            if a in node.failed_actions:
                return None, TRANSITION_FAILURE_REWARD
            if a in node.children:
                return node.children[a], node.cached_rewards[a]

        if self.transition_fn is not None:
            result = self.transition_fn(node.key, a)
            if result is None:
                child, reward, segment = None, TRANSITION_FAILURE_REWARD, None
            else:
                child_key, reward = result
                segment = None
                child = ScenarioTreeNode(
                    {}, None, None, node.depth + 1, len(self.actions), key=child_key
                )
        else:
            plan = self._plan_segment(node, a, cheap=cheap)
            if plan is None:
                child, reward, segment = None, TRANSITION_FAILURE_REWARD, None
            else:
                segment, child = plan
                reward = segment.reward

        if cache:
            if child is None:
                node.failed_actions.add(a)
            else:
                node.children[a] = child
                node.cached_rewards[a] = reward
                if segment is not None:
                    node.cached_segments[a] = segment
        return child, reward

    def plan_segment(
        self, node: ScenarioTreeNode, action_index: int
    ) -> Optional[tuple[SegmentPlan, ScenarioTreeNode]]:
        """Full segment detail for one action (used by episode execution)."""
        if self._cache_enabled:
            if action_index in node.failed_actions:
                return None
            if action_index not in node.cached_segments:
                self._step(node, action_index, cache=True)
            if action_index in node.cached_segments:
                return node.cached_segments[action_index], node.children[action_index]
            return None
        return self._plan_segment(node, action_index, cheap=False)

    def _plan_segment(
        self, node: ScenarioTreeNode, a: int, cheap: bool
    ) -> Optional[tuple[SegmentPlan, ScenarioTreeNode]]:
        assert self.scenario is not None
        cfg = self.cfg
        target = self.actions.target_speeds[a]
        n_sub = cfg.substeps
        ego_id = self.scenario.tracks[0].agent_id

        ego_plan = self._build_ego_segment(node, target, n_sub)
        if ego_plan is None:
            return None
        ego_states, controls, end_fstate = ego_plan

        agent_ids = [aid for aid in node.branch.agent_ids if aid != ego_id]
        agent_seqs, full_seqs = self._agent_futures(node, agent_ids, n_sub, cheap=cheap)

        ctx = node.branch
        if not cheap:
            for k in range(n_sub):
                step_states = {ego_id: ego_states[k]}
                for aid in agent_ids:
                    step_states[aid] = agent_seqs[aid][k]
                ctx = self.predictor.extend_branch(ctx, step_states)

        agents_per_step = [
            [agent_seqs[aid][k] for aid in agent_ids] for k in range(n_sub)
        ]
        breakdown = segment_cost(ego_states, controls, agents_per_step, self.weights)
        reward = planner_reward(breakdown, self.weights)

        joint = {ego_id: ego_states[-1]}
        for aid in agent_ids:
            joint[aid] = agent_seqs[aid][-1]

        frozen = None
        if cfg.predict_once_per_action:
            if node.frozen is not None:
                frozen = _FrozenFutures(node.frozen.sequences, node.frozen.offset + n_sub)
            elif full_seqs is not None:
                frozen = _FrozenFutures(full_seqs, n_sub)

        child = ScenarioTreeNode(
            joint,
            ctx,
            end_fstate,
            node.depth + 1,
            len(self.actions),
            frozen=frozen,
        )
        segment = SegmentPlan(
            ego_states=ego_states,
            controls=controls,
            agent_states={aid: list(agent_seqs[aid]) for aid in agent_ids},
            end_fstate=end_fstate,
            breakdown=breakdown,
            reward=reward,
        )
        if self._cache_enabled and not cheap:
            node.cached_segments[a] = segment
        return segment, child

    def _build_ego_segment(
        self, node: ScenarioTreeNode, target: float, n_sub: int
    ) -> Optional[tuple[list[AgentState], list[EgoControlSample], FrenetState]]:
        if self.cfg.fixed_profiles:
            return self._fixed_profile_segment(node, target, n_sub)
        try:
            candidates = generate_planning_set(
                self.reference, node.ego_fstate, target, self.sampling
            )
            best = select_best_path(candidates, self.sampling.d_max)
        except NoFeasibleTrajectoryError:
            return None
        n_exec = min(n_sub, len(best) - 1)
        if n_exec < n_sub:
            return None
        ego_states = [best.state_at(k) for k in range(1, n_sub + 1)]
        controls = [
            EgoControlSample(t=k, accel=float(best.accel[k]), steer=float(best.steer[k]))
            for k in range(1, n_sub + 1)
        ]
        return ego_states, controls, best.fstate_at(n_sub)

    def _fixed_profile_segment(
        self, node: ScenarioTreeNode, target: float, n_sub: int
    ) -> Optional[tuple[list[AgentState], list[EgoControlSample], FrenetState]]:
        """PS-Fixed: ramp straight to the target speed along the route,
        holding the current lateral offset. No shaping, no feasibility caps."""
        f = node.ego_fstate
        a_max = self.cfg.fixed_profile_accel
        s = f.s
        v = f.s_dot
        s_arr = np.empty(n_sub)
        v_arr = np.empty(n_sub)
        a_arr = np.empty(n_sub)
        for k in range(n_sub):
            accel = max(-a_max, min(a_max, (target - v) / DT))
            s = s + v * DT + 0.5 * accel * DT * DT
            v = v + accel * DT
            s_arr[k] = s
            v_arr[k] = v
            a_arr[k] = accel
        d_arr = np.full(n_sub, f.d)
        cart = to_cartesian_batch(self.reference, s_arr, d_arr, v_arr, np.zeros(n_sub))
        if not bool(cart["valid"].all()):
            return None
        _, _, _, curv = self.reference.eval(s_arr)
        ego_states = [
            AgentState(
                float(cart["x"][k]),
                float(cart["y"][k]),
                float(cart["vx"][k]),
                float(cart["vy"][k]),
                wrap_angle(float(cart["heading"][k])),
            )
            for k in range(n_sub)
        ]
        controls = [
            EgoControlSample(t=k + 1, accel=float(a_arr[k]), steer=float(math.atan(2.8 * curv[k])))
            for k in range(n_sub)
        ]
        end = FrenetState(s=float(s_arr[-1]), d=float(f.d), s_dot=float(v_arr[-1]), d_dot=0.0)
        return ego_states, controls, end

    def _agent_futures(
        self, node: ScenarioTreeNode, agent_ids: list[str], n_sub: int, cheap: bool
    ) -> tuple[dict[str, list[AgentState]], Optional[dict[str, list[AgentState]]]]:
        """Agent substep states for one macro-step.

        Returns (window, full) where `full` is the complete predicted future
        when a fresh long-horizon prediction was made for PS-Niter freezing.
        """
        if not agent_ids:
            return {}, None
        if cheap:
            # Constant-velocity stand-in for fast rollouts.
            out: dict[str, list[AgentState]] = {}
            for aid in agent_ids:
                tip = node.joint_state[aid]
                out[aid] = [
                    AgentState(
                        tip.x + tip.vx * DT * (k + 1),
                        tip.y + tip.vy * DT * (k + 1),
                        tip.vx,
                        tip.vy,
                        tip.heading,
                    )
                    for k in range(n_sub)
                ]
            return out, None

        if self.cfg.predict_once_per_action and node.frozen is not None:
            return self._frozen_slice(node, agent_ids, n_sub), None

        if node.prediction is None or node.prediction.horizon < n_sub:
            horizon = n_sub
            if self.cfg.predict_once_per_action:
                horizon = n_sub * (self.cfg.max_depth + self.cfg.rollout_depth)
            node.prediction = self.predictor.predict(node.branch, horizon)
        seed = self.rng.getrandbits(32) if self.cfg.mode_policy is ModePolicy.SAMPLE else 0
        seqs = select_transition_sequence(node.prediction, self.cfg.mode_policy, seed)
        full = None
        if self.cfg.predict_once_per_action:
            full = {aid: list(seq) for aid, seq in seqs.items()}
        return {aid: seqs[aid][:n_sub] for aid in agent_ids}, full

    def _frozen_slice(
        self, node: ScenarioTreeNode, agent_ids: list[str], n_sub: int
    ) -> dict[str, list[AgentState]]:
        out: dict[str, list[AgentState]] = {}
        fro = node.frozen
        for aid in agent_ids:
            seq = fro.sequences.get(aid, [])
            window = list(seq[fro.offset : fro.offset + n_sub])
            last = window[-1] if window else node.joint_state[aid]
            while len(window) < n_sub:
                last = AgentState(
                    last.x + last.vx * DT,
                    last.y + last.vy * DT,
                    last.vx,
                    last.vy,
                    last.heading,
                )
                window.append(last)
            out[aid] = window
        return out

    # -- diagnostics and invariants ----------------------------------------

    def _diagnostics(self, root: ScenarioTreeNode, best_idx: int) -> PlanDiagnostics:
        chain: list[tuple[float, float]] = []
        node = root
        while True:
            visited = [a for a in range(len(self.actions)) if node.visit_counts[a] > 0]
            if not visited:
                break
            a_star = max(visited, key=lambda a: (node.q_values[a], -a))
            chain.append((self.actions.target_speeds[a_star], node.q_values[a_star]))
            node = node.children.get(a_star)
            if node is None:
                break
        return PlanDiagnostics(
            chosen_action=self.actions.target_speeds[best_idx],
            actions=self.actions.target_speeds,
            q_values=tuple(root.q_values),
            visit_counts=tuple(root.visit_counts),
            failed_actions=tuple(sorted(root.failed_actions)),
            iterations=self.cfg.iterations,
            best_chain=chain,
        )

    def assert_tree_invariants(self, root: ScenarioTreeNode) -> None:
        """N(s) consistency, Q finiteness, children-visited, untried-first."""
        stack = [root]
        while stack:
            node = stack.pop()
            if node.total_visits != sum(node.visit_counts):
                raise TreeInvariantViolation("N(s) != sum_a N(s,a)")
            for a in range(len(self.actions)):
                if node.visit_counts[a] > 0 and not math.isfinite(node.q_values[a]):
                    raise TreeInvariantViolation(f"Q(s,{a}) not finite")
            for a, child in node.children.items():
                if node.visit_counts[a] == 0 and node.explored and node.total_visits > 0:
                    raise TreeInvariantViolation("child exists for unvisited action")
                stack.append(child)
            visits = [v for v in node.visit_counts if v > 0]
            if visits and len(visits) < len(self.actions):
                # Untried-first: no second visit before every action has one.
                if any(v > 1 for v in visits):
                    raise TreeInvariantViolation("action revisited before all tried")


class EpisodeStatus(str, enum.Enum):
    REACHED = "Reached"
    COLLISION = "Collision"
    TIMEOUT = "Timeout"
    PLAN_FAIL = "PlanFail"


@dataclass
class StepRecord:
    index: int
    time: float  # episode time at the start of the macro-step [s]
    action: float
    ego_states: list[AgentState]  # executed substeps (1..n within the step)
    agent_states: dict[str, list[AgentState]]
    controls: list[EgoControlSample]
    breakdown: CostBreakdown
    diagnostics: PlanDiagnostics


@dataclass
class EpisodeLog:
    ego_id: str
    goal: tuple[float, float, float]  # x, y, radius
    footprints: dict[str, tuple[float, float]]
    v_max: float
    macro_step: float
    initial_states: dict[str, AgentState]
    records: list[StepRecord] = field(default_factory=list)
    status: EpisodeStatus = EpisodeStatus.TIMEOUT
    reason: str = ""

    @property
    def substep_count(self) -> int:
        return sum(len(r.ego_states) for r in self.records)

    @property
    def sim_time(self) -> float:
        return self.substep_count * DT

    def ego_path(self) -> list[AgentState]:
        """Initial ego state plus every executed substep state."""
        path = [self.initial_states[self.ego_id]]
        for rec in self.records:
            path.extend(rec.ego_states)
        return path


def _min_step_clearance(
    ego: AgentState,
    agents: dict[str, AgentState],
    footprints: dict[str, tuple[float, float]],
    ego_id: str,
) -> float:
    best = math.inf
    ego_fp = footprints[ego_id]
    for aid, st in agents.items():
        c = rectangle_clearance(
            (ego.x, ego.y, ego.heading), ego_fp, (st.x, st.y, st.heading), footprints[aid]
        )
        best = min(best, c)
    return best


def plan_episode(
    scenario: Scenario,
    cfg: PlannerConfig,
    predictor: Optional[Predictor] = None,
    weights: Optional[CostWeights] = None,
    sampling: Optional[SamplingConfig] = None,
    action_set: Optional[ActionSet] = None,
    timeout_s: float = 30.0,
    world_agents: str = "predictor",
) -> EpisodeLog:
    """Closed-loop receding-horizon episode.

    Each decision re-plans at the current world state and commits one
    macro-step. The world's agents advance with the same predictor the
    planner used, or by recorded playback when world_agents="playback".
    Terminates on goal arrival, first collision, the simulated-time budget,
    or an unrecoverable planning failure.
    """
    if world_agents not in ("predictor", "playback"):
        raise ValueError("world_agents must be 'predictor' or 'playback'")
    planner = ScenarioTreePlanner(
        scenario,
        cfg,
        predictor=predictor,
        weights=weights,
        sampling=sampling,
        action_set=action_set,
    )
    ego_id = scenario.tracks[0].agent_id
    footprints = {t.agent_id: t.footprint for t in scenario.tracks}
    states = scenario.initial_states()
    log = EpisodeLog(
        ego_id=ego_id,
        goal=(scenario.goal.x, scenario.goal.y, scenario.goal.radius),
        footprints=footprints,
        v_max=planner.weights.v_max,
        macro_step=cfg.macro_step,
        initial_states=dict(states),
    )

    ego0 = states[ego_id]
    if scenario.goal.contains(ego0.x, ego0.y):
        log.status = EpisodeStatus.REACHED
        log.reason = "started inside the goal radius"
        return log

    branch = planner.predictor.init_branch(scenario)
    try:
        ego_fstate = to_frenet(planner.reference, ego0)
    except Exception as exc:
        log.status = EpisodeStatus.PLAN_FAIL
        log.reason = f"root state off the reference line: {exc}"
        return log

    node = planner.make_root(states, branch=branch, ego_fstate=ego_fstate)
    max_decisions = max(1, int(round(timeout_s / cfg.macro_step)))
    absolute_step = scenario.observation_horizon  # playback cursor

    for decision in range(max_decisions):
        try:
            action, diag = planner.select_action(node)
        except PlanningFailureError as exc:
            log.status = EpisodeStatus.PLAN_FAIL
            log.reason = str(exc)
            return log
        a_idx = planner.actions.target_speeds.index(action)
        planned = planner.plan_segment(node, a_idx)
        if planned is None:
            log.status = EpisodeStatus.PLAN_FAIL
            log.reason = f"chosen action {action} has no feasible trajectory"
            return log
        segment, child = planned

        if world_agents == "playback":
            segment, child = _playback_execution(
                planner, scenario, node, segment, absolute_step
            )

        record = StepRecord(
            index=decision,
            time=decision * cfg.macro_step,
            action=action,
            ego_states=[],
            agent_states={aid: [] for aid in segment.agent_states},
            controls=[],
            breakdown=segment.breakdown,
            diagnostics=diag,
        )
        log.records.append(record)

        outcome = None
        for k, ego_state in enumerate(segment.ego_states):
            step_agents = {aid: seq[k] for aid, seq in segment.agent_states.items()}
            record.ego_states.append(ego_state)
            record.controls.append(segment.controls[k])
            for aid, st in step_agents.items():
                record.agent_states[aid].append(st)
            if step_agents and _min_step_clearance(ego_state, step_agents, footprints, ego_id) <= 0.0:
                outcome = (EpisodeStatus.COLLISION, "rectangle overlap with an agent")
                break
            if scenario.goal.contains(ego_state.x, ego_state.y):
                outcome = (EpisodeStatus.REACHED, "goal radius entered")
                break
        if outcome is not None:
            log.status, log.reason = outcome
            return log

        absolute_step += len(segment.ego_states)
        if cfg.reuse_tree and world_agents == "predictor":
            node = child
        else:
            node = planner.make_root(
                child.joint_state, branch=child.branch, ego_fstate=child.ego_fstate
            )

    log.status = EpisodeStatus.TIMEOUT
    log.reason = f"simulated-time budget of {timeout_s} s exhausted"
    return log


def _playback_execution(
    planner: ScenarioTreePlanner,
    scenario: Scenario,
    node: ScenarioTreeNode,
    segment: SegmentPlan,
    absolute_step: int,
) -> tuple[SegmentPlan, ScenarioTreeNode]:
    """Replace predicted agent motion with the recorded tracks for execution."""
    n_sub = len(segment.ego_states)
    ego_id = scenario.tracks[0].agent_id
    agent_states: dict[str, list[AgentState]] = {}
    for track in scenario.tracks[1:]:
        seq = []
        last = track.states[-1]
        for k in range(n_sub):
            idx = absolute_step + k
            if idx < len(track.states):
                seq.append(track.states[idx])
            else:
                prev = seq[-1] if seq else last
                seq.append(
                    AgentState(
                        prev.x + prev.vx * DT,
                        prev.y + prev.vy * DT,
                        prev.vx,
                        prev.vy,
                        prev.heading,
                    )
                )
        agent_states[track.agent_id] = seq

    agents_per_step = [
        [agent_states[aid][k] for aid in agent_states] for k in range(n_sub)
    ]
    breakdown = segment_cost(
        segment.ego_states, segment.controls, agents_per_step, planner.weights
    )
    executed = SegmentPlan(
        ego_states=segment.ego_states,
        controls=segment.controls,
        agent_states=agent_states,
        end_fstate=segment.end_fstate,
        breakdown=breakdown,
        reward=planner_reward(breakdown, planner.weights),
    )
    ctx = node.branch
    for k in range(n_sub):
        step_states = {ego_id: segment.ego_states[k]}
        for aid, seq in agent_states.items():
            step_states[aid] = seq[k]
        ctx = planner.predictor.extend_branch(ctx, step_states)
    joint = {ego_id: segment.ego_states[-1]}
    for aid, seq in agent_states.items():
        joint[aid] = seq[-1]
    child = ScenarioTreeNode(
        joint, ctx, segment.end_fstate, node.depth + 1, len(planner.actions)
    )
    return executed, child
