"""Scenario-tree motion planning with Frenet-frame ego trajectories and
ego-conditioned agent prediction, plus a closed-loop evaluation harness."""

from .cost import CostBreakdown, CostWeights, planner_reward, segment_cost
from .errors import (
    FrenetSingularityError,
    NoFeasibleTrajectoryError,
    PlanningFailureError,
    PlanSimError,
    ProjectionError,
    RouteGapError,
    ScenarioFormatError,
    ScenarioValidationError,
)
from .frenet import (
    FrenetState,
    ReferenceLine,
    build_reference_line,
    to_cartesian,
    to_frenet,
)
from .harness import Metrics, RunConfig, ablate, compute_metrics, run
from .planner import (
    ActionSet,
    EpisodeLog,
    EpisodeStatus,
    PlannerConfig,
    ScenarioTreeNode,
    ScenarioTreePlanner,
    plan_episode,
)
from .predictors import (
    BranchContext,
    ConstantVelocityPredictor,
    LaneFollowPredictor,
    LaneFollowYieldPredictor,
    ModePolicy,
    PlaybackPredictor,
    PredictionSet,
    Predictor,
    make_predictor,
    select_transition,
    select_transition_sequence,
)
from .scene import (
    DT,
    AgentState,
    AgentTrack,
    EgoControlSample,
    Goal,
    LaneCenterline,
    Scenario,
    load_scenario,
    resample_centerline,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from .trajgen import (
    FrenetTrajectory,
    SamplingConfig,
    generate_planning_set,
    select_best_path,
)

__version__ = "0.1.0"
