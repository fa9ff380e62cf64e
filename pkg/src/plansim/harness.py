"""Closed-loop evaluation harness: metrics, artifacts, and ablation runs.

Artifacts per scenario: episode.jsonl (full step log), metrics.json,
trajectory.svg. A batch additionally writes metrics.csv with one row per
scenario, and `ablate` writes the 4-mode x 4-scene ablation tables. All
JSON output is sorted-key with native floats, so identical runs are
byte-identical.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .cost import CostBreakdown, CostWeights
from .errors import PlanSimError
from .geometry import rectangle_clearance
from .planner import (
    EpisodeLog,
    EpisodeStatus,
    PlanDiagnostics,
    PlannerConfig,
    StepRecord,
    plan_episode,
)
from .predictors import make_predictor
from .scene import DT, AgentState, EgoControlSample, Scenario, load_scenario
from .svg import render_trajectory_svg
from .trajgen import SamplingConfig

ABLATION_MODES = ("PS", "PS-Rule", "PS-Niter", "PS-Fixed")

SCENE_ALIASES = {
    "s1": "scene1_left_turn",
    "s2": "scene2_lane_change",
    "s3": "scene3_merge",
    "s4": "scene4_overtake",
    "straight": "straight_two_agents",
    "cutin": "cutin_probe",
}


def bundled_scenario_path(name: str) -> Path:
    """Path of a bundled scenario by alias or file stem."""
    stem = SCENE_ALIASES.get(name, name)
    path = resources.files("plansim") / "scenarios" / f"{stem}.json"
    with resources.as_file(path) as concrete:
        if not concrete.exists():
            raise PlanSimError(f"no bundled scenario named '{name}'")
        return Path(concrete)


@dataclass(frozen=True)
class Metrics:
    """Episode-level evaluation results."""

    completion_time: float  # s
    avg_velocity: float  # m/s
    collision_distance: Optional[float]  # m, min rectangle clearance
    planning_error: Optional[float]  # m, vs recorded ego reference
    status: EpisodeStatus

    def __post_init__(self) -> None:
        if self.completion_time < 0:
            raise PlanSimError("completion_time must be >= 0")
        if self.collision_distance is not None:
            overlapping = self.collision_distance <= 0.0
            if overlapping != (self.status is EpisodeStatus.COLLISION):
                raise PlanSimError(
                    "collision_distance <= 0 must coincide with Collision status"
                )


@dataclass(frozen=True)
class RunConfig:
    """One evaluation run: scenarios, planner setup, output location."""

    scenarios: tuple[Path, ...]
    out_dir: Path
    predictor: str = "lane_follow"
    mode: str = "PS"
    planner: PlannerConfig = PlannerConfig()
    weights: CostWeights = CostWeights()
    sampling: SamplingConfig = SamplingConfig()
    world_agents: str = "predictor"
    timeout_s: float = 30.0

    def __post_init__(self) -> None:
        if self.mode not in ABLATION_MODES:
            raise PlanSimError(f"mode must be one of {ABLATION_MODES}")


def apply_mode(cfg: RunConfig) -> tuple[PlannerConfig, str]:
    """Translate an ablation mode into planner flags and a predictor name."""
    planner = cfg.planner
    predictor = cfg.predictor
    if cfg.mode == "PS-Rule":
        predictor = "lane_follow"
    elif cfg.mode == "PS-Niter":
        planner = replace(planner, predict_once_per_action=True)
    elif cfg.mode == "PS-Fixed":
        planner = replace(planner, fixed_profiles=True)
    return planner, predictor


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _path_length(states: Sequence[AgentState]) -> float:
    return sum(
        math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(states, states[1:])
    )


def _min_clearance(log: EpisodeLog) -> Optional[float]:
    """Minimum oriented-rectangle clearance over the whole episode."""
    ego_fp = log.footprints[log.ego_id]
    best: Optional[float] = None

    def check(ego: AgentState, agents: dict[str, AgentState]) -> None:
        nonlocal best
        for aid, st in agents.items():
            c = rectangle_clearance(
                (ego.x, ego.y, ego.heading),
                ego_fp,
                (st.x, st.y, st.heading),
                log.footprints[aid],
            )
            if best is None or c < best:
                best = c

    others0 = {
        aid: st for aid, st in log.initial_states.items() if aid != log.ego_id
    }
    if others0:
        check(log.initial_states[log.ego_id], others0)
    for rec in log.records:
        for k, ego in enumerate(rec.ego_states):
            agents = {aid: seq[k] for aid, seq in rec.agent_states.items() if k < len(seq)}
            if agents:
                check(ego, agents)
    return best


def compute_metrics(
    log: EpisodeLog, reference: Optional[Sequence[AgentState]] = None
) -> Metrics:
    """Distill an episode log into C.T. / A.V. / C.D. / P.E.

    Completion time counts executed 0.1 s substeps (up to the goal for
    Reached episodes, total elapsed otherwise). Average velocity is path
    length over that time, robust to stops. Planning error is the mean
    pointwise deviation from the recorded ego reference over the
    overlapping horizon, when a reference exists.
    """
    steps = log.substep_count
    completion_time = steps * DT
    path = log.ego_path()
    length = _path_length(path)
    avg_velocity = length / completion_time if completion_time > 0 else 0.0
    collision_distance = _min_clearance(log)

    planning_error = None
    if reference:
        executed = path[1:]  # substep states align with reference futures
        overlap = min(len(executed), len(reference))
        if overlap > 0:
            planning_error = (
                sum(
                    math.hypot(e.x - r.x, e.y - r.y)
                    for e, r in zip(executed[:overlap], reference[:overlap])
                )
                / overlap
            )

    return Metrics(
        completion_time=completion_time,
        avg_velocity=avg_velocity,
        collision_distance=collision_distance,
        planning_error=planning_error,
        status=log.status,
    )


def recorded_ego_reference(scenario: Scenario) -> Optional[list[AgentState]]:
    """Ego track states beyond the observation window, if any were recorded."""
    ego = scenario.tracks[0]
    future = list(ego.states[scenario.observation_horizon :])
    return future or None


# ---------------------------------------------------------------------------
# Episode log serialization (JSON lines)
# ---------------------------------------------------------------------------


def _state_row(s: AgentState) -> list[float]:
    return [s.x, s.y, s.vx, s.vy, s.heading]


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True)


def write_episode_jsonl(log: EpisodeLog, path: Path) -> None:
    lines = [
        _dump(
            {
                "type": "header",
                "ego_id": log.ego_id,
                "goal": list(log.goal),
                "footprints": {aid: list(fp) for aid, fp in log.footprints.items()},
                "v_max": log.v_max,
                "macro_step": log.macro_step,
                "initial_states": {
                    aid: _state_row(s) for aid, s in log.initial_states.items()
                },
            }
        )
    ]
    for rec in log.records:
        lines.append(
            _dump(
                {
                    "type": "step",
                    "index": rec.index,
                    "time": rec.time,
                    "action": rec.action,
                    "ego": [_state_row(s) for s in rec.ego_states],
                    "agents": {
                        aid: [_state_row(s) for s in seq]
                        for aid, seq in rec.agent_states.items()
                    },
                    "controls": [[c.accel, c.steer] for c in rec.controls],
                    "cost": {
                        "c1": rec.breakdown.c1,
                        "c2": rec.breakdown.c2,
                        "c3": rec.breakdown.c3,
                        "c4": rec.breakdown.c4,
                        "c5": rec.breakdown.c5,
                        "total": rec.breakdown.total,
                        "speed_clamped": rec.breakdown.speed_clamped,
                    },
                    "diagnostics": rec.diagnostics.as_dict(),
                }
            )
        )
    lines.append(
        _dump(
            {
                "type": "end",
                "status": log.status.value,
                "reason": log.reason,
                "sim_time": log.sim_time,
            }
        )
    )
    path.write_text("\n".join(lines) + "\n")


def read_episode_jsonl(path: Path) -> EpisodeLog:
    """Rebuild an EpisodeLog from its JSONL artifact."""
    records = []
    header = None
    end = None
    with open(path) as fh:
        for line in fh:
            obj = json.loads(line)
            if obj["type"] == "header":
                header = obj
            elif obj["type"] == "step":
                records.append(obj)
            elif obj["type"] == "end":
                end = obj
    if header is None or end is None:
        raise PlanSimError(f"{path}: missing header or end record")

    def mk_state(row) -> AgentState:
        return AgentState(*row)

    log = EpisodeLog(
        ego_id=header["ego_id"],
        goal=tuple(header["goal"]),
        footprints={aid: tuple(fp) for aid, fp in header["footprints"].items()},
        v_max=header["v_max"],
        macro_step=header["macro_step"],
        initial_states={aid: mk_state(r) for aid, r in header["initial_states"].items()},
        status=EpisodeStatus(end["status"]),
        reason=end["reason"],
    )
    for obj in records:
        diag = obj["diagnostics"]
        log.records.append(
            StepRecord(
                index=obj["index"],
                time=obj["time"],
                action=obj["action"],
                ego_states=[mk_state(r) for r in obj["ego"]],
                agent_states={
                    aid: [mk_state(r) for r in rows]
                    for aid, rows in obj["agents"].items()
                },
                controls=[
                    EgoControlSample(t=i + 1, accel=a, steer=s)
                    for i, (a, s) in enumerate(obj["controls"])
                ],
                breakdown=CostBreakdown(
                    c1=obj["cost"]["c1"],
                    c2=obj["cost"]["c2"],
                    c3=obj["cost"]["c3"],
                    c4=obj["cost"]["c4"],
                    c5=obj["cost"]["c5"],
                    total=obj["cost"]["total"],
                    speed_clamped=obj["cost"]["speed_clamped"],
                ),
                diagnostics=PlanDiagnostics(
                    chosen_action=diag["chosen_action"],
                    actions=tuple(diag["actions"]),
                    q_values=tuple(diag["q_values"]),
                    visit_counts=tuple(diag["visit_counts"]),
                    failed_actions=tuple(diag["failed_actions"]),
                    iterations=diag["iterations"],
                    best_chain=[(a, q) for a, q in diag["best_chain"]],
                ),
            )
        )
    return log


def metrics_to_dict(name: str, m: Metrics) -> dict:
    return {
        "scenario": name,
        "status": m.status.value,
        "completion_time_s": m.completion_time,
        "avg_velocity_mps": m.avg_velocity,
        "collision_distance_m": m.collision_distance,
        "planning_error_m": m.planning_error,
    }


# ---------------------------------------------------------------------------
# Run orchestration
# ---------------------------------------------------------------------------

_CSV_FIELDS = (
    "scenario",
    "status",
    "completion_time_s",
    "avg_velocity_mps",
    "collision_distance_m",
    "planning_error_m",
)


def _csv_row(row: dict) -> list[str]:
    return [
        "" if row[k] is None else (f"{row[k]:.6f}" if isinstance(row[k], float) else str(row[k]))
        for k in _CSV_FIELDS
    ]


def run_scenario(
    scenario_path: Path,
    out_dir: Path,
    cfg: RunConfig,
) -> tuple[str, Metrics, EpisodeLog]:
    """Execute one closed-loop episode and write its artifacts."""
    scenario = load_scenario(scenario_path)
    planner_cfg, predictor_name = apply_mode(cfg)
    predictor = make_predictor(predictor_name)
    log = plan_episode(
        scenario,
        planner_cfg,
        predictor=predictor,
        weights=cfg.weights,
        sampling=cfg.sampling,
        timeout_s=cfg.timeout_s,
        world_agents=cfg.world_agents,
    )
    metrics = compute_metrics(log, reference=recorded_ego_reference(scenario))

    out_dir.mkdir(parents=True, exist_ok=True)
    name = scenario_path.stem
    write_episode_jsonl(log, out_dir / "episode.jsonl")
    (out_dir / "metrics.json").write_text(
        json.dumps(metrics_to_dict(name, metrics), sort_keys=True, indent=1) + "\n"
    )
    (out_dir / "trajectory.svg").write_text(render_trajectory_svg(scenario, log))
    return name, metrics, log


def run(cfg: RunConfig) -> list[tuple[str, Metrics]]:
    """Run every scenario in the config; write per-scenario artifacts and
    a batch metrics.csv. Driving failures are results, not errors."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    results: list[tuple[str, Metrics]] = []
    for scenario_path in cfg.scenarios:
        name = scenario_path.stem
        _, metrics, _ = run_scenario(scenario_path, cfg.out_dir / name, cfg)
        results.append((name, metrics))

    with open(cfg.out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for name, metrics in results:
            writer.writerow(_csv_row(metrics_to_dict(name, metrics)))
    return results


def ablate(
    scenes: Sequence[str],
    out_dir: Path,
    base: RunConfig,
) -> dict[str, dict[str, Metrics]]:
    """Run the 4-mode ablation matrix over the given scenes.

    Writes ablation.csv (long form, one row per mode x scene) and
    ablation_table.csv (wide form, one row per mode). Scene names may be
    aliases (s1..s4), bundled stems, or paths.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: list[tuple[str, Path]] = []
    for scene in scenes:
        p = Path(scene)
        if not p.exists():
            p = bundled_scenario_path(scene)
        paths.append((scene, p))

    table: dict[str, dict[str, Metrics]] = {}
    for mode in ABLATION_MODES:
        table[mode] = {}
        for scene, path in paths:
            cfg = replace(base, mode=mode, scenarios=(path,))
            _, metrics, _ = run_scenario(path, out_dir / mode / scene, cfg)
            table[mode][scene] = metrics

    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "scene", "ct_s", "av_mps", "cd_m"])
        for mode in ABLATION_MODES:
            for scene, _ in paths:
                m = table[mode][scene]
                writer.writerow(
                    [
                        mode,
                        scene,
                        f"{m.completion_time:.6f}",
                        f"{m.avg_velocity:.6f}",
                        "" if m.collision_distance is None else f"{m.collision_distance:.6f}",
                    ]
                )

    with open(out_dir / "ablation_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["mode"]
        for scene, _ in paths:
            header += [f"{scene}_ct_s", f"{scene}_av_mps", f"{scene}_cd_m"]
        writer.writerow(header)
        for mode in ABLATION_MODES:
            row = [mode]
            for scene, _ in paths:
                m = table[mode][scene]
                row += [
                    f"{m.completion_time:.6f}",
                    f"{m.avg_velocity:.6f}",
                    "" if m.collision_distance is None else f"{m.collision_distance:.6f}",
                ]
            writer.writerow(row)
    return table
