"""Command-line interface.

Subcommands: `run` (closed-loop episodes with metrics and artifacts),
`ablate` (4-mode x N-scene ablation matrix), `validate` (schema check
only). Options come from a TOML config file, CLI flags, or both; flags
win. PS_LOG controls log verbosity.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .cost import CostWeights
from .errors import PlanSimError
from .harness import RunConfig, ablate, bundled_scenario_path, run
from .planner import PlannerConfig
from .predictors import ModePolicy
from .scene import load_scenario
from .trajgen import SamplingConfig

log = logging.getLogger("plansim")


def _setup_logging() -> None:
    level = os.environ.get("PS_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _dataclass_from_table(cls, table: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise PlanSimError(f"[{where}]: unknown key(s) {sorted(unknown)}")
    if "mode_policy" in table:
        table = dict(table)
        table["mode_policy"] = ModePolicy(table["mode_policy"])
    return cls(**table)


def _load_config_file(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise PlanSimError(f"cannot read config file '{path}': {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise PlanSimError(f"'{path}': invalid TOML: {exc}") from exc


def _resolve_scenario(token: str) -> Path:
    p = Path(token)
    if p.exists():
        return p
    return bundled_scenario_path(token)


def _build_run_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        data = _load_config_file(Path(args.config))

    run_table = dict(data.get("run", {}))
    planner_table = dict(data.get("planner", {}))
    cost_table = dict(data.get("cost", {}))
    sampling_table = dict(data.get("sampling", {}))

    scenarios = [str(s) for s in run_table.pop("scenarios", [])]
    if args.scenario:
        scenarios = list(args.scenario)
    if not scenarios:
        raise PlanSimError("no scenario given (use --scenario or [run].scenarios)")

    out = run_table.pop("out", None)
    if args.out:
        out = args.out
    if out is None:
        raise PlanSimError("no output directory (use --out or [run].out)")

    if args.predictor:
        run_table["predictor"] = args.predictor
    if args.mode:
        run_table["mode"] = args.mode
    if args.iterations is not None:
        planner_table["iterations"] = args.iterations
    if args.depth is not None:
        planner_table["max_depth"] = args.depth
    if args.seed is not None:
        planner_table["rng_seed"] = args.seed

    known = {"predictor", "mode", "world_agents", "timeout_s"}
    unknown = set(run_table) - known
    if unknown:
        raise PlanSimError(f"[run]: unknown key(s) {sorted(unknown)}")

    return RunConfig(
        scenarios=tuple(_resolve_scenario(s) for s in scenarios),
        out_dir=Path(out),
        planner=_dataclass_from_table(PlannerConfig, planner_table, "planner"),
        weights=_dataclass_from_table(CostWeights, cost_table, "cost"),
        sampling=_dataclass_from_table(SamplingConfig, sampling_table, "sampling"),
        **run_table,
    )


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_run_config(args)
    results = run(cfg)
    for name, metrics in results:
        cd = "n/a" if metrics.collision_distance is None else f"{metrics.collision_distance:.2f}"
        print(
            f"{name}: {metrics.status.value}  C.T.={metrics.completion_time:.1f}s  "
            f"A.V.={metrics.avg_velocity:.2f}m/s  C.D.={cd}m"
        )
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    scenes = [s.strip() for s in args.scenes.split(",") if s.strip()]
    if not scenes:
        raise PlanSimError("--scenes is empty")
    planner = PlannerConfig(
        iterations=args.iterations if args.iterations is not None else 300,
        rng_seed=args.seed if args.seed is not None else 0,
    )
    base = RunConfig(
        scenarios=(),
        out_dir=Path(args.out),
        predictor=args.predictor or "lane_follow_yield",
        planner=planner,
    )
    table = ablate(scenes, Path(args.out), base)
    for mode, row in table.items():
        cells = "  ".join(
            f"{scene}: {m.status.value} ct={m.completion_time:.1f} av={m.avg_velocity:.2f}"
            for scene, m in row.items()
        )
        print(f"{mode:9s} {cells}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    path = _resolve_scenario(args.scenario)
    scenario = load_scenario(path)
    print(
        f"OK: {path} ({len(scenario.lanes)} lanes, {len(scenario.tracks)} tracks, "
        f"route of {len(scenario.ego_route)})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ps",
        description="Scenario-tree motion planner and closed-loop evaluation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run closed-loop episodes")
    p_run.add_argument("--config", help="TOML config file")
    p_run.add_argument("--scenario", action="append", help="scenario path or bundled name")
    p_run.add_argument("--predictor", help="constant_velocity | lane_follow | lane_follow_yield | playback")
    p_run.add_argument("--mode", help="PS | PS-Rule | PS-Niter | PS-Fixed")
    p_run.add_argument("--iterations", type=int)
    p_run.add_argument("--depth", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", help="output directory")
    p_run.set_defaults(fn=_cmd_run)

    p_ab = sub.add_parser("ablate", help="run the 4-mode ablation matrix")
    p_ab.add_argument("--scenes", required=True, help="comma-separated scene names, e.g. s1,s2,s3,s4")
    p_ab.add_argument("--out", required=True)
    p_ab.add_argument("--iterations", type=int)
    p_ab.add_argument("--seed", type=int)
    p_ab.add_argument("--predictor")
    p_ab.set_defaults(fn=_cmd_ablate)

    p_val = sub.add_parser("validate", help="check a scenario file against the schema")
    p_val.add_argument("--scenario", required=True)
    p_val.set_defaults(fn=_cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except PlanSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
