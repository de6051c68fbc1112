"""Command-line entry point: convert, simulate, evaluate, report.

Exit codes: 0 every scenario succeeded, 1 at least one scenario failed,
2 config or input/output error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from config import load_config, setup_logging
from core import pipeline
from core.errors import ConfigError, RoadsimError, RolloutMismatchError, error_info
from core.reporting import write_report, write_scenario_table
from core.rollout_io import find_rollouts, read_rollout, write_rollout_bin, write_rollout_csv
from core.scenario_model import load_scenario
from core.sumo_export import write_bundle
from schemas.config import RunConfig
from schemas.scenario import Scenario

logger = logging.getLogger("roadsim.cli")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

SKIPPED_JSON = {"metadata.json", "manifest.json", "conversion_report.json"}

Task = Callable[[], Scenario]
Result = Tuple[str, Any, Optional[dict]]


# -------------------------------------------------------------------
# Inputs
# -------------------------------------------------------------------
def collect_scenarios(path: Path) -> Dict[str, Task]:
    """Scenario loaders keyed by a stable name; loading itself happens in the worker."""
    if not path.exists():
        raise FileNotFoundError(f"scenario input not found: {path}")
    files = sorted(path.iterdir()) if path.is_dir() else [path]
    tasks: Dict[str, Task] = {}
    for p in files:
        if p.suffix == ".json" and p.name not in SKIPPED_JSON:
            tasks[p.stem] = lambda p=p: load_scenario(p)
        elif p.suffix == ".tfrecord" or ".tfrecord-" in p.name:
            from core.womd_adapter import load_tfrecord

            for scenario in load_tfrecord(p):
                tasks[scenario.id] = lambda s=scenario: s
    if not tasks:
        raise FileNotFoundError(f"no scenarios (*.json, *.tfrecord) in {path}")
    return tasks


def run_batch(tasks: Dict[str, Callable[[], Any]], workers: int) -> List[Result]:
    """Run every task, isolating failures; results come back sorted by key."""

    def worker(key: str, fn: Callable[[], Any]) -> Result:
        try:
            return key, fn(), None
        except Exception as e:
            logger.error("%s failed: %s: %s", key, type(e).__name__, e)
            return key, None, error_info(e)

    results: List[Result] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        futures = [ex.submit(worker, key, fn) for key, fn in tasks.items()]
        for fut in as_completed(futures):
            results.append(fut.result())
    return sorted(results, key=lambda r: r[0])


def _write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _finish(command: str, results: Sequence[Result]) -> int:
    failed = [key for key, _, err in results if err is not None]
    logger.info("%s: %d ok, %d failed", command, len(results) - len(failed), len(failed))
    for key, _, err in results:
        if err is not None:
            print(f"[FAIL] {key}: {err['type']}: {err['message']}", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


# -------------------------------------------------------------------
# Commands
# -------------------------------------------------------------------
def cmd_convert(inputs: Path, out: Path, config: RunConfig) -> int:
    tasks = collect_scenarios(inputs)

    def job(load: Task) -> Callable[[], pipeline.Converted]:
        return lambda: pipeline.convert(load(), config)

    results = run_batch({k: job(t) for k, t in tasks.items()}, config.workers)
    for key, converted, err in results:
        if err is not None:
            continue
        sid = converted.scenario.id
        paths = write_bundle(converted.bundle, out / sid, sid)
        converted.report.files = [p.name for p in paths]
        _write_json(out / sid / "conversion_report.json", converted.report.model_dump(mode="json"))
        print(f"[OK] {sid}: {len(paths)} files, coverage {converted.report.coverage_ratio:.4f}")
    return _finish("convert", results)


def cmd_simulate(inputs: Path, out: Path, config: RunConfig) -> int:
    tasks = collect_scenarios(inputs)

    def job(load: Task) -> Callable[[], tuple]:
        def run():
            scenario = load()
            converted = pipeline.convert(scenario, config)
            return converted, pipeline.simulate(scenario, config, converted)

        return run

    results = run_batch({k: job(t) for k, t in tasks.items()}, config.workers)
    for key, value, err in results:
        if err is not None:
            continue
        converted, rollouts = value
        sid = converted.scenario.id
        target = out / sid
        for r in rollouts:
            write_rollout_csv(r, target)
            if config.write_binary:
                write_rollout_bin(r, target)
        _write_json(target / "metadata.json", pipeline.run_metadata(config, rollouts, converted))
        print(f"[OK] {sid}: {len(rollouts)} rollouts x {config.horizon_steps} steps")
    return _finish("simulate", results)


def _rollout_dir(rollouts_dir: Path, scenario_id: str) -> Path:
    nested = rollouts_dir / scenario_id
    return nested if nested.is_dir() else rollouts_dir


def load_rollouts(rollouts_dir: Path, scenario: Scenario) -> list:
    directory = _rollout_dir(rollouts_dir, scenario.id)
    paths = find_rollouts(directory, scenario.id)
    if not paths:
        raise RolloutMismatchError(f"no rollout files in {directory} for scenario", [scenario.id])
    rollouts = [read_rollout(p) for p in paths]
    meta_path = directory / "metadata.json"
    if meta_path.exists():
        per_seed = json.loads(meta_path.read_text(encoding="utf-8")).get("rollouts", {})
        for r in rollouts:
            r.metadata = per_seed.get(str(r.seed), {})
    return rollouts


def cmd_evaluate(rollouts_dir: Path, scenarios: Path, out: Path, config: RunConfig) -> int:
    if not rollouts_dir.is_dir():
        raise FileNotFoundError(f"rollouts directory not found: {rollouts_dir}")
    tasks = collect_scenarios(scenarios)

    def job(load: Task):
        def run():
            scenario = load()
            return pipeline.score(scenario, load_rollouts(rollouts_dir, scenario), config)

        return run

    results = run_batch({k: job(t) for k, t in tasks.items()}, config.workers)
    reports = [report for _, report, err in results if err is None]
    for report in reports:
        _write_json(out / f"{report.scenario_id}.json", report.model_dump(mode="json"))
        print(f"[OK] {report.scenario_id}: realism_meta {report.realism_meta}")
    if reports:
        write_scenario_table(reports, out / "summary.csv")
    return _finish("evaluate", results)


def cmd_report(reports_dir: Path, out: Path) -> int:
    if not reports_dir.is_dir():
        raise FileNotFoundError(f"reports directory not found: {reports_dir}")
    for path in write_report(reports_dir, out):
        print(f"[OK] {path}")
    return EXIT_OK


# -------------------------------------------------------------------
# Parser
# -------------------------------------------------------------------
def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run config file (.json or .toml)")
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int, help="simulated steps at 10 Hz (80 = 8 s, 600 = 60 s)")
    p.add_argument("--rollouts", type=int, dest="n_rollouts", help="rollouts per scenario")
    p.add_argument("--workers", type=int, help="scenarios processed in parallel")
    p.add_argument("--binary", action="store_true", default=None, help="also write binary rollout files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadsim", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", help="overrides LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="scenario(s) -> SUMO plain XML + conversion report")
    p.add_argument("input", type=Path, help="scenario file or directory")
    p.add_argument("--out", type=Path, default=Path("out/networks"))
    _run_flags(p)

    p = sub.add_parser("simulate", help="scenario(s) -> rollout files")
    p.add_argument("input", type=Path, help="scenario file or directory")
    p.add_argument("--out", type=Path, default=Path("out/rollouts"))
    _run_flags(p)

    p = sub.add_parser("evaluate", help="rollouts + scenario(s) -> metrics reports")
    p.add_argument("rollouts", type=Path, help="directory written by simulate")
    p.add_argument("--scenario", type=Path, required=True, help="scenario file or directory")
    p.add_argument("--out", type=Path, default=Path("out/reports"))
    _run_flags(p)

    p = sub.add_parser("report", help="metrics reports -> aggregate tables + SVG plots")
    p.add_argument("reports", type=Path, help="directory written by evaluate")
    p.add_argument("--out", type=Path, default=Path("out/summary"))
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "horizon_steps": args.horizon,
        "n_rollouts": args.n_rollouts,
        "workers": args.workers,
        "write_binary": args.binary,
    }
    return load_config(args.config, overrides=overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        if args.command == "report":
            return cmd_report(args.reports, args.out)
        config = _config_from_args(args)
        if args.command == "convert":
            return cmd_convert(args.input, args.out, config)
        if args.command == "simulate":
            return cmd_simulate(args.input, args.out, config)
        return cmd_evaluate(args.rollouts, args.scenario, args.out, config)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RoadsimError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
