"""Per-scenario composition of the stages: convert, simulate, evaluate."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from core.demand_builder import AgentSpec, build_demand
from core.metrics import evaluate
from core.net_builder import build_network, coverage_ratio
from core.network import Network
from core.signal_estimator import SignalProgram, estimate_signals
from core.sim_engine import Rollout, rollout
from core.sumo_export import ExportBundle, export_network, export_routes
from schemas.config import RunConfig
from schemas.contracts import ConversionReport, MetricsReport
from schemas.scenario import Scenario

logger = logging.getLogger(__name__)


@dataclass
class Converted:
    scenario: Scenario
    network: Network
    programs: Dict[str, SignalProgram]
    report: ConversionReport
    bundle: ExportBundle
    demand: List[AgentSpec] = field(default_factory=list)


def convert(scenario: Scenario, config: Optional[RunConfig] = None) -> Converted:
    """Network, hold-extended signal programs, base demand and the export documents."""
    cfg = config or RunConfig()
    network = build_network(scenario, cfg.net)
    programs = estimate_signals(network, scenario, scenario.history_length + cfg.horizon_steps, cfg.signals)
    demand = build_demand(scenario, network, cfg.seed, cfg.demand)
    bundle = export_network(network, programs)
    bundle.routes_doc = export_routes(demand, network)

    summary = network.summary()
    warnings = list(network.warnings)
    for program in programs.values():
        warnings += program.warnings
    report = ConversionReport(
        scenario_id=scenario.id,
        edges=summary["edges"],
        nodes=summary["node_kinds"],
        connections=summary["connections"],
        lanes=summary["lanes"],
        signalized_nodes=summary["signalized_nodes"],
        coverage_ratio=coverage_ratio(network, scenario, cfg.net.coverage_tolerance),
        warnings=warnings,
    )
    return Converted(scenario, network, programs, report, bundle, demand)


def demand_factory(scenario: Scenario, network: Network, config: RunConfig) -> Callable[[int], List[AgentSpec]]:
    def build(seed: int) -> List[AgentSpec]:
        return build_demand(scenario, network, seed, config.demand)

    return build


def simulate(
    scenario: Scenario,
    config: Optional[RunConfig] = None,
    converted: Optional[Converted] = None,
) -> List[Rollout]:
    cfg = config or RunConfig()
    cfg.check_scenario(scenario.history_length)
    converted = converted or convert(scenario, cfg)
    if cfg.demand.resample_per_rollout:
        source = demand_factory(scenario, converted.network, cfg)
    else:
        source = converted.demand
    rollouts = rollout(
        scenario,
        converted.network,
        source,
        cfg.seed,
        cfg.horizon_steps,
        cfg.n_rollouts,
        programs=converted.programs,
        config=cfg,
    )
    return rollouts


def score(scenario: Scenario, rollouts: Sequence[Rollout], config: Optional[RunConfig] = None) -> MetricsReport:
    cfg = config or RunConfig()
    return evaluate(rollouts, scenario, cfg.metrics)


def run_metadata(config: RunConfig, rollouts: Sequence[Rollout], converted: Optional[Converted] = None) -> dict:
    """Config echo plus per-seed rollout metadata; the worker count is left out."""
    meta = {
        "config": config.model_dump(mode="json", exclude={"workers"}),
        "n_rollouts": len(rollouts),
        "horizon_steps": config.horizon_steps,
        "rollouts": {str(r.seed): r.metadata for r in rollouts},
    }
    if converted is not None:
        meta["scenario_id"] = converted.scenario.id
        meta["signal_programs"] = {nid: p.to_dict() for nid, p in converted.programs.items()}
        meta["demand"] = [spec.to_dict() for spec in converted.demand]
    return meta
