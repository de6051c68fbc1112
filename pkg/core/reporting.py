"""Batch report emission: aggregate tables and SVG distribution plots."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from core.errors import RoadsimError  # noqa: E402
from core.metrics import REFERENCE_RESULTS  # noqa: E402
from schemas.config import COMPONENT_GROUPS  # noqa: E402
from schemas.contracts import MetricsReport  # noqa: E402

logger = logging.getLogger(__name__)

COMPONENTS = [name for members in COMPONENT_GROUPS.values() for name in members]
SCALAR_COLUMNS = ["realism_meta", *COMPONENT_GROUPS, *COMPONENTS, "min_ade", "collision_rate", "offroad_rate"]
REFERENCE_COLUMNS = ["realism_meta", "kinematic", "interactive", "map", "min_ade", "collision_rate_60s", "offroad_rate_60s"]
SVG_STYLE = {"svg.hashsalt": "roadsim", "svg.fonttype": "path", "font.size": 9}

PathLike = Union[str, Path]


def load_reports(directory: PathLike) -> List[MetricsReport]:
    reports = []
    for path in sorted(Path(directory).glob("*.json")):
        if path.name in ("metadata.json", "manifest.json"):
            continue
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            logger.warning("skipping %s: %s", path.name, e)
            continue
        if "realism_meta" not in data:
            continue
        reports.append(MetricsReport.model_validate(data))
    if not reports:
        raise RoadsimError(f"no metrics reports in {directory}")
    return sorted(reports, key=lambda r: r.scenario_id)


def report_row(report: MetricsReport) -> Dict[str, Optional[float]]:
    row: Dict[str, Optional[float]] = {
        "realism_meta": report.realism_meta,
        "min_ade": report.min_ade,
        "collision_rate": report.collision_rate,
        "offroad_rate": report.offroad_rate,
    }
    row.update({g: report.groups.get(g) for g in COMPONENT_GROUPS})
    row.update({c: report.components.get(c) for c in COMPONENTS})
    return row


def aggregate(reports: Sequence[MetricsReport]) -> Dict[str, Optional[float]]:
    """Mean of each column over the reports that define it."""
    rows = [report_row(r) for r in reports]
    out: Dict[str, Optional[float]] = {}
    for col in SCALAR_COLUMNS:
        values = [row[col] for row in rows if row[col] is not None]
        out[col] = float(np.mean(values)) if values else None
    return out


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.4f}"


def _write_csv(path: Path, header: List[str], rows: List[List[str]]) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_scenario_table(reports: Sequence[MetricsReport], path: PathLike) -> Path:
    rows = []
    for r in reports:
        row = report_row(r)
        rows.append([r.scenario_id, str(r.n_rollouts), str(r.horizon), *(_fmt(row[c]) for c in SCALAR_COLUMNS)])
    return _write_csv(Path(path), ["scenario_id", "n_rollouts", "horizon", *SCALAR_COLUMNS], rows)


def _svg(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_component_scores(reports: Sequence[MetricsReport], path: PathLike) -> Path:
    with plt.rc_context(SVG_STYLE):
        fig, ax = plt.subplots(figsize=(8.0, 4.0))
        data = [[r.components[c] for r in reports if r.components.get(c) is not None] for c in COMPONENTS]
        positions = [i for i, d in enumerate(data) if d]
        if positions:
            ax.boxplot([data[i] for i in positions], positions=positions, widths=0.6)
        ax.set_xticks(range(len(COMPONENTS)))
        ax.set_xticklabels(COMPONENTS, rotation=35, ha="right")
        ax.set_ylim(0.0, 1.05)
        ax.set_ylabel("likelihood score")
        ax.set_title(f"component scores ({len(reports)} scenarios)")
        fig.tight_layout()
        return _svg(fig, Path(path))


def plot_long_horizon_rates(reports: Sequence[MetricsReport], path: PathLike) -> Path:
    with plt.rc_context(SVG_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.2), sharey=True)
        for ax, name in zip(axes, ("collision_rate", "offroad_rate")):
            values = [getattr(r, name) for r in reports]
            ax.hist(values, bins=np.linspace(0.0, 1.0, 21), color="0.4")
            ax.set_xlabel(name.replace("_", " "))
        axes[0].set_ylabel("scenarios")
        fig.tight_layout()
        return _svg(fig, Path(path))


def write_report(reports_dir: PathLike, out_dir: PathLike) -> List[Path]:
    reports = load_reports(reports_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    means = aggregate(reports)
    paths = [
        _write_csv(out / "aggregate.csv", ["scenarios", *SCALAR_COLUMNS], [[str(len(reports)), *(_fmt(means[c]) for c in SCALAR_COLUMNS)]]),
        write_scenario_table(reports, out / "scenarios.csv"),
        _write_csv(
            out / "reference.csv",
            ["method", *REFERENCE_COLUMNS],
            [[method, *(_fmt(values.get(c)) for c in REFERENCE_COLUMNS)] for method, values in REFERENCE_RESULTS.items()],
        ),
        plot_component_scores(reports, out / "component_scores.svg"),
        plot_long_horizon_rates(reports, out / "long_horizon_rates.svg"),
    ]
    logger.info("report over %d scenarios written to %s", len(reports), out)
    return paths
