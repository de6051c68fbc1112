"""Scenario loading and polyline geometry accessors."""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from core.errors import ArcLengthRangeError, DegenerateGeometryError, ScenarioSchemaError
from schemas.scenario import Point2, Scenario

logger = logging.getLogger(__name__)

PolylineLike = Union[Sequence[Point2], Sequence[Sequence[float]], np.ndarray]

ARC_TOLERANCE = 1e-9


# -------------------------------------------------------------------
# Loading
# -------------------------------------------------------------------
def _reject_constant(name: str):
    raise ScenarioSchemaError("", f"non-finite number {name} is not permitted")


def parse_scenario(data: Union[str, bytes, dict]) -> Scenario:
    """Validate a scenario from JSON text or an already-decoded mapping."""
    if isinstance(data, (str, bytes)):
        try:
            data = json.loads(data, parse_constant=_reject_constant)
        except json.JSONDecodeError as e:
            raise ScenarioSchemaError("", f"invalid JSON: {e.msg} at line {e.lineno}") from e
    if not isinstance(data, dict):
        raise ScenarioSchemaError("", "top-level value must be an object")
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        path = ".".join(str(p) for p in first["loc"])
        extra = f" (+{e.error_count() - 1} more)" if e.error_count() > 1 else ""
        raise ScenarioSchemaError(path, first["msg"] + extra) from e


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ScenarioSchemaError("", f"{path.name} is not UTF-8") from e
    scenario = parse_scenario(text)
    logger.debug(
        "loaded scenario %s: %d lanes, %d tracks",
        scenario.id, len(scenario.lane_centers), len(scenario.tracks),
    )
    return scenario


def save_scenario(scenario: Scenario, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(scenario.model_dump_json(indent=2), encoding="utf-8")
    return path


# -------------------------------------------------------------------
# Geometry
# -------------------------------------------------------------------
def as_array(polyline: PolylineLike) -> np.ndarray:
    pts = np.asarray(polyline, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegenerateGeometryError(f"expected an (n, 2) polyline, got shape {pts.shape}")
    return pts


def cumulative_lengths(polyline: PolylineLike) -> np.ndarray:
    pts = as_array(polyline)
    if len(pts) < 2:
        raise DegenerateGeometryError("polyline needs at least 2 points")
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate(([0.0], np.cumsum(seg)))


def arc_length(polyline: PolylineLike) -> float:
    return float(cumulative_lengths(polyline)[-1])


def point_at_arclength(polyline: PolylineLike, s: float) -> Tuple[Point2, float]:
    """Point at station s and the heading of the segment it lies on."""
    pts = as_array(polyline)
    cum = cumulative_lengths(pts)
    length = float(cum[-1])
    if s < -ARC_TOLERANCE or s > length + ARC_TOLERANCE:
        raise ArcLengthRangeError(s, length)
    s = min(max(s, 0.0), length)
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(max(i, 0), len(pts) - 2)
    a, b = pts[i], pts[i + 1]
    seg = cum[i + 1] - cum[i]
    frac = (s - cum[i]) / seg if seg > 0 else 0.0
    x = a[0] + frac * (b[0] - a[0])
    y = a[1] + frac * (b[1] - a[1])
    return Point2(float(x), float(y)), math.atan2(b[1] - a[1], b[0] - a[0])


def project_point(polyline: PolylineLike, point: Sequence[float]) -> Tuple[float, float, float]:
    """(station, signed lateral offset, distance) of the nearest polyline point.

    Lateral offset is positive to the left of the travel direction.
    """
    pts = as_array(polyline)
    cum = cumulative_lengths(pts)
    p = np.asarray(point, dtype=float)
    a = pts[:-1]
    d = pts[1:] - a
    seg_sq = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", p - a, d) / seg_sq, 0.0, 1.0)
    proj = a + t[:, None] * d
    dist = np.hypot(*(p - proj).T)
    i = int(np.argmin(dist))
    cross = d[i, 0] * (p[1] - a[i, 1]) - d[i, 1] * (p[0] - a[i, 0])
    station = float(cum[i] + t[i] * math.sqrt(seg_sq[i]))
    return station, float(math.copysign(dist[i], cross) if dist[i] > 0 else 0.0), float(dist[i])


def wrap_angle(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def bounding_box(scenario: Scenario, margin: float = 0.0) -> Tuple[float, float, float, float]:
    polylines = [lane.polyline for lane in scenario.lane_centers]
    polylines += [edge.polyline for edge in scenario.road_edges]
    if not polylines:
        return (-math.inf, -math.inf, math.inf, math.inf)
    pts = np.concatenate([as_array(p) for p in polylines])
    xmin, ymin = pts.min(axis=0)
    xmax, ymax = pts.max(axis=0)
    return (float(xmin - margin), float(ymin - margin), float(xmax + margin), float(ymax + margin))


def in_box(box: Tuple[float, float, float, float], x: float, y: float) -> bool:
    return box[0] <= x <= box[2] and box[1] <= y <= box[3]
