"""Optional ingestion of motion-dataset TFRecord scenarios into the canonical model.

Only the fields of the canonical JSON schema are carried over. tensorflow and
waymo_open_dataset are imported on first use.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

from core.errors import ConfigError
from core.scenario_model import parse_scenario
from schemas.scenario import Scenario

logger = logging.getLogger(__name__)

MPH_TO_MS = 0.44704
LANE_TYPES = {1: "freeway", 2: "surface_street", 3: "bike_lane"}
OBJECT_TYPES = {1: "vehicle", 2: "pedestrian", 3: "cyclist"}
# arrow/solid/flashing variants collapse onto the three-state enum
SIGNAL_STATES = {1: "red", 2: "yellow", 3: "green", 4: "red", 5: "yellow", 6: "green", 7: "red", 8: "yellow"}


def _require():
    try:
        import tensorflow as tf
        from waymo_open_dataset.protos import scenario_pb2
    except ImportError as e:
        raise ConfigError(
            "reading TFRecord scenarios needs tensorflow and waymo-open-dataset; "
            "install them or convert to the JSON scenario format first"
        ) from e
    return tf, scenario_pb2


def _dedupe(points) -> tuple:
    """(points without consecutive repeats, old index -> new index)."""
    out: List[list] = []
    index: List[int] = []
    for p in points:
        xy = [float(p.x), float(p.y)]
        if out and math.hypot(xy[0] - out[-1][0], xy[1] - out[-1][1]) < 1e-9:
            index.append(len(out) - 1)
            continue
        out.append(xy)
        index.append(len(out) - 1)
    return out, index


def _neighbors(items, own_index: List[int], lanes_index: Dict[str, List[int]]) -> List[dict]:
    out = []
    for nb in items:
        nid = str(nb.feature_id)
        other = lanes_index.get(nid)
        if other is None or not own_index:
            continue

        def at(idx: List[int], i: int) -> int:
            return idx[min(max(i, 0), len(idx) - 1)]

        out.append(
            {
                "neighbor_id": nid,
                "self_start_index": at(own_index, nb.self_start_index),
                "self_end_index": at(own_index, nb.self_end_index),
                "neighbor_start_index": at(other, nb.neighbor_start_index),
                "neighbor_end_index": at(other, nb.neighbor_end_index),
            }
        )
    return out


def scenario_from_proto(message) -> Scenario:
    """Canonical Scenario from a scenario_pb2.Scenario message."""
    history_length = int(message.current_time_index) + 1

    raw_lanes = {}
    road_edges = []
    stop_lanes: List[str] = []
    for feature in message.map_features:
        kind = feature.WhichOneof("feature_data")
        fid = str(feature.id)
        if kind == "lane":
            points, index = _dedupe(feature.lane.polyline)
            if len(points) >= 2:
                raw_lanes[fid] = (feature.lane, points, index)
        elif kind == "road_edge":
            points, _ = _dedupe(feature.road_edge.polyline)
            if len(points) >= 2:
                road_edges.append({"id": fid, "polyline": points})
        elif kind == "stop_sign":
            stop_lanes += [str(i) for i in feature.stop_sign.lane]

    index_map = {fid: idx for fid, (_, _, idx) in raw_lanes.items()}
    lanes = []
    for fid, (lane, points, index) in raw_lanes.items():
        lanes.append(
            {
                "id": fid,
                "polyline": points,
                "lane_type": LANE_TYPES.get(int(lane.type), "surface_street"),
                "speed_limit": float(lane.speed_limit_mph) * MPH_TO_MS,
                "entry_ids": [str(i) for i in lane.entry_lanes if str(i) in raw_lanes],
                "exit_ids": [str(i) for i in lane.exit_lanes if str(i) in raw_lanes],
                "left_neighbors": _neighbors(lane.left_neighbors, index, index_map),
                "right_neighbors": _neighbors(lane.right_neighbors, index, index_map),
            }
        )

    observations = []
    for t, dyn in enumerate(message.dynamic_map_states[:history_length]):
        for ls in dyn.lane_states:
            lane_id = str(ls.lane)
            if lane_id not in raw_lanes:
                continue
            observations.append(
                {
                    "time_index": t,
                    "lane_id": lane_id,
                    "state": SIGNAL_STATES.get(int(ls.state), "unknown"),
                    "stop_point": [float(ls.stop_point.x), float(ls.stop_point.y)],
                }
            )

    tracks = []
    for track in message.tracks:
        object_type = OBJECT_TYPES.get(int(track.object_type))
        if object_type is None:
            continue
        states = []
        for t, st in enumerate(track.states):
            valid = bool(st.valid) and st.length > 0 and st.width > 0
            states.append(
                {
                    "time_index": t,
                    "position": [float(st.center_x), float(st.center_y)],
                    "heading": float(st.heading),
                    "vx": float(st.velocity_x),
                    "vy": float(st.velocity_y),
                    "length": float(st.length) if valid else 0.0,
                    "width": float(st.width) if valid else 0.0,
                    "valid": valid,
                }
            )
        tracks.append({"id": str(track.id), "object_type": object_type, "states": states})

    return parse_scenario(
        {
            "id": str(message.scenario_id),
            "history_length": history_length,
            "lane_centers": lanes,
            "road_edges": road_edges,
            "stop_sign_lane_ids": sorted(set(i for i in stop_lanes if i in raw_lanes)),
            "signal_observations": observations,
            "tracks": tracks,
        }
    )


def iter_tfrecord(path: Union[str, Path], limit: Optional[int] = None) -> Iterator[Scenario]:
    tf, scenario_pb2 = _require()
    dataset = tf.data.TFRecordDataset(str(path), compression_type="")
    for k, record in enumerate(dataset):
        if limit is not None and k >= limit:
            break
        message = scenario_pb2.Scenario()
        message.ParseFromString(bytes(record.numpy()))
        yield scenario_from_proto(message)


def load_tfrecord(path: Union[str, Path], limit: Optional[int] = None) -> List[Scenario]:
    scenarios = list(iter_tfrecord(path, limit))
    logger.info("loaded %d scenarios from %s", len(scenarios), path)
    return scenarios
