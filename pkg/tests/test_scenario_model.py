import json
import math

import pytest

from core.errors import ArcLengthRangeError, ScenarioReferenceError, ScenarioSchemaError
from core.scenario_model import (
    arc_length,
    bounding_box,
    load_scenario,
    parse_scenario,
    point_at_arclength,
    project_point,
    save_scenario,
)
from tests.scenario_factory import four_way, straight_road


def minimal(**overrides) -> dict:
    data = {
        "id": "s",
        "history_length": 2,
        "lane_centers": [{"id": 1, "polyline": [[0, 0], [10, 0]]}],
        "tracks": [
            {
                "id": 7,
                "states": [
                    {"time_index": 0, "position": [1, 0], "vx": 1.0, "length": 4.0, "width": 2.0},
                    {"time_index": 1, "position": [1.1, 0], "vx": 1.0, "length": 4.0, "width": 2.0},
                ],
            }
        ],
    }
    data.update(overrides)
    return data


def test_parse_minimal_coerces_integer_ids():
    s = parse_scenario(minimal())
    assert s.lane_centers[0].id == "1"
    assert s.tracks[0].id == "7"
    assert s.current_index == 1
    assert s.timestep_s == pytest.approx(0.1)


def test_invalid_json_is_a_schema_error():
    with pytest.raises(ScenarioSchemaError, match="invalid JSON"):
        parse_scenario("{not json")


def test_nan_literal_is_rejected():
    text = json.dumps(minimal()).replace('"vx": 1.0', '"vx": NaN', 1)
    with pytest.raises(ScenarioSchemaError, match="NaN"):
        parse_scenario(text)


def test_dangling_reference_lists_missing_ids():
    data = minimal(stop_sign_lane_ids=["1", "ghost"])
    with pytest.raises(ScenarioReferenceError) as info:
        parse_scenario(data)
    assert info.value.ids == ["ghost"]


def test_repeated_point_reports_its_path():
    data = minimal(lane_centers=[{"id": "a", "polyline": [[0, 0], [0, 0], [1, 0]]}])
    with pytest.raises(ScenarioSchemaError) as info:
        parse_scenario(data)
    assert info.value.path.startswith("lane_centers.0")


def test_signal_observation_outside_history_is_rejected():
    obs = {"time_index": 5, "lane_id": "1", "state": "red", "stop_point": [10, 0]}
    with pytest.raises(ScenarioSchemaError, match="outside history window"):
        parse_scenario(minimal(signal_observations=[obs]))


def test_valid_state_needs_dimensions():
    data = minimal()
    data["tracks"][0]["states"][0]["length"] = 0.0
    with pytest.raises(ScenarioSchemaError, match="length > 0"):
        parse_scenario(data)


def test_point_at_arclength_and_range():
    pts = [(0.0, 0.0), (10.0, 0.0), (10.0, 5.0)]
    assert arc_length(pts) == pytest.approx(15.0)
    p, h = point_at_arclength(pts, 12.0)
    assert (p.x, p.y) == pytest.approx((10.0, 2.0))
    assert h == pytest.approx(math.pi / 2)
    p, _ = point_at_arclength(pts, 15.0)
    assert (p.x, p.y) == pytest.approx((10.0, 5.0))
    with pytest.raises(ArcLengthRangeError):
        point_at_arclength(pts, 15.5)


def test_project_point_lateral_is_positive_on_the_left():
    pts = [(0.0, 0.0), (10.0, 0.0)]
    s, lat, dist = project_point(pts, (4.0, 1.5))
    assert s == pytest.approx(4.0)
    assert lat == pytest.approx(1.5)
    assert dist == pytest.approx(1.5)
    _, lat, _ = project_point(pts, (4.0, -2.0))
    assert lat == pytest.approx(-2.0)


def test_save_and_load_keep_the_scenario(tmp_path):
    s = four_way(vehicles=2, signalized=True)
    path = save_scenario(s, tmp_path / "four_way.json")
    assert load_scenario(path) == s


def test_bounding_box_covers_lanes_and_edges():
    s = straight_road(length=100.0)
    xmin, ymin, xmax, ymax = bounding_box(s, margin=1.0)
    assert xmin <= -1.0 and xmax >= 101.0
    assert ymin < -1.75 and ymax > 1.75
