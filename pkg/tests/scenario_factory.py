"""Synthetic scenarios for tests and smoke checks.

Lanes follow right-hand traffic. Road edges keep the drivable area on their left.
Every builder returns a validated Scenario.
"""
from __future__ import annotations

import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from shapely.geometry import LineString, MultiPolygon
from shapely.geometry.polygon import orient
from shapely.ops import unary_union

from core.scenario_model import parse_scenario
from schemas.scenario import Scenario

W = 3.5
HISTORY = 11
STEPS = 91
SPEED_LIMIT = 13.89
JUNCTION_RADIUS = 12.0

Pts = List[Tuple[float, float]]


# -------------------------------------------------------------------
# Lanes
# -------------------------------------------------------------------
def line(p0: Sequence[float], p1: Sequence[float], spacing: float = 10.0) -> Pts:
    p0, p1 = np.asarray(p0, dtype=float), np.asarray(p1, dtype=float)
    n = max(1, int(math.ceil(np.hypot(*(p1 - p0)) / spacing)))
    return [tuple(map(float, p0 + (p1 - p0) * k / n)) for k in range(n + 1)]


def arc(center: Sequence[float], radius: float, start: float, end: float, step_deg: float = 5.0) -> Pts:
    n = max(2, int(math.ceil(abs(math.degrees(end - start)) / step_deg)))
    return [
        (center[0] + radius * math.cos(a), center[1] + radius * math.sin(a))
        for a in np.linspace(start, end, n + 1)
    ]


def bezier(p0, c, p1, n: int = 8) -> Pts:
    p0, c, p1 = (np.asarray(v, dtype=float) for v in (p0, c, p1))
    return [tuple(map(float, (1 - t) ** 2 * p0 + 2 * (1 - t) * t * c + t * t * p1)) for t in np.linspace(0.0, 1.0, n + 1)]


def lane(lane_id: str, pts: Pts, **kw) -> dict:
    out = {"id": lane_id, "polyline": [list(p) for p in pts], "speed_limit": SPEED_LIMIT}
    out.update(kw)
    return out


def side_by_side(right: dict, left: dict) -> None:
    """Declare full-length adjacency between two lanes of equal vertex count."""
    n = len(right["polyline"]) - 1
    m = len(left["polyline"]) - 1
    right.setdefault("left_neighbors", []).append(adjacency(left["id"], 0, n, 0, m))
    left.setdefault("right_neighbors", []).append(adjacency(right["id"], 0, m, 0, n))


def adjacency(neighbor: str, s0: int, s1: int, n0: int, n1: int) -> dict:
    return {
        "neighbor_id": neighbor,
        "self_start_index": s0,
        "self_end_index": s1,
        "neighbor_start_index": n0,
        "neighbor_end_index": n1,
    }


def link(lanes: Dict[str, dict], a: str, b: str) -> None:
    lanes[a].setdefault("exit_ids", []).append(b)
    lanes[b].setdefault("entry_ids", []).append(a)


def road_edges_around(lanes: Iterable[dict], width: float = W) -> List[dict]:
    """Boundary of the buffered lane area, oriented with the drivable side on the left."""
    shapes = [LineString(l["polyline"]).buffer(0.5 * width, quad_segs=4) for l in lanes]
    area = unary_union(shapes)
    polygons = list(area.geoms) if isinstance(area, MultiPolygon) else [area]
    edges = []
    for polygon in polygons:
        polygon = orient(polygon, sign=1.0)
        for ring in (polygon.exterior, *polygon.interiors):
            coords = [(float(x), float(y)) for x, y in ring.coords]
            edges.append({"id": f"edge{len(edges)}", "polyline": [list(p) for p in coords]})
    return edges


# -------------------------------------------------------------------
# Tracks
# -------------------------------------------------------------------
def _pose_along(pts: np.ndarray, cum: np.ndarray, s: float) -> Tuple[float, float, float]:
    if s <= 0.0:
        d = pts[1] - pts[0]
        h = math.atan2(d[1], d[0])
        return pts[0][0] + s * math.cos(h), pts[0][1] + s * math.sin(h), h
    if s >= cum[-1]:
        d = pts[-1] - pts[-2]
        h = math.atan2(d[1], d[0])
        over = s - cum[-1]
        return pts[-1][0] + over * math.cos(h), pts[-1][1] + over * math.sin(h), h
    i = int(np.searchsorted(cum, s, side="right")) - 1
    f = (s - cum[i]) / (cum[i + 1] - cum[i])
    p = pts[i] + f * (pts[i + 1] - pts[i])
    d = pts[i + 1] - pts[i]
    return float(p[0]), float(p[1]), math.atan2(d[1], d[0])


def track_along(
    track_id: str,
    pts: Pts,
    s_now: float,
    speed: float,
    object_type: str = "vehicle",
    length: float = 4.5,
    width: float = 2.0,
    history: int = HISTORY,
    steps: int = STEPS,
) -> dict:
    """Constant-speed track along a polyline; at the current step it sits at station s_now."""
    arr = np.asarray(pts, dtype=float)
    cum = np.concatenate(([0.0], np.cumsum(np.hypot(*np.diff(arr, axis=0).T))))
    states = []
    for t in range(steps):
        s = s_now + speed * (t - (history - 1)) * 0.1
        x, y, h = _pose_along(arr, cum, s)
        states.append(
            {
                "time_index": t,
                "position": [x, y],
                "heading": h,
                "vx": speed * math.cos(h),
                "vy": speed * math.sin(h),
                "length": length,
                "width": width,
            }
        )
    return {"id": track_id, "object_type": object_type, "states": states}


def track_line(
    track_id: str,
    start: Sequence[float],
    velocity: Sequence[float],
    heading: Optional[float] = None,
    object_type: str = "vehicle",
    length: float = 4.5,
    width: float = 2.0,
    history: int = HISTORY,
    steps: int = STEPS,
) -> dict:
    """Straight constant-velocity track through `start` at the current step."""
    vx, vy = velocity
    if heading is not None:
        h = heading
    else:
        h = math.atan2(vy, vx) if (vx or vy) else 0.0
    states = []
    for t in range(steps):
        dt = (t - (history - 1)) * 0.1
        states.append(
            {
                "time_index": t,
                "position": [start[0] + vx * dt, start[1] + vy * dt],
                "heading": h,
                "vx": vx,
                "vy": vy,
                "length": length,
                "width": width,
            }
        )
    return {"id": track_id, "object_type": object_type, "states": states}


def scenario(
    scenario_id: str,
    lanes: Iterable[dict],
    tracks: Iterable[dict] = (),
    road_edges: Optional[List[dict]] = None,
    stop_sign_lane_ids: Sequence[str] = (),
    signal_observations: Sequence[dict] = (),
    history: int = HISTORY,
) -> Scenario:
    lanes = list(lanes)
    return parse_scenario(
        {
            "id": scenario_id,
            "history_length": history,
            "lane_centers": lanes,
            "road_edges": road_edges if road_edges is not None else road_edges_around(lanes),
            "stop_sign_lane_ids": list(stop_sign_lane_ids),
            "signal_observations": list(signal_observations),
            "tracks": list(tracks),
        }
    )


def with_tracks(base: Scenario, *tracks: dict) -> Scenario:
    data = base.model_dump(mode="json")
    data["tracks"] = data["tracks"] + list(tracks)
    return parse_scenario(data)


# -------------------------------------------------------------------
# Straight roads
# -------------------------------------------------------------------
def straight_road(
    length: float = 200.0,
    lanes: int = 1,
    vehicles: int = 0,
    speed: float = 7.3,
    spacing: float = 15.0,
    scenario_id: str = "straight",
) -> Scenario:
    """Parallel lanes along +x; vehicles are spread over the lanes from x = 20 on."""
    lane_list = [lane(f"lane{i}", line((0.0, i * W), (length, i * W))) for i in range(lanes)]
    for right, left in zip(lane_list, lane_list[1:]):
        side_by_side(right, left)
    tracks = []
    for k in range(vehicles):
        li = k % lanes
        s = 20.0 + spacing * (k // lanes)
        tracks.append(track_along(f"v{k:02d}", lane_list[li]["polyline"], s, speed))
    return scenario(scenario_id, lane_list, tracks)


def chained_road(sections: int = 3, section_length: float = 100.0, vehicles: int = 1) -> Scenario:
    """Single-lane sections joined end to start without adjacency."""
    lanes = {
        f"s{k}": lane(f"s{k}", line((k * section_length, 0.0), ((k + 1) * section_length, 0.0)))
        for k in range(sections)
    }
    for k in range(sections - 1):
        link(lanes, f"s{k}", f"s{k + 1}")
    tracks = [track_along(f"v{k}", lanes["s0"]["polyline"], 20.0 + 15.0 * k, 7.3) for k in range(vehicles)]
    return scenario("chained", lanes.values(), tracks)


def corridor() -> Scenario:
    """Three through lanes with a fourth split into four consecutive lanes and two side pockets.

    Truncation yields 18 fragments grouped into 4 edges.
    """
    def xs(x0, x1, y):
        return line((x0, y), (x1, y))

    r2 = lane("r2", xs(0, 400, -W))
    r = lane("r", xs(0, 400, 0.0))
    l1 = lane("l1", xs(0, 400, W))
    upper = {f"l{k + 2}": lane(f"l{k + 2}", xs(100 * k, 100 * (k + 1), 2 * W)) for k in range(4)}
    l10 = lane("l10", xs(100, 200, 3 * W))
    l11 = lane("l11", xs(300, 400, 3 * W))
    side_by_side(r2, r)
    side_by_side(r, l1)
    for k, lid in enumerate(upper):
        l1.setdefault("left_neighbors", []).append(adjacency(lid, 10 * k, 10 * (k + 1), 0, 10))
        upper[lid]["right_neighbors"] = [adjacency("l1", 0, 10, 10 * k, 10 * (k + 1))]
    side_by_side(upper["l3"], l10)
    side_by_side(upper["l5"], l11)
    lanes = {l["id"]: l for l in (r2, r, l1, *upper.values(), l10, l11)}
    link(lanes, "l2", "l3")
    link(lanes, "l3", "l4")
    link(lanes, "l4", "l5")
    tracks = [
        track_along("v0", r["polyline"], 30.0, 7.3),
        track_along("v1", l1["polyline"], 60.0, 7.3),
    ]
    return scenario("corridor", lanes.values(), tracks)


def lane_drop() -> Scenario:
    a0 = lane("a0", line((0, 0), (100, 0)))
    a1 = lane("a1", line((0, W), (100, W)))
    side_by_side(a0, a1)
    lanes = {
        "a0": a0,
        "a1": a1,
        "t0": lane("t0", line((100, 0), (130, 0))),
        "t1": lane("t1", bezier((100, W), (115, W), (130, 0))),
        "b0": lane("b0", line((130, 0), (230, 0))),
    }
    link(lanes, "a0", "t0")
    link(lanes, "a1", "t1")
    link(lanes, "t0", "b0")
    link(lanes, "t1", "b0")
    tracks = [track_along("v0", a1["polyline"], 40.0, 7.3)]
    return scenario("lane_drop", lanes.values(), tracks)


def lane_gain() -> Scenario:
    b0 = lane("b0", line((130, 0), (230, 0)))
    b1 = lane("b1", line((130, W), (230, W)))
    side_by_side(b0, b1)
    lanes = {
        "a0": lane("a0", line((0, 0), (100, 0))),
        "t0": lane("t0", line((100, 0), (130, 0))),
        "t1": lane("t1", bezier((100, 0), (115, 0), (130, W))),
        "b0": b0,
        "b1": b1,
    }
    link(lanes, "a0", "t0")
    link(lanes, "a0", "t1")
    link(lanes, "t0", "b0")
    link(lanes, "t1", "b1")
    return scenario("lane_gain", lanes.values(), [track_along("v0", lanes["a0"]["polyline"], 40.0, 7.3)])


def on_ramp() -> Scenario:
    """Main line and a separated ramp merging into one downstream lane."""
    lanes = {
        "main": lane("main", line((0, 0), (100, 0))),
        "ramp": lane("ramp", line((0, -W), (100, -W))),
        "m_join": lane("m_join", line((100, 0), (130, 0))),
        "r_join": lane("r_join", bezier((100, -W), (115, -W), (130, 0))),
        "down": lane("down", line((130, 0), (230, 0))),
    }
    link(lanes, "main", "m_join")
    link(lanes, "ramp", "r_join")
    link(lanes, "m_join", "down")
    link(lanes, "r_join", "down")
    tracks = [
        track_along("v0", lanes["main"]["polyline"], 40.0, 7.3),
        track_along("v1", lanes["ramp"]["polyline"], 20.0, 7.3),
    ]
    return scenario("on_ramp", lanes.values(), tracks)


def off_ramp() -> Scenario:
    lanes = {
        "up": lane("up", line((0, 0), (100, 0))),
        "m_split": lane("m_split", line((100, 0), (130, 0))),
        "r_split": lane("r_split", bezier((100, 0), (115, 0), (130, -W))),
        "main": lane("main", line((130, 0), (230, 0))),
        "ramp": lane("ramp", line((130, -W), (230, -W))),
    }
    link(lanes, "up", "m_split")
    link(lanes, "up", "r_split")
    link(lanes, "m_split", "main")
    link(lanes, "r_split", "ramp")
    return scenario("off_ramp", lanes.values(), [track_along("v0", lanes["up"]["polyline"], 40.0, 7.3)])


def curved_road() -> Scenario:
    pts = arc((0.0, 0.0), 60.0, -math.pi / 2, math.pi / 2)
    curve = lane("curve", pts)
    return scenario("curved", [curve], [track_along("v0", pts, 20.0, 7.3)])


# -------------------------------------------------------------------
# Junctions
# -------------------------------------------------------------------
def _unit(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


def _left(theta: float) -> np.ndarray:
    return np.array([-math.sin(theta), math.cos(theta)])


def _control_point(p: np.ndarray, d_in: np.ndarray, q: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    """Intersection of the incoming and outgoing lines when it lies ahead of p and behind q."""
    mat = np.column_stack([d_in, d_out])
    mid = 0.5 * (p + q)
    if abs(np.linalg.det(mat)) < 1e-6:
        return mid
    t, s = np.linalg.solve(mat, q - p)
    reach = np.hypot(*(q - p))
    if t <= 0.0 or s <= 0.0 or t > 2 * reach or s > 2 * reach:
        return mid
    return p + t * d_in


def _movement(theta_in: float, theta_out: float) -> str:
    d = math.degrees((theta_out - theta_in + math.pi) % (2 * math.pi) - math.pi)
    if abs(d) < 25.0:
        return "straight"
    return "left" if d > 0 else "right"


def _intersections(
    centers: Dict[str, Tuple[float, float]],
    arms: Dict[str, List[float]],
    neighbors: Dict[Tuple[str, int], str],
    approach_lanes: int = 1,
    stub: float = 100.0,
) -> Dict[str, dict]:
    """Lanes for junction centers with arms at given angles.

    Arm k of junction j links to junction neighbors[(j, k)] when present, otherwise it is
    a stub of length `stub`. In-lane k of an arm is indexed right (0) to left.
    """
    lanes: Dict[str, dict] = {}
    r0 = JUNCTION_RADIUS

    def arm_ids(j: str, k: int) -> Tuple[List[str], str]:
        other = neighbors.get((j, k))
        tag = other if other is not None else f"x{k}"
        ins = [f"{tag}>{j}" if approach_lanes == 1 else f"{tag}>{j}_{m}" for m in range(approach_lanes)]
        return ins, f"{j}>{tag}"

    def in_offset(m: int) -> float:
        return (approach_lanes - m - 0.5) * W

    for j, c in centers.items():
        c = np.asarray(c, dtype=float)
        for k, theta in enumerate(arms[j]):
            u, nl = _unit(theta), _left(theta)
            ins, out = arm_ids(j, k)
            other = neighbors.get((j, k))
            if other is None:
                for m, lid in enumerate(ins):
                    off = in_offset(m) * nl
                    lanes[lid] = lane(lid, line(c + (r0 + stub) * u + off, c + r0 * u + off))
                lanes[out] = lane(out, line(c + r0 * u - 0.5 * W * nl, c + (r0 + stub) * u - 0.5 * W * nl))
            elif out not in lanes:
                oc = np.asarray(centers[other], dtype=float)
                lanes[out] = lane(out, line(c + r0 * u - 0.5 * W * nl, oc - r0 * u - 0.5 * W * nl))
        for k in range(len(arms[j])):
            ins, _ = arm_ids(j, k)
            for right, left in zip(ins, ins[1:]):
                if right in lanes and left in lanes:
                    side_by_side(lanes[right], lanes[left])

    # connectors inside each junction
    for j, c in centers.items():
        c = np.asarray(c, dtype=float)
        for k, theta in enumerate(arms[j]):
            u, nl = _unit(theta), _left(theta)
            ins, out = arm_ids(j, k)
            for m, in_id in enumerate(ins):
                if in_id not in lanes:
                    continue
                p = np.asarray(lanes[in_id]["polyline"][-1])
                for k2, theta2 in enumerate(arms[j]):
                    if k2 == k:
                        continue
                    move = _movement(theta + math.pi, theta2)
                    if approach_lanes > 1:
                        if m == 0 and move == "left":
                            continue
                        if m == approach_lanes - 1 and move == "right":
                            continue
                        if 0 < m < approach_lanes - 1 and move != "straight":
                            continue
                    _, out2 = arm_ids(j, k2)
                    q = np.asarray(lanes[out2]["polyline"][0])
                    ctrl = _control_point(p, -_unit(theta), q, _unit(theta2))
                    cid = f"{in_id}~{out2}"
                    lanes[cid] = lane(cid, bezier(p, ctrl, q))
                    link(lanes, in_id, cid)
                    link(lanes, cid, out2)
    return lanes


def junction(
    n_arms: int = 4,
    vehicles: int = 0,
    speed: float = 7.3,
    approach_lanes: int = 1,
    scenario_id: Optional[str] = None,
    signal_states: Optional[Dict[int, str]] = None,
    stop_signs: bool = False,
    extra_tracks: Sequence[dict] = (),
) -> Scenario:
    """Single junction with n_arms evenly spaced arms.

    Vehicles approach on the rightmost in-lane of arms 0..vehicles-1, 40 m from the
    junction center. signal_states maps an arm to a head state observed on all its in-lanes
    for every history step.
    """
    thetas = [2 * math.pi * k / n_arms for k in range(n_arms)]
    lanes = _intersections({"j": (0.0, 0.0)}, {"j": thetas}, {}, approach_lanes)
    in_lanes = {k: [lid for lid in lanes if lid.startswith(f"x{k}>j") and "~" not in lid] for k in range(n_arms)}

    tracks = list(extra_tracks)
    for k in range(vehicles):
        lid = sorted(in_lanes[k % n_arms])[0]
        tracks.append(track_along(f"v{k}", lanes[lid]["polyline"], 100.0 - 40.0 + JUNCTION_RADIUS, speed))

    observations = []
    for k, state in sorted((signal_states or {}).items()):
        for lid in sorted(in_lanes[k]):
            stop = lanes[lid]["polyline"][-1]
            for t in range(HISTORY):
                observations.append({"time_index": t, "lane_id": lid, "state": state, "stop_point": stop})

    stop_ids = sorted(lid for ids in in_lanes.values() for lid in ids) if stop_signs else []
    sid = scenario_id or f"junction{n_arms}"
    return scenario(sid, lanes.values(), tracks, None, stop_ids, observations)


def four_way(vehicles: int = 4, signalized: bool = False, stop: bool = False) -> Scenario:
    """Four-arm junction; signalized gives arms 0 and 2 green, arms 1 and 3 red."""
    states = {0: "green", 1: "red", 2: "green", 3: "red"} if signalized else None
    sid = "four_way" + ("_signal" if signalized else "") + ("_stop" if stop else "")
    return junction(4, vehicles=vehicles, scenario_id=sid, signal_states=states, stop_signs=stop)


def two_lane_four_way(signal: str = "red", extra_tracks: Sequence[dict] = ()) -> Scenario:
    """Four arms with two in-lanes each, all heads showing `signal`."""
    return junction(
        4,
        approach_lanes=2,
        scenario_id="four_way_2lane",
        signal_states={k: signal for k in range(4)},
        extra_tracks=extra_tracks,
    )


def split_approach(fragment: float = 6.0, state: str = "red", s_now: float = 42.0, speed: float = 12.0) -> Scenario:
    """Four-arm junction whose arm 0 approach ends in a short lane of length `fragment`.

    The vehicle drives on the upstream part "pre"; the head state is observed on the
    fragment "x0>j" only.
    """
    lanes = _intersections({"j": (0.0, 0.0)}, {"j": [0.5 * math.pi * k for k in range(4)]}, {})
    start, end = lanes["x0>j"]["polyline"][0], lanes["x0>j"]["polyline"][-1]
    cut = (end[0] + fragment, end[1])
    exits = lanes["x0>j"].get("exit_ids", [])
    lanes["pre"] = lane("pre", line(start, cut))
    lanes["x0>j"] = lane("x0>j", line(cut, end), exit_ids=exits)
    link(lanes, "pre", "x0>j")
    observations = [
        {"time_index": t, "lane_id": "x0>j", "state": state, "stop_point": list(end)} for t in range(HISTORY)
    ]
    tracks = [track_along("v", lanes["pre"]["polyline"], s_now, speed)]
    return scenario("split_approach", lanes.values(), tracks, None, (), observations)


def in_lane(scenario_: Scenario, arm: int, index: int = 0) -> List[Tuple[float, float]]:
    """Polyline of in-lane `index` (0 = rightmost) of a single-junction arm."""
    lanes = scenario_.lane_map()
    ids = sorted(lid for lid in lanes if lid.startswith(f"x{arm}>j") and "~" not in lid)
    return [(p.x, p.y) for p in lanes[ids[index]].polyline]


def grid(rows: int = 2, cols: int = 2, spacing: float = 150.0, vehicles_per_stub: int = 1) -> Scenario:
    """rows x cols four-arm junctions joined by single-lane links."""
    centers = {f"g{r}{c}": (c * spacing, r * spacing) for r in range(rows) for c in range(cols)}
    thetas = [0.0, math.pi / 2, math.pi, 3 * math.pi / 2]
    steps = {0: (0, 1), 1: (1, 0), 2: (0, -1), 3: (-1, 0)}
    arms = {j: thetas for j in centers}
    neighbors = {}
    for r in range(rows):
        for c in range(cols):
            for k, (dr, dc) in steps.items():
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    neighbors[(f"g{r}{c}", k)] = f"g{rr}{cc}"
    lanes = _intersections(centers, arms, neighbors)
    tracks = []
    stubs = sorted(lid for lid in lanes if lid.startswith("x") and "~" not in lid)
    for lid in stubs:
        for m in range(vehicles_per_stub):
            tracks.append(track_along(f"v{len(tracks):02d}", lanes[lid]["polyline"], 30.0 + 25.0 * m, 7.3))
    return scenario("grid", lanes.values(), tracks)


def roundabout(radius: float = 20.0, arms: int = 4, delta_deg: float = 15.0) -> Scenario:
    """Single-lane counter-clockwise ring with one exit and one entry per arm."""
    lanes: Dict[str, dict] = {}
    delta = math.radians(delta_deg)
    r_arm = radius + 10.0
    thetas = [2 * math.pi * k / arms for k in range(arms)]
    for k, theta in enumerate(thetas):
        u, nl = _unit(theta), _left(theta)
        lanes[f"in{k}"] = lane(f"in{k}", line((r_arm + 100) * u + 0.5 * W * nl, r_arm * u + 0.5 * W * nl))
        lanes[f"out{k}"] = lane(f"out{k}", line(r_arm * u - 0.5 * W * nl, (r_arm + 100) * u - 0.5 * W * nl))
        x_ang, e_ang = theta - delta, theta + delta
        lanes[f"xe{k}"] = lane(f"xe{k}", arc((0, 0), radius, x_ang, e_ang, step_deg=5.0))
        nxt = thetas[(k + 1) % arms] + (2 * math.pi if k + 1 == arms else 0.0)
        lanes[f"ring{k}"] = lane(f"ring{k}", arc((0, 0), radius, e_ang, nxt - delta, step_deg=5.0))
        e_pt = radius * _unit(e_ang)
        x_pt = radius * _unit(x_ang)
        p_in = np.asarray(lanes[f"in{k}"]["polyline"][-1])
        q_out = np.asarray(lanes[f"out{k}"]["polyline"][0])
        ctrl_in = _control_point(p_in, -u, e_pt, _left(e_ang))
        ctrl_out = _control_point(x_pt, _left(x_ang), q_out, u)
        lanes[f"enter{k}"] = lane(f"enter{k}", bezier(p_in, ctrl_in, e_pt))
        lanes[f"exit{k}"] = lane(f"exit{k}", bezier(x_pt, ctrl_out, q_out))
    for k in range(arms):
        prev = (k - 1) % arms
        link(lanes, f"in{k}", f"enter{k}")
        link(lanes, f"enter{k}", f"ring{k}")
        link(lanes, f"ring{prev}", f"xe{k}")
        link(lanes, f"ring{prev}", f"exit{k}")
        link(lanes, f"xe{k}", f"ring{k}")
        link(lanes, f"exit{k}", f"out{k}")
    tracks = [track_along(f"v{k}", lanes[f"in{k}"]["polyline"], 60.0, 7.3) for k in range(arms)]
    return scenario("roundabout", lanes.values(), tracks)


ALL_NETWORKS = {
    "straight": lambda: straight_road(lanes=2, vehicles=2),
    "chained": chained_road,
    "corridor": corridor,
    "lane_drop": lane_drop,
    "lane_gain": lane_gain,
    "on_ramp": on_ramp,
    "off_ramp": off_ramp,
    "curved": curved_road,
    "junction3": lambda: junction(3, vehicles=3),
    "four_way": four_way,
    "junction5": lambda: junction(5, vehicles=2),
    "junction6": lambda: junction(6, vehicles=2),
    "four_way_2lane": two_lane_four_way,
    "roundabout": roundabout,
    "grid": grid,
}
