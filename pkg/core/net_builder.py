"""Lane-center set → edges, nodes and connections.

Pipeline: truncate lane centers at adjacency boundaries, group parallel fragments into
edges, collapse diverging/merging edges into nodes (union-find), turn the lanes inside
each node into connections, then embed speed, width, stop-sign and signal-head
semantics.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Hashable, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np
import shapely
from shapely.geometry import LineString, Point
from shapely.ops import unary_union
from shapely.strtree import STRtree

from core.errors import ConversionError, RoadsimError
from core.network import Connection, Edge, Movement, NetLane, Network, Node, NodeKind
from core.scenario_model import as_array, cumulative_lengths, wrap_angle
from schemas.config import NetConfig
from schemas.scenario import Adjacency, LaneCenter, LaneType, Point2, Scenario

logger = logging.getLogger(__name__)

MAX_NODE_PATH = 16


# -------------------------------------------------------------------
# Union-find
# -------------------------------------------------------------------
class DisjointSet:
    def __init__(self, items: Iterable[Hashable]):
        self.father = {item: item for item in items}

    def find(self, item: Hashable) -> Hashable:
        root = item
        while self.father[root] != root:
            root = self.father[root]
        while self.father[item] != root:
            self.father[item], item = root, self.father[item]
        return root

    def union(self, a: Hashable, b: Hashable) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.father[rb] = ra

    def groups(self) -> List[List[Hashable]]:
        out: Dict[Hashable, List[Hashable]] = {}
        for item in self.father:
            out.setdefault(self.find(item), []).append(item)
        return list(out.values())


# -------------------------------------------------------------------
# Truncation
# -------------------------------------------------------------------
@dataclass
class _LaneGeom:
    pts: np.ndarray
    cum: np.ndarray

    @classmethod
    def of(cls, lane: LaneCenter) -> "_LaneGeom":
        pts = as_array(lane.polyline)
        return cls(pts, cumulative_lengths(pts))

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.pts) - 2)
        seg = self.cum[i + 1] - self.cum[i]
        frac = (s - self.cum[i]) / seg
        return self.pts[i] + frac * (self.pts[i + 1] - self.pts[i])

    def project_within(self, point: np.ndarray, lo: float, hi: float) -> float:
        """Station of the nearest point restricted to [lo, hi]."""
        cum = self.cum
        idx = np.nonzero((cum[1:] >= lo - 1e-9) & (cum[:-1] <= hi + 1e-9))[0]
        a = self.pts[idx]
        d = self.pts[idx + 1] - a
        seg_sq = np.einsum("ij,ij->i", d, d)
        t = np.clip(np.einsum("ij,ij->i", point - a, d) / seg_sq, 0.0, 1.0)
        dist = np.hypot(*(point - (a + t[:, None] * d)).T)
        k = int(np.argmin(dist))
        s = cum[idx[k]] + t[k] * math.sqrt(seg_sq[k])
        return float(min(max(s, lo), hi))


@dataclass
class _Span:
    lane: str
    lo: float
    hi: float
    other: str
    other_lo: float
    other_hi: float


@dataclass
class _Fragment:
    id: str
    lo: float
    hi: float
    pts: np.ndarray


def _spans(lanes: Sequence[LaneCenter], geom: Dict[str, _LaneGeom], eps: float) -> List[_Span]:
    spans = []
    for lane in lanes:
        for adj in lane.neighbors:
            if adj.neighbor_id not in geom or adj.neighbor_id == lane.id:
                continue
            g, h = geom[lane.id], geom[adj.neighbor_id]
            lo, hi = g.cum[adj.self_start_index], g.cum[adj.self_end_index]
            olo, ohi = h.cum[adj.neighbor_start_index], h.cum[adj.neighbor_end_index]
            if hi - lo < eps or ohi - olo < eps:
                continue
            spans.append(_Span(lane.id, lo, hi, adj.neighbor_id, olo, ohi))
            spans.append(_Span(adj.neighbor_id, olo, ohi, lane.id, lo, hi))
    return spans


def _add_cut(cuts: List[float], s: float, eps: float) -> bool:
    if any(abs(s - c) <= eps for c in cuts):
        return False
    cuts.append(s)
    cuts.sort()
    return True


def _split(lane: LaneCenter, g: _LaneGeom, cuts: List[float], snap: float) -> List[_Fragment]:
    # (station, point, is_cut) over original vertices plus inserted split points
    marks = [[float(g.cum[i]), g.pts[i], False] for i in range(len(g.pts))]
    last = len(g.pts) - 1
    for c in cuts:
        if c <= 0.0 or c >= g.length:
            continue
        i = int(np.argmin(np.abs(g.cum - c)))
        if 0 < i < last and abs(g.cum[i] - c) <= max(snap, 1e-9):
            marks[i][2] = True
        else:
            marks.append([c, g.point_at(c), True])
    marks.sort(key=lambda m: m[0])
    marks[0][2] = marks[-1][2] = True

    fragments: List[_Fragment] = []
    run: List[list] = [marks[0]]
    for m in marks[1:]:
        run.append(m)
        if m[2]:
            fragments.append(
                _Fragment("", run[0][0], run[-1][0], np.array([r[1] for r in run], dtype=float))
            )
            run = [m]
    if len(fragments) == 1:
        fragments[0].id = lane.id
    else:
        for k, frag in enumerate(fragments):
            frag.id = f"{lane.id}#{k}"
    return fragments


def _fragment_at(fragments: List[_Fragment], s: float) -> _Fragment:
    for frag in fragments:
        if s <= frag.hi + 1e-9:
            return frag
    return fragments[-1]


def truncate_lane_centers(
    lanes: Iterable[LaneCenter], config: Optional[NetConfig] = None
) -> List[LaneCenter]:
    """Split lanes until every adjacency span starts and ends at fragment endpoints."""
    cfg = config or NetConfig()
    eps = cfg.eps_split
    lanes = sorted(lanes, key=lambda lane: lane.id)
    geom = {lane.id: _LaneGeom.of(lane) for lane in lanes}
    spans = _spans(lanes, geom, eps)
    cuts = {lane.id: [0.0, geom[lane.id].length] for lane in lanes}

    changed: Set[str] = set()
    for _ in range(cfg.max_truncation_passes):
        changed = set()
        for sp in spans:
            for s in (sp.lo, sp.hi):
                if _add_cut(cuts[sp.lane], s, eps):
                    changed.add(sp.lane)
            src, dst = geom[sp.lane], geom[sp.other]
            for s in list(cuts[sp.lane]):
                if sp.lo - eps <= s <= sp.hi + eps:
                    n = dst.project_within(src.point_at(s), sp.other_lo, sp.other_hi)
                    if _add_cut(cuts[sp.other], n, eps):
                        changed.add(sp.other)
        if not changed:
            break
    else:
        raise ConversionError(
            "truncate", f"no split fixpoint after {cfg.max_truncation_passes} passes", changed
        )

    fragments = {lane.id: _split(lane, geom[lane.id], cuts[lane.id], cfg.snap_tolerance) for lane in lanes}
    if all(len(f) == 1 for f in fragments.values()):
        return list(lanes)

    first = {lid: frags[0].id for lid, frags in fragments.items()}
    last = {lid: frags[-1].id for lid, frags in fragments.items()}
    refined: List[LaneCenter] = []
    for lane in lanes:
        frags = fragments[lane.id]
        g = geom[lane.id]
        for k, frag in enumerate(frags):
            entry = [last[e] for e in lane.entry_ids if e in last] if k == 0 else [frags[k - 1].id]
            exit_ = [first[x] for x in lane.exit_ids if x in first] if k == len(frags) - 1 else [frags[k + 1].id]
            sides = {}
            for side, adjs in (("left", lane.left_neighbors), ("right", lane.right_neighbors)):
                out: Dict[str, Adjacency] = {}
                for adj in adjs:
                    if adj.neighbor_id not in geom:
                        continue
                    h = geom[adj.neighbor_id]
                    lo = max(frag.lo, g.cum[adj.self_start_index])
                    hi = min(frag.hi, g.cum[adj.self_end_index])
                    if hi - lo <= eps:
                        continue
                    n = h.project_within(
                        g.point_at(0.5 * (lo + hi)),
                        h.cum[adj.neighbor_start_index],
                        h.cum[adj.neighbor_end_index],
                    )
                    other = _fragment_at(fragments[adj.neighbor_id], n)
                    out[other.id] = Adjacency(
                        neighbor_id=other.id,
                        self_start_index=0,
                        self_end_index=len(frag.pts) - 1,
                        neighbor_start_index=0,
                        neighbor_end_index=len(other.pts) - 1,
                    )
                sides[side] = [out[key] for key in sorted(out)]
            refined.append(
                LaneCenter(
                    id=frag.id,
                    polyline=[Point2(float(x), float(y)) for x, y in frag.pts],
                    lane_type=lane.lane_type,
                    speed_limit=lane.speed_limit,
                    entry_ids=entry,
                    exit_ids=exit_,
                    left_neighbors=sides["left"],
                    right_neighbors=sides["right"],
                    width=lane.width,
                    source_id=lane.origin_id if len(frags) > 1 else lane.source_id,
                )
            )
    n_split = sum(1 for f in fragments.values() if len(f) > 1)
    logger.debug("truncation split %d of %d lanes into %d fragments", n_split, len(lanes), len(refined))
    return refined


# -------------------------------------------------------------------
# Edge grouping
# -------------------------------------------------------------------
def _check_adjacency_cycles(lanes: Sequence[LaneCenter]) -> None:
    ids = {lane.id for lane in lanes}
    left_of: Dict[str, Set[str]] = {lane.id: set() for lane in lanes}
    for lane in lanes:
        for adj in lane.left_neighbors:
            if adj.neighbor_id in ids:
                left_of[lane.id].add(adj.neighbor_id)
        for adj in lane.right_neighbors:
            if adj.neighbor_id in ids:
                left_of[adj.neighbor_id].add(lane.id)

    state: Dict[str, int] = {}
    for root in sorted(left_of):
        if state.get(root):
            continue
        stack = [(root, iter(sorted(left_of[root])))]
        trail = [root]
        state[root] = 1
        while stack:
            node, children = stack[-1]
            nxt = next(children, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                trail.pop()
            elif state.get(nxt) == 1:
                cycle = trail[trail.index(nxt):]
                raise ConversionError("group", "lane adjacency cycle on one side", cycle)
            elif not state.get(nxt):
                state[nxt] = 1
                trail.append(nxt)
                stack.append((nxt, iter(sorted(left_of[nxt]))))


def _order_right_to_left(group: List[LaneCenter]) -> List[LaneCenter]:
    if len(group) == 1:
        return group
    ref = min(group, key=lambda lane: lane.id)
    g = _LaneGeom.of(ref)
    mid = g.point_at(0.5 * g.length)
    s = 0.5 * g.length
    i = min(max(int(np.searchsorted(g.cum, s, side="right")) - 1, 0), len(g.pts) - 2)
    d = g.pts[i + 1] - g.pts[i]
    d = d / np.hypot(*d)

    def lateral(lane: LaneCenter) -> float:
        lg = _LaneGeom.of(lane)
        p = lg.point_at(0.5 * lg.length) - mid
        return round(float(d[0] * p[1] - d[1] * p[0]), 6)

    return sorted(group, key=lambda lane: (lateral(lane), lane.id))


def group_into_edges(
    refined: Iterable[LaneCenter], config: Optional[NetConfig] = None
) -> List[List[LaneCenter]]:
    """Partition lanes into adjacency-connected groups, each ordered right to left."""
    lanes = sorted(refined, key=lambda lane: lane.id)
    by_id = {lane.id: lane for lane in lanes}
    _check_adjacency_cycles(lanes)
    dsu = DisjointSet(by_id)
    for lane in lanes:
        for adj in lane.neighbors:
            if adj.neighbor_id in by_id:
                dsu.union(lane.id, adj.neighbor_id)
    groups = [_order_right_to_left([by_id[i] for i in members]) for members in dsu.groups()]
    groups.sort(key=lambda grp: min(lane.id for lane in grp))
    return groups


def make_edges(partition: List[List[LaneCenter]], config: Optional[NetConfig] = None) -> Tuple[List[Edge], List[str]]:
    cfg = config or NetConfig()
    edges: List[Edge] = []
    warnings: List[str] = []
    for k, group in enumerate(partition):
        eid = f"e{k}"
        lanes = [
            NetLane(
                id=f"{eid}_{i}",
                index=i,
                lane_center_id=lane.id,
                source_lane_ids=[lane.origin_id],
                shape=as_array(lane.polyline).copy(),
                width=lane.width or cfg.default_lane_width,
                speed_limit=float(lane.speed_limit or cfg.default_speed_limit),
                lane_type=lane.lane_type,
                posted_speed_limit=float(lane.speed_limit),
            )
            for i, lane in enumerate(group)
        ]
        lengths = [lane.length for lane in lanes]
        if max(lengths) - min(lengths) > cfg.length_tolerance * max(lengths):
            warnings.append(f"edge {eid}: lane lengths differ ({min(lengths):.1f}..{max(lengths):.1f} m)")
        for a, b in zip(lanes, lanes[1:]):
            ma = a.shape[len(a.shape) // 2]
            mb = b.shape[len(b.shape) // 2]
            spacing = float(np.hypot(*(ma - mb)))
            if spacing > 0.5 * (a.width + b.width) + cfg.parallel_tolerance:
                warnings.append(f"edge {eid}: lanes {a.index}/{b.index} are {spacing:.1f} m apart")
        edges.append(Edge(eid, lanes))
    return edges, warnings


# -------------------------------------------------------------------
# Node identification
# -------------------------------------------------------------------
def lanes_match_pattern(a: Sequence, b: Sequence, tol: float) -> bool:
    """Diverge (shared start, distinct ends) or merge (distinct starts, shared end)."""
    pa, pb = as_array(a), as_array(b)
    ds = float(np.hypot(*(pa[0] - pb[0])))
    de = float(np.hypot(*(pa[-1] - pb[-1])))
    return (ds <= tol < de) or (de <= tol < ds)


def _pattern_pairs(shapes: List[np.ndarray], tol: float) -> List[Tuple[int, int]]:
    n = len(shapes)
    if n < 2:
        return []
    starts = np.array([s[0] for s in shapes])
    ends = np.array([s[-1] for s in shapes])
    ds = np.hypot(*(starts[:, None, :] - starts[None, :, :]).transpose(2, 0, 1))
    de = np.hypot(*(ends[:, None, :] - ends[None, :, :]).transpose(2, 0, 1))
    hit = ((ds <= tol) & (de > tol)) | ((de <= tol) & (ds > tol))
    iu, ju = np.triu_indices(n, 1)
    mask = hit[iu, ju]
    return list(zip(iu[mask].tolist(), ju[mask].tolist()))


def _successors(lanes: Dict[str, LaneCenter], cfg: NetConfig) -> Dict[str, List[str]]:
    """Lane successor map; geometry wins over declared exit ids."""
    ids = sorted(lanes)
    shapes = [as_array(lanes[i].polyline) for i in ids]
    ends = np.array([s[-1] for s in shapes])
    starts = np.array([s[0] for s in shapes])
    end_h = np.array([math.atan2(*(s[-1] - s[-2])[::-1]) for s in shapes])
    start_h = np.array([math.atan2(*(s[1] - s[0])[::-1]) for s in shapes])
    gap = np.hypot(*(ends[:, None, :] - starts[None, :, :]).transpose(2, 0, 1))
    turn = np.abs((start_h[None, :] - end_h[:, None] + math.pi) % (2 * math.pi) - math.pi)
    near = (gap <= cfg.delta_node) & (turn < math.pi / 2)
    np.fill_diagonal(near, False)
    pos = {lid: k for k, lid in enumerate(ids)}

    succ: Dict[str, List[str]] = {}
    for k, lid in enumerate(ids):
        out = []
        for x in lanes[lid].exit_ids:
            if x not in pos:
                continue
            if gap[k, pos[x]] > cfg.coverage_tolerance:
                logger.info("exit link %s -> %s dropped: %.2f m endpoint gap", lid, x, gap[k, pos[x]])
                continue
            out.append(x)
        for j in np.nonzero(near[k])[0]:
            if ids[j] not in out:
                logger.info("exit link %s -> %s added from geometry", lid, ids[j])
                out.append(ids[j])
        succ[lid] = sorted(out)
    return succ


def _join_shapes(parts: List[np.ndarray]) -> np.ndarray:
    pts = [parts[0]]
    for part in parts[1:]:
        if np.hypot(*(pts[-1][-1] - part[0])) < 1e-9:
            part = part[1:]
        if len(part):
            pts.append(part)
    return np.concatenate(pts)


def classify_movement(delta: float, config: Optional[NetConfig] = None) -> Movement:
    """Movement class for a heading change in radians (positive = counter-clockwise)."""
    cfg = config or NetConfig()
    d = wrap_angle(delta)
    a = abs(math.degrees(d))
    if a < cfg.straight_deg:
        return Movement.straight
    turn = Movement.left if d > 0 else Movement.right
    if a <= cfg.turn_deg:
        return turn
    if a >= cfg.uturn_deg:
        return Movement.uturn
    # between the two thresholds: nearer one wins
    return turn if a < 0.5 * (cfg.turn_deg + cfg.uturn_deg) else Movement.uturn


class NodeIdentification(NamedTuple):
    nodes: List[Node]
    edges: List[Edge]
    connections: List[Connection]
    warnings: List[str]


def identify_nodes(
    edges: List[Edge],
    lanes: Dict[str, LaneCenter],
    config: Optional[NetConfig] = None,
) -> NodeIdentification:
    cfg = config or NetConfig()
    warnings: List[str] = []
    order = {e.id: k for k, e in enumerate(edges)}
    by_edge = {e.id: e for e in edges}
    all_lanes = [(e.id, lane) for e in edges for lane in e.lanes]

    # group edges whose lanes diverge or merge
    dsu = DisjointSet(order)
    flagged: Set[str] = set()
    for i, j in _pattern_pairs([lane.shape for _, lane in all_lanes], cfg.delta_node):
        ei, ej = all_lanes[i][0], all_lanes[j][0]
        flagged.update((ei, ej))
        dsu.union(ei, ej)
    groups = [sorted(g, key=order.get) for g in dsu.groups() if g[0] in flagged]
    groups.sort(key=lambda g: order[g[0]])

    nodes: Dict[str, Node] = {}
    member_node: Dict[str, str] = {}
    for k, group in enumerate(groups):
        nid = f"n{k}"
        member_lanes = [lane for eid in group for lane in by_edge[eid].lanes]
        for lane in member_lanes:
            member_node[lane.lane_center_id] = nid
        union = unary_union(
            [LineString(lane.shape).buffer(0.5 * lane.width, cap_style="flat") for lane in member_lanes]
        )
        if union.geom_type == "MultiPolygon":
            warnings.append(f"node {nid}: disjoint member shapes merged into one junction")
            union = union.convex_hull
        centroid = union.centroid
        nodes[nid] = Node(
            id=nid,
            kind=NodeKind.junction,
            shape=np.asarray(union.exterior.coords, dtype=float),
            x=float(centroid.x),
            y=float(centroid.y),
            edge_ids=list(group),
            lane_ids=sorted(lane.lane_center_id for lane in member_lanes),
        )

    remaining = [e for e in edges if e.id not in flagged]
    rem_lane = {lane.lane_center_id: (e.id, lane.index) for e in remaining for lane in e.lanes}
    succ = _successors(lanes, cfg)

    # paths through heuristic nodes: edge lane -> member lanes -> edge lane
    through: List[Tuple[str, Tuple[str, int], Tuple[str, int], List[str]]] = []
    used: Set[str] = set()
    for edge in remaining:
        for lane in edge.lanes:
            for nxt in succ.get(lane.lane_center_id, []):
                nid = member_node.get(nxt)
                if nid is None:
                    continue
                edge.to_node = edge.to_node or nid
                stack = [[nxt]]
                while stack:
                    path = stack.pop()
                    for s in reversed(succ.get(path[-1], [])):
                        if s in rem_lane:
                            through.append((nid, (edge.id, lane.index), rem_lane[s], path))
                            used.update(path)
                            by_edge[rem_lane[s][0]].from_node = by_edge[rem_lane[s][0]].from_node or nid
                        elif member_node.get(s) == nid and s not in path and len(path) < MAX_NODE_PATH:
                            stack.append(path + [s])
    for nid, node in nodes.items():
        skipped = [lid for lid in node.lane_ids if lid not in used]
        if skipped:
            warnings.append(f"node {nid}: lanes without an edge-to-edge path skipped: {skipped}")

    # degenerate endpoint nodes close every remaining port
    ports = DisjointSet([(e.id, side) for e in remaining for side in ("from", "to")])
    plain: List[Tuple[Tuple[str, int], Tuple[str, int]]] = []
    for edge in remaining:
        for lane in edge.lanes:
            for nxt in succ.get(lane.lane_center_id, []):
                if nxt in rem_lane:
                    ports.union((edge.id, "to"), (rem_lane[nxt][0], "from"))
                    plain.append(((edge.id, lane.index), rem_lane[nxt]))

    port_groups = sorted(
        (sorted(g, key=lambda p: (order[p[0]], p[1])) for g in ports.groups()),
        key=lambda g: (order[g[0][0]], g[0][1]),
    )
    next_id = len(nodes)
    for group in port_groups:
        assigned = sorted(
            {
                getattr(by_edge[eid], "to_node" if side == "to" else "from_node")
                for eid, side in group
            }
            - {None},
            key=lambda n: int(n[1:]),
        )
        if len(assigned) > 1:
            warnings.append(f"ports {group} touch several nodes {assigned}; using {assigned[0]}")
        if assigned:
            nid = assigned[0]
        else:
            nid = f"n{next_id}"
            next_id += 1
            pts = np.array(
                [
                    lane.end if side == "to" else lane.start
                    for eid, side in group
                    for lane in by_edge[eid].lanes
                ]
            )
            x, y = pts.mean(axis=0)
            nodes[nid] = Node(
                id=nid, kind=NodeKind.endpoint, shape=np.array([[x, y]]), x=float(x), y=float(y)
            )
        for eid, side in group:
            if side == "to":
                by_edge[eid].to_node = nid
            else:
                by_edge[eid].from_node = nid

    # connections, ordered deterministically
    specs = []
    for nid, frm, to, path in through:
        shape = _join_shapes([as_array(lanes[lid].polyline) for lid in path])
        specs.append((nid, frm, to, path, shape))
    for frm, to in plain:
        nid = by_edge[frm[0]].to_node
        a = by_edge[frm[0]].lanes[frm[1]].end
        b = by_edge[to[0]].lanes[to[1]].start
        specs.append((nid, frm, to, [], np.array([a, b], dtype=float)))
    specs.sort(key=lambda s: (int(s[0][1:]), order[s[1][0]], s[1][1], order[s[2][0]], s[2][1], s[3]))

    connections: List[Connection] = []
    for k, (nid, frm, to, path, shape) in enumerate(specs):
        from_lane = by_edge[frm[0]].lanes[frm[1]]
        to_lane = by_edge[to[0]].lanes[to[1]]
        if np.hypot(*(shape[0] - from_lane.end)) > cfg.snap_tolerance:
            shape = np.vstack([from_lane.end, shape])
        if np.hypot(*(shape[-1] - to_lane.start)) > cfg.snap_tolerance:
            shape = np.vstack([shape, to_lane.start])
        conn = Connection(
            id=f"c{k}",
            from_edge=frm[0],
            from_lane_index=frm[1],
            to_edge=to[0],
            to_lane_index=to[1],
            via_node=nid,
            shape=shape,
            lane_center_ids=list(path),
            source_lane_ids=sorted({lanes[lid].origin_id for lid in path}),
        )
        conn.movement = classify_movement(to_lane.start_heading - from_lane.end_heading, cfg)
        connections.append(conn)
        nodes[nid].connection_ids.append(conn.id)

    for edge in remaining:
        nodes[edge.to_node].incoming.append(edge.id)
        nodes[edge.from_node].outgoing.append(edge.id)
    conn_by_id = {c.id: c for c in connections}
    for node in nodes.values():
        if node.kind == NodeKind.endpoint:
            continue
        moves = {conn_by_id[c].movement for c in node.connection_ids}
        if (len(node.incoming) >= 2 and len(node.outgoing) >= 2) or moves - {Movement.straight}:
            node.kind = NodeKind.junction
        elif len(node.incoming) == 1 and len(node.outgoing) == 1:
            node.kind = NodeKind.lane_count_change
        else:
            node.kind = NodeKind.merge_split

    ordered_nodes = sorted(nodes.values(), key=lambda n: int(n.id[1:]))
    return NodeIdentification(ordered_nodes, remaining, connections, warnings)


# -------------------------------------------------------------------
# Semantics
# -------------------------------------------------------------------
def _first_crossing(a: LineString, b: LineString) -> Optional[Tuple[float, float]]:
    inter = a.intersection(b)
    if inter.is_empty:
        return None
    coords = shapely.get_coordinates(inter)
    best = min(coords.tolist(), key=lambda c: a.project(Point(c)))
    p = Point(best)
    return float(a.project(p)), float(b.project(p))


def embed_semantics(network: Network, scenario: Scenario, config: Optional[NetConfig] = None) -> Network:
    cfg = config or NetConfig()
    stop_set = set(scenario.stop_sign_lane_ids)

    for conn in network.connections.values():
        from_lane = network.lane(conn.from_edge, conn.from_lane_index)
        sources = set(conn.source_lane_ids) | set(from_lane.source_lane_ids)
        conn.stop_controlled = bool(sources & stop_set)

    for node in network.nodes.values():
        node.stop_controlled_connection_ids = [
            cid for cid in node.connection_ids if network.connections[cid].stop_controlled
        ]

    dropped = []
    for lane_id in sorted({obs.lane_id for obs in scenario.signal_observations}):
        hits = []
        for conn in network.connections.values():
            from_lane = network.lane(conn.from_edge, conn.from_lane_index)
            if lane_id in conn.source_lane_ids or lane_id in from_lane.source_lane_ids:
                conn.signal_lane_ids.append(lane_id)
                hits.append(conn.id)
        if not hits:
            dropped.append(lane_id)
    if dropped:
        network.warnings.append(f"signal heads on lanes without a connection dropped: {dropped}")

    for edge in network.edges.values():
        base = min(edge.num_lanes, 3) + (2 if any(l.lane_type == LaneType.freeway for l in edge.lanes) else 0)
        out = network.outgoing(edge.id)
        if out and all(c.stop_controlled for c in out):
            base = 1
        edge.priority = base

    for node in network.nodes.values():
        conns = [network.connections[c] for c in node.connection_ids]
        lines = {c.id: LineString(c.shape) for c in conns if c.length > 0}
        for i, a in enumerate(conns):
            for b in conns[i + 1:]:
                if a.from_edge == b.from_edge:
                    continue
                if a.to_edge == b.to_edge and a.to_lane_index == b.to_lane_index:
                    a.merge_foes.append(b.id)
                    b.merge_foes.append(a.id)
                    continue
                if a.id not in lines or b.id not in lines:
                    continue
                hit = _first_crossing(lines[a.id], lines[b.id])
                if hit is not None:
                    a.crossing_foes[b.id] = hit
                    b.crossing_foes[a.id] = (hit[1], hit[0])
    return network


# -------------------------------------------------------------------
# Checks
# -------------------------------------------------------------------
def coverage_ratio(network: Network, scenario: Scenario, tolerance: Optional[float] = None) -> float:
    """Share of drivable lane-center vertices within tolerance of the network."""
    tol = NetConfig().coverage_tolerance if tolerance is None else tolerance
    pts = [
        p
        for lane in scenario.lane_centers
        if lane.lane_type != LaneType.bike_lane
        for p in lane.polyline
    ]
    if not pts:
        return 1.0
    lines = [LineString(lane.shape) for _, lane in network.iter_lanes()]
    lines += [LineString(c.shape) for c in network.connections.values() if c.length > 0]
    if not lines:
        return 0.0
    geoms = np.array(lines, dtype=object)
    points = shapely.points(np.asarray(pts, dtype=float))
    nearest = STRtree(geoms).nearest(points)
    dist = shapely.distance(points, geoms[nearest])
    return float(np.mean(dist <= tol + 1e-9))


def validate_network(network: Network) -> None:
    bad: List[str] = []
    for edge in network.edges.values():
        if not edge.lanes:
            bad.append(f"edge {edge.id} has no lanes")
        for ref in (edge.from_node, edge.to_node):
            if ref not in network.nodes:
                bad.append(f"edge {edge.id} references node {ref}")
    for conn in network.connections.values():
        for eid, idx in ((conn.from_edge, conn.from_lane_index), (conn.to_edge, conn.to_lane_index)):
            if eid not in network.edges or not 0 <= idx < network.edges[eid].num_lanes:
                bad.append(f"connection {conn.id} references lane {eid}:{idx}")
        node = network.nodes.get(conn.via_node)
        if node is None or conn.id not in node.connection_ids:
            bad.append(f"connection {conn.id} not contained in node {conn.via_node}")
    if bad:
        raise ConversionError("validate", "; ".join(bad))


# -------------------------------------------------------------------
# Composition
# -------------------------------------------------------------------
def _stage(name: str, fn, *args):
    try:
        return fn(*args)
    except ConversionError:
        raise
    except RoadsimError as e:
        raise ConversionError(name, str(e)) from e


def build_network(scenario: Scenario, config: Optional[NetConfig] = None) -> Network:
    cfg = config or NetConfig()
    refined = _stage("truncate", truncate_lane_centers, scenario.lane_centers, cfg)
    partition = _stage("group", group_into_edges, refined, cfg)
    edges, warnings = _stage("group", make_edges, partition, cfg)
    lanes = {lane.id: lane for lane in refined}
    found = _stage("identify", identify_nodes, edges, lanes, cfg)

    network = Network(
        scenario_id=scenario.id,
        edges={e.id: e for e in found.edges},
        nodes={n.id: n for n in found.nodes},
        connections={c.id: c for c in found.connections},
        lane_centers=lanes,
        warnings=warnings + found.warnings,
    )
    _stage("embed", embed_semantics, network, scenario, cfg)
    validate_network(network)
    for message in network.warnings:
        logger.warning("%s: %s", scenario.id, message)
    logger.info("%s: network %s", scenario.id, network.summary())
    return network
