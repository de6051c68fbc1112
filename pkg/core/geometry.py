"""Vectorized planar geometry: point-segment distances and oriented boxes.

Functions broadcast over leading dimensions; the last axis holds (x, y).
"""
from __future__ import annotations

from typing import Iterable, Tuple

import numpy as np


def segments_of(polylines: Iterable) -> Tuple[np.ndarray, np.ndarray]:
    """Start and end points of every segment of every polyline."""
    starts, ends = [], []
    for line in polylines:
        pts = np.asarray(line, dtype=float)
        if len(pts) < 2:
            continue
        starts.append(pts[:-1])
        ends.append(pts[1:])
    if not starts:
        empty = np.zeros((0, 2))
        return empty, empty
    return np.concatenate(starts), np.concatenate(ends)


def _closest_on_segments(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    seg_sq = np.sum(d * d, axis=-1)
    t = np.sum((p - a) * d, axis=-1) / np.where(seg_sq > 0, seg_sq, 1.0)
    t = np.clip(t, 0.0, 1.0)
    return a + t[..., None] * d


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    q = _closest_on_segments(p, a, b)
    return np.hypot(*np.moveaxis(p - q, -1, 0))


def nearest_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n,) distance from each point to the nearest of the m segments."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(a) == 0:
        return np.full(len(points), np.inf)
    dist = point_segment_distance(points[:, None, :], a[None, :, :], b[None, :, :])
    return dist.min(axis=1)


def _left_normals(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    n = np.stack([-d[:, 1], d[:, 0]], axis=-1)
    norm = np.hypot(n[:, 0], n[:, 1])
    return n / np.where(norm > 0, norm, 1.0)[:, None]


def signed_edge_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance to the nearest segment, positive on its left side, negative on its right.

    When the nearest point is a vertex shared by two consecutive segments, the side is
    taken from the sum of both left normals.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(a) == 0:
        return np.full(len(points), np.inf)
    p = points[:, None, :]
    dist = point_segment_distance(p, a[None], b[None])
    k = np.argmin(dist, axis=1)
    rows = np.arange(len(points))
    nearest = dist[rows, k]

    d = b[k] - a[k]
    seg_sq = np.sum(d * d, axis=-1)
    t = np.sum((points - a[k]) * d, axis=-1) / np.where(seg_sq > 0, seg_sq, 1.0)
    normals = _left_normals(a, b)
    normal = normals[k].copy()

    # segment continuing from b[k] / leading into a[k]; closed rings wrap around
    follows = np.all(a[None, :, :] == b[k][:, None, :], axis=-1)
    leads = np.all(b[None, :, :] == a[k][:, None, :], axis=-1)
    at_end = (t >= 1.0) & follows.any(axis=1)
    at_start = (t <= 0.0) & leads.any(axis=1)
    normal[at_end] += normals[np.argmax(follows[at_end], axis=1)]
    normal[at_start] += normals[np.argmax(leads[at_start], axis=1)]

    closest = a[k] + np.clip(t, 0.0, 1.0)[:, None] * d
    side = np.sum((points - closest) * normal, axis=-1)
    return np.where(side >= 0.0, nearest, -nearest)


# -------------------------------------------------------------------
# Oriented boxes
# -------------------------------------------------------------------
def box_axes(heading: np.ndarray) -> np.ndarray:
    """(..., 2, 2): unit longitudinal and lateral axes."""
    c, s = np.cos(heading), np.sin(heading)
    return np.stack([np.stack([c, s], axis=-1), np.stack([-s, c], axis=-1)], axis=-2)


def box_corners(x, y, heading, length, width) -> np.ndarray:
    """(..., 4, 2) corners in counter-clockwise order starting front-left."""
    x, y, heading, length, width = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, y, heading, length, width))
    )
    axes = box_axes(heading)
    lon = axes[..., 0, :] * (0.5 * length)[..., None]
    lat = axes[..., 1, :] * (0.5 * width)[..., None]
    center = np.stack([x, y], axis=-1)
    return np.stack(
        [center + lon + lat, center - lon + lat, center - lon - lat, center + lon - lat], axis=-2
    )


def _projections(corners: np.ndarray, axes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    proj = np.einsum("...cd,...ad->...ac", corners, axes)
    return proj.min(axis=-1), proj.max(axis=-1)


def sat_overlap(ca: np.ndarray, ha: np.ndarray, cb: np.ndarray, hb: np.ndarray) -> np.ndarray:
    """Separating-axis penetration depth; > 0 means the boxes overlap."""
    axes = np.concatenate([box_axes(ha), box_axes(hb)], axis=-2)
    min_a, max_a = _projections(ca, axes)
    min_b, max_b = _projections(cb, axes)
    depth = np.minimum(max_a - min_b, max_b - min_a)
    return depth.min(axis=-1)


def boxes_overlap(ca: np.ndarray, ha: np.ndarray, cb: np.ndarray, hb: np.ndarray) -> np.ndarray:
    return sat_overlap(ca, ha, cb, hb) > 0.0


def box_distance(ca: np.ndarray, ha: np.ndarray, cb: np.ndarray, hb: np.ndarray) -> np.ndarray:
    """Signed box-to-box distance: gap when apart, minus penetration depth when overlapping."""
    depth = sat_overlap(ca, ha, cb, hb)
    # apart: the minimum is attained between a corner of one box and an edge of the other
    ea = np.roll(ca, -1, axis=-2)
    eb = np.roll(cb, -1, axis=-2)
    d_ab = point_segment_distance(ca[..., :, None, :], cb[..., None, :, :], eb[..., None, :, :])
    d_ba = point_segment_distance(cb[..., :, None, :], ca[..., None, :, :], ea[..., None, :, :])
    gap = np.minimum(d_ab.min(axis=(-1, -2)), d_ba.min(axis=(-1, -2)))
    return np.where(depth > 0.0, -depth, gap)
