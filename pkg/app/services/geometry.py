# app/services/geometry.py
import math
from typing import List, Optional

import numpy as np

from app.exceptions import DegenerateCluster
from app.models.geometry import Box3D, Pose

# L-shape heading sweep: 1 degree steps over [0, pi/2), then 0.05 degree steps within 1 degree of the best
LSHAPE_ANGLES = np.deg2rad(np.arange(90))
LSHAPE_FINE_OFFSETS = np.deg2rad(np.arange(-20, 21) * 0.05)
# Distances below this count as "on the edge" in the closeness criterion
CLOSENESS_MIN_DIST = 0.01
SCORE_TIE_RTOL = 1e-9
# A rectangle side is placed on an edge made of the points within this band of the extreme
EDGE_BAND = 0.1
EDGE_BAND_FRACTION = 0.25
# ...when they are at least this many and spread over this share of the side
EDGE_MIN_POINTS = 3
EDGE_MIN_SPAN = 0.5
MIN_EXTENT = 1e-3
COLLINEAR_TOL = 1e-9
# Vertices closer than this to a clipping edge count as inside it (meters)
CLIP_TOL = 1e-9


def transform_points(pose: Pose, points: np.ndarray) -> np.ndarray:
    """Apply rotation·p + translation to xyz; any trailing columns (intensity) are kept"""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        return pts.copy()
    out = pts.copy()
    out[:, :3] = pts[:, :3] @ pose.rotation.T + pose.translation
    return out


def polygon_clip(subject: np.ndarray, clip: np.ndarray) -> Optional[np.ndarray]:
    """
    Sutherland-Hodgman clipping of `subject` against the convex polygon `clip`

    Both polygons are (M, 2) arrays in counter-clockwise order. Crossing points
    are interpolated along the subject edge, so nearly collinear edges cannot
    produce points off the segment.
    Returns the intersection polygon, or None when it is empty.
    """
    output = np.asarray(subject, dtype=np.float64)
    for i in range(len(clip)):
        if len(output) == 0:
            return None
        start, end = clip[i - 1], clip[i]
        edge = end - start
        # Signed distance to the edge line, positive on the inner (left) side
        side = (edge[0] * (output[:, 1] - start[1]) - edge[1] * (output[:, 0] - start[0])) / np.hypot(*edge)
        inside = side >= -CLIP_TOL

        kept = []
        for j in range(len(output)):
            prev = j - 1
            if inside[j] != inside[prev]:
                t = np.clip(side[prev] / (side[prev] - side[j]), 0.0, 1.0)
                kept.append(output[prev] + t * (output[j] - output[prev]))
            if inside[j]:
                kept.append(output[j])
        output = np.asarray(kept).reshape(-1, 2)
    if len(output) < 3:
        return None
    return output


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace formula"""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1))))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    reach = math.hypot(a.l, a.w) / 2 + math.hypot(b.l, b.w) / 2
    if math.hypot(a.x - b.x, a.y - b.y) > reach:
        return 0.0
    inter = polygon_clip(a.bev().corners(), b.bev().corners())
    if inter is None:
        return 0.0
    return polygon_area(inter)


def _ratio(inter: float, union: float) -> float:
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Rotated-rectangle IoU in the BEV plane"""
    inter = bev_intersection_area(a, b)
    return _ratio(inter, a.l * a.w + b.l * b.w - inter)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volume IoU: BEV intersection times vertical overlap"""
    overlap_z = min(a.z_max, b.z_max) - max(a.z_min, b.z_min)
    if overlap_z <= 0:
        return 0.0
    inter = bev_intersection_area(a, b) * overlap_z
    return _ratio(inter, a.volume + b.volume - inter)


def pairwise_bev_iou(boxes_a: List[Box3D], boxes_b: List[Box3D]) -> np.ndarray:
    ious = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            ious[i, j] = bev_iou(a, b)
    return ious


def angle_diff(a: float, b: float, period: float = 2 * math.pi) -> float:
    """Smallest absolute difference between two angles modulo `period`"""
    d = math.fmod(a - b, period)
    if d < 0:
        d += period
    return min(d, period - d)


def _closeness_sweep(centered: np.ndarray, angles: np.ndarray) -> float:
    """Best heading among `angles`; exact score ties go to the smallest rectangle"""
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    # (N, A) projections on the two candidate axes
    c1 = centered[:, :1] * cos_a + centered[:, 1:2] * sin_a
    c2 = -centered[:, :1] * sin_a + centered[:, 1:2] * cos_a
    d1 = np.minimum(c1.max(axis=0) - c1, c1 - c1.min(axis=0))
    d2 = np.minimum(c2.max(axis=0) - c2, c2 - c2.min(axis=0))
    scores = (1.0 / np.maximum(np.minimum(d1, d2), CLOSENESS_MIN_DIST)).sum(axis=0)

    areas = (c1.max(axis=0) - c1.min(axis=0)) * (c2.max(axis=0) - c2.min(axis=0))
    tied = scores >= scores.max() * (1.0 - SCORE_TIE_RTOL)
    return float(angles[int(np.argmin(np.where(tied, areas, np.inf)))])


def _side(coord: np.ndarray, along: np.ndarray, upper: bool) -> float:
    """
    Position of one rectangle side on the axis `coord` is measured along

    A side backed by an edge sits at the median of the edge points, which
    cancels sensor noise. A side no edge backs (the far sides of an L) stays at
    the extreme point.
    """
    extreme = float(coord.max() if upper else coord.min())
    band = min(EDGE_BAND, EDGE_BAND_FRACTION * float(np.ptp(coord)))
    on_edge = coord >= extreme - band if upper else coord <= extreme + band
    if np.count_nonzero(on_edge) >= EDGE_MIN_POINTS and np.ptp(along[on_edge]) >= EDGE_MIN_SPAN * np.ptp(along):
        return float(np.median(coord[on_edge]))
    return extreme


def fit_lshape_box(points: np.ndarray) -> Box3D:
    """
    Fit an oriented box to a point cluster by the closeness criterion

    Candidate headings sweep [0, pi/2) in 1 degree steps, then 0.05 degree
    steps around the best one. For each heading the points are projected on
    the two rectangle axes and every point scores
    1 / max(distance to its nearest rectangle edge, 1 cm); the heading with the
    highest total wins. Along the winning axes each side sits on the median of
    the edge points that back it, or on the extreme point when no edge does.
    Noise-free edges therefore end up inside the box; noisy ones straddle its
    sides. Heading sign is unobservable from a cluster, so theta is reported
    in [0, pi/2).

    Args:
        points: (N, >=3) array, world frame

    Returns:
        The fitted Box3D

    Raises:
        DegenerateCluster: fewer than 3 points, or all collinear in BEV
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 3:
        raise DegenerateCluster(f"L-shape fit needs at least 3 points, got {len(pts)}")

    xy = pts[:, :2]
    origin = xy.mean(axis=0)
    centered = xy - origin
    singular = np.linalg.svd(centered, compute_uv=False)
    if singular[0] == 0 or singular[1] / singular[0] < COLLINEAR_TOL:
        raise DegenerateCluster("cluster points are collinear in BEV")

    coarse = _closeness_sweep(centered, LSHAPE_ANGLES)
    theta = _closeness_sweep(centered, coarse + LSHAPE_FINE_OFFSETS) % (math.pi / 2)

    c, s = math.cos(theta), math.sin(theta)
    a1 = centered[:, 0] * c + centered[:, 1] * s
    a2 = -centered[:, 0] * s + centered[:, 1] * c
    lo1, hi1 = _side(a1, a2, upper=False), _side(a1, a2, upper=True)
    lo2, hi2 = _side(a2, a1, upper=False), _side(a2, a1, upper=True)
    mid1, mid2 = (lo1 + hi1) / 2, (lo2 + hi2) / 2

    z_min, z_max = float(pts[:, 2].min()), float(pts[:, 2].max())
    return Box3D(
        x=float(origin[0] + mid1 * c - mid2 * s),
        y=float(origin[1] + mid1 * s + mid2 * c),
        z=(z_min + z_max) / 2,
        l=max(hi1 - lo1, MIN_EXTENT),
        w=max(hi2 - lo2, MIN_EXTENT),
        h=max(z_max - z_min, MIN_EXTENT),
        theta=theta,
    )
