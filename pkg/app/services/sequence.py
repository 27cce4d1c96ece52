# app/services/sequence.py
import concurrent.futures
import logging
import math
from typing import List, Sequence

import numpy as np

from app.config import GroundConfig
from app.exceptions import ConfigError, FrameNotFound
from app.models.geometry import Pose
from app.models.labels import ClickAnnotation
from app.models.scene import (
    FrameWindow,
    MotionState,
    NeighborhoodSeries,
    PersistenceProfile,
    PointCloudFrame,
)
from app.services.geometry import transform_points

logger = logging.getLogger(__name__)

# Plane hypotheses scored per chunk, bounded by points * hypotheses
RANSAC_CHUNK_ELEMENTS = 2_000_000


def to_world(frame: PointCloudFrame) -> PointCloudFrame:
    """Express a frame's points in the world frame (pose becomes identity)"""
    if frame.pose.is_identity():
        return frame
    return frame.model_copy(
        update={"points": transform_points(frame.pose, frame.points), "pose": Pose.identity()}
    )


def build_window(sequence: Sequence[PointCloudFrame], frame_id: int, k: int) -> FrameWindow:
    """
    Frames frame_id-k .. frame_id+k in world coordinates

    At the ends of the sequence the window is truncated and T shrinks to the
    number of frames actually available.
    """
    ids = [f.frame_id for f in sequence]
    try:
        center = ids.index(frame_id)
    except ValueError:
        raise FrameNotFound(frame_id) from None

    lo, hi = max(0, center - k), min(len(sequence), center + k + 1)
    frames = [to_world(f) for f in sequence[lo:hi]]
    return FrameWindow(frames=frames, k=k, center_frame_id=frame_id)


def _fit_plane(points: np.ndarray):
    """Least-squares plane through points; returns (unit normal, offset)"""
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[-1]
    return normal, -float(normal @ centroid)


def _ransac_plane(xyz: np.ndarray, cfg: GroundConfig, rng: np.random.Generator):
    n = len(xyz)
    idx = rng.integers(0, n, size=(cfg.iterations, 3))
    p1, p2, p3 = xyz[idx[:, 0]], xyz[idx[:, 1]], xyz[idx[:, 2]]
    normals = np.cross(p2 - p1, p3 - p1)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > 1e-12
    normals[valid] /= norms[valid, None]

    min_cos = math.cos(math.radians(cfg.max_normal_angle_deg))
    valid &= np.abs(normals[:, 2]) >= min_cos
    if not np.any(valid):
        return None

    normals, offsets = normals[valid], -np.einsum("ij,ij->i", normals[valid], p1[valid])
    chunk = max(1, RANSAC_CHUNK_ELEMENTS // n)
    counts = np.empty(len(normals), dtype=np.int64)
    for start in range(0, len(normals), chunk):
        dist = np.abs(xyz @ normals[start:start + chunk].T + offsets[start:start + chunk])
        counts[start:start + chunk] = (dist <= cfg.distance).sum(axis=0)

    best = int(np.argmax(counts))
    return normals[best], float(offsets[best])


def remove_ground(frame: PointCloudFrame, cfg: GroundConfig, seed: int = 0) -> PointCloudFrame:
    """
    Drop points within cfg.distance of the dominant near-horizontal plane

    The plane comes from RANSAC over 3-point hypotheses whose normal is within
    max_normal_angle_deg of vertical, refined by least squares on its inliers.
    When no plane reaches min_inlier_fraction the frame comes back unchanged
    with ground_removed=False.
    """
    xyz = frame.points[:, :3]
    if len(xyz) < 3:
        logger.warning("frame %d: too few points for ground estimation", frame.frame_id)
        return frame.model_copy(update={"ground_removed": False})

    rng = np.random.default_rng([abs(seed), abs(frame.frame_id)])
    plane = _ransac_plane(xyz, cfg, rng)
    if plane is None:
        logger.warning("frame %d: no near-horizontal plane hypothesis", frame.frame_id)
        return frame.model_copy(update={"ground_removed": False})

    normal, offset = plane
    inliers = np.abs(xyz @ normal + offset) <= cfg.distance
    if inliers.sum() >= 3:
        refined_normal, refined_offset = _fit_plane(xyz[inliers])
        if abs(refined_normal[2]) >= math.cos(math.radians(cfg.max_normal_angle_deg)):
            inliers = np.abs(xyz @ refined_normal + refined_offset) <= cfg.distance

    fraction = inliers.mean()
    if fraction < cfg.min_inlier_fraction:
        logger.warning(
            "frame %d: ground plane inlier fraction %.3f below %.3f, frame left unchanged",
            frame.frame_id, fraction, cfg.min_inlier_fraction,
        )
        return frame.model_copy(update={"ground_removed": False})

    logger.debug("frame %d: removed %d ground points", frame.frame_id, int(inliers.sum()))
    return frame.model_copy(update={"points": frame.points[~inliers], "ground_removed": True})


def prepare_sequence(
    sequence: Sequence[PointCloudFrame], cfg: GroundConfig, seed: int, workers: int = 1
) -> List[PointCloudFrame]:
    """World-frame, ground-removed copies of every frame; order preserved"""

    def _prepare(frame: PointCloudFrame) -> PointCloudFrame:
        return remove_ground(to_world(frame), cfg, seed)

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(_prepare, sequence))


def bev_neighbors(points: np.ndarray, center: np.ndarray, r: float) -> np.ndarray:
    """Points whose BEV projection lies within r (inclusive) of center"""
    if len(points) == 0:
        return points
    d2 = ((points[:, :2] - center[:2]) ** 2).sum(axis=1)
    return points[d2 <= r * r]


def neighborhood_series(window: FrameWindow, click: ClickAnnotation, r: float) -> NeighborhoodSeries:
    """Per-frame BEV neighbor sets of the click within radius r"""
    if r <= 0:
        raise ConfigError("r", "search radius must be positive")
    center = click.xy
    return NeighborhoodSeries(
        frame_ids=[f.frame_id for f in window.frames],
        neighbors=[bev_neighbors(f.points, center, r) for f in window.frames],
        r=r,
        center_index=window.center_index,
    )


def persistence_profile(series: NeighborhoodSeries) -> PersistenceProfile:
    """
    Occupancy series g(t), its difference, and the duration of the run of
    occupied frames that contains the center frame (0 if the center is empty)
    """
    g = [1 if count > 0 else 0 for count in series.counts]
    T = len(g)
    delta_g = [g[i + 1] - g[i] for i in range(T - 1)]

    c = series.center_index
    delta_t = 0
    if g[c]:
        start = c
        while start > 0 and g[start - 1]:
            start -= 1
        end = c
        while end < T - 1 and g[end + 1]:
            end += 1
        delta_t = end - start + 1

    return PersistenceProfile(g=g, delta_g=delta_g, delta_t=delta_t, T=T, ratio=delta_t / T)


def classify_motion(profile: PersistenceProfile, tau_duration: float) -> MotionState:
    """Static iff delta_t / T strictly exceeds tau_duration"""
    if not 0 < tau_duration < 1:
        raise ConfigError("tau_duration", "must lie in (0, 1)")
    return MotionState.STATIC if profile.ratio > tau_duration else MotionState.DYNAMIC
