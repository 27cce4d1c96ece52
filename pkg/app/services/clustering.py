# app/services/clustering.py
from typing import List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from app.config import ClusterParams
from app.exceptions import NoClusterFound

Projection = Literal["bev", "3d"]

NOISE = -1


class PointCluster(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    # Indices into the caller's point array, ascending
    member_indices: np.ndarray
    centroid: np.ndarray

    @property
    def size(self) -> int:
        return len(self.member_indices)


def _coordinates(points: np.ndarray, projection: Projection) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts[:, :2] if projection == "bev" else pts[:, :3]


def dbscan_labels(coords: np.ndarray, params: ClusterParams) -> np.ndarray:
    """
    Cluster id per row of `coords` (NOISE for noise)

    A point is core when at least min_pts points (itself included) lie within
    eps. Core points within eps of each other share a cluster. Clusters are
    numbered by their first core point in lexicographic (x, y, z) order, and a
    border point near several clusters joins the lowest-numbered one. This is
    the labeling a sequential scan in that order produces.
    """
    n = len(coords)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels

    pairs = cKDTree(coords).query_pairs(r=params.eps, output_type="ndarray").reshape(-1, 2)
    counts = np.bincount(pairs.ravel(), minlength=n) + 1
    is_core = counts >= params.min_pts
    if not np.any(is_core):
        return labels

    core_a, core_b = is_core[pairs[:, 0]], is_core[pairs[:, 1]]
    core_edges = pairs[core_a & core_b]
    graph = coo_matrix(
        (np.ones(len(core_edges)), (core_edges[:, 0], core_edges[:, 1])), shape=(n, n)
    )
    _, component = connected_components(graph, directed=False)

    rank = np.empty(n, dtype=np.int64)
    rank[np.lexsort(coords.T[::-1])] = np.arange(n)
    core_idx = np.flatnonzero(is_core)
    cluster_of_component = {}
    for i in core_idx[np.argsort(rank[core_idx])]:
        cluster_of_component.setdefault(int(component[i]), len(cluster_of_component))
    labels[core_idx] = [cluster_of_component[int(c)] for c in component[core_idx]]

    # (core, border) pairs in both orientations
    reach = np.vstack([pairs[core_a & ~core_b], pairs[core_b & ~core_a][:, ::-1]])
    if len(reach):
        unset = np.iinfo(np.int64).max
        best = np.full(n, unset, dtype=np.int64)
        np.minimum.at(best, reach[:, 1], labels[reach[:, 0]])
        border = best != unset
        labels[border] = best[border]
    return labels


def dbscan(points: np.ndarray, params: ClusterParams, projection: Projection = "3d") -> List[PointCluster]:
    """Density clusters of `points`, ordered by discovery; noise is dropped"""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        return []
    coords = _coordinates(pts, projection)
    labels = dbscan_labels(coords, params)

    clusters = []
    for cid in range(labels.max() + 1):
        members = np.flatnonzero(labels == cid)
        clusters.append(PointCluster(member_indices=members, centroid=coords[members].mean(axis=0)))
    return clusters


def nearest_cluster(clusters: List[PointCluster], click: np.ndarray) -> PointCluster:
    """
    Cluster whose BEV centroid is closest to the click

    Ties go to the larger cluster, then to the lower list index.
    """
    if not clusters:
        raise NoClusterFound("no clusters to choose from")
    target = np.asarray(click, dtype=np.float64)[:2]
    ranked = sorted(
        range(len(clusters)),
        key=lambda i: (float(np.linalg.norm(clusters[i].centroid[:2] - target)), -clusters[i].size, i),
    )
    return clusters[ranked[0]]
