import numpy as np
import pytest

from app.config import ClusterParams
from app.exceptions import NoClusterFound
from app.services.clustering import NOISE, PointCluster, dbscan, dbscan_labels, nearest_cluster


def brute_force_dbscan(coords: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Textbook sequential DBSCAN over a full distance matrix, scanning in (x, y, z) order"""
    n = len(coords)
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    neighbors = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    labels = np.full(n, NOISE)
    cluster = 0
    for seed in np.lexsort(coords.T[::-1]):
        if labels[seed] != NOISE or not core[seed]:
            continue
        labels[seed] = cluster
        stack = [seed]
        while stack:
            current = stack.pop()
            for nb in neighbors[current]:
                if labels[nb] == NOISE:
                    labels[nb] = cluster
                    if core[nb]:
                        stack.append(nb)
        cluster += 1
    return labels


def test_two_separated_blobs():
    rng = np.random.default_rng(0)
    blob_a = rng.uniform(0.0, 0.2, size=(50, 3))
    blob_b = rng.uniform(0.0, 0.2, size=(50, 3)) + [10.0, 0.0, 0.0]
    clusters = dbscan(np.vstack([blob_a, blob_b]), ClusterParams(eps=0.5, min_pts=3))
    assert [c.size for c in clusters] == [50, 50]
    assert set(clusters[0].member_indices) == set(range(50))


def test_single_point_is_noise():
    assert dbscan(np.array([[1.0, 2.0, 0.0]]), ClusterParams(eps=1.0, min_pts=2)) == []


def test_empty_input():
    assert dbscan(np.zeros((0, 3)), ClusterParams(eps=1.0, min_pts=2)) == []


def test_grid_forms_one_cluster():
    gx, gy = np.meshgrid(np.arange(5.0), np.arange(5.0))
    grid = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(25)])
    clusters = dbscan(grid, ClusterParams(eps=1.5, min_pts=4))
    assert len(clusters) == 1 and clusters[0].size == 25


def test_bev_projection_ignores_height():
    column = np.column_stack([np.zeros(6), np.zeros(6), np.arange(6) * 2.0])
    params = ClusterParams(eps=0.5, min_pts=3)
    assert dbscan(column, params, projection="3d") == []
    assert len(dbscan(column, params, projection="bev")) == 1


def test_matches_brute_force_reference():
    rng = np.random.default_rng(42)
    for _ in range(200):
        n = int(rng.integers(5, 501))
        centers = rng.uniform(-10, 10, size=(int(rng.integers(1, 6)), 3))
        coords = centers[rng.integers(len(centers), size=n)] + rng.normal(0, 0.8, size=(n, 3))
        eps, min_pts = float(rng.uniform(0.3, 1.5)), int(rng.integers(2, 8))
        expected = brute_force_dbscan(coords, eps, min_pts)
        np.testing.assert_array_equal(dbscan_labels(coords, ClusterParams(eps=eps, min_pts=min_pts)), expected)


def test_cluster_count_invariant_under_rigid_motion():
    rng = np.random.default_rng(3)
    coords = np.vstack([rng.normal(c, 0.3, size=(40, 3)) for c in ([0, 0, 0], [5, 0, 0], [0, 6, 1])])
    c, s = np.cos(0.9), np.sin(0.9)
    moved = coords @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]).T + [100.0, -40.0, 2.0]
    params = ClusterParams(eps=0.6, min_pts=4)
    assert len(dbscan(coords, params)) == len(dbscan(moved, params))


def test_clusters_partition_points():
    rng = np.random.default_rng(8)
    coords = rng.uniform(0, 6, size=(300, 3))
    clusters = dbscan(coords, ClusterParams(eps=0.7, min_pts=5))
    members = np.concatenate([c.member_indices for c in clusters])
    assert len(members) == len(set(members.tolist()))


def _cluster(centroid, size):
    return PointCluster(member_indices=np.arange(size), centroid=np.asarray(centroid, dtype=float))


class TestNearestCluster:
    def test_closest_centroid(self):
        clusters = [_cluster([0.0, 0.0], 5), _cluster([5.0, 5.0], 5)]
        assert nearest_cluster(clusters, np.array([1.0, 1.0])) is clusters[0]

    def test_tie_goes_to_larger(self):
        clusters = [_cluster([-1.0, 0.0], 10), _cluster([1.0, 0.0], 40)]
        assert nearest_cluster(clusters, np.array([0.0, 0.0])) is clusters[1]

    def test_full_tie_goes_to_lower_index(self):
        clusters = [_cluster([0.0, 1.0], 10), _cluster([0.0, -1.0], 10)]
        assert nearest_cluster(clusters, np.array([0.0, 0.0])) is clusters[0]

    def test_empty(self):
        with pytest.raises(NoClusterFound):
            nearest_cluster([], np.array([0.0, 0.0]))
