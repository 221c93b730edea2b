import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mmpoint.clustering import (
    ROADSIDE_TAG,
    ClusteringConfig,
    ball_query,
    dbscan,
    dynamic_dbscan,
    filter_clusters,
    fps,
    k_distance_radius,
    k_distances,
    make_cluster,
    normalize_points,
    overlay_frames,
)
from mmpoint.detection import PointCloud, RadarPoint
from mmpoint.errors import DomainError, SchemaError
from test_acceptance import _cloud, _scenarios, brute_force_dbscan, partition

coords = hnp.arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 3)), elements=st.floats(-10, 10))


def test_knee_flat_grid():
    assert k_distance_radius(np.arange(20.0) * 0.7, 1) == pytest.approx(0.7)


def test_knee_blobs_and_outliers():
    rng = np.random.default_rng(1)
    blobs = np.concatenate([rng.uniform(0, 1, (100, 2)), rng.uniform(0, 1, (100, 2)) + 50])
    outliers = np.array([[200.0 + 10 * i, -100.0] for i in range(5)])
    eps = k_distance_radius(np.concatenate([blobs, outliers]), 4)
    assert 0.1 < eps < 10


def test_knee_duplicates():
    with pytest.raises(DomainError):
        k_distance_radius(np.zeros((10, 2)), 1)
    assert k_distance_radius(np.zeros((10, 2)), 1, floor=0.5) == 0.5


def test_k_distance_too_few():
    with pytest.raises(DomainError):
        k_distances(np.zeros((3, 1)), 3)


def test_dbscan_examples():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 0.1, (10, 2))
    res = dbscan(np.concatenate([a, a + 10.0]), 0.1, 3)
    assert len(res.clusters) == 2 and res.noise == ()
    far = np.arange(5.0)[:, None] * 3
    assert dbscan(far, 1.0, 2).clusters == () and dbscan(far, 1.0, 2).noise == tuple(range(5))
    assert dbscan([[1.0, 2.0]], 0.5, 1).clusters == ((0,),)


def test_dbscan_inclusive_boundary():
    # exact distance eps counts as a neighbour
    res = dbscan([[0.0], [0.5], [1.0]], 0.5, 3)
    assert res.clusters == ((0, 1, 2),)


@settings(max_examples=60, deadline=None)
@given(coords, st.floats(0.2, 5.0), st.integers(1, 6))
def test_dbscan_partition_and_oracle(x, eps, min_pts):
    res = dbscan(x, eps, min_pts)
    members = sorted(i for c in res.clusters for i in c) + list(res.noise)
    assert sorted(members) == list(range(len(x)))
    assert partition(res.labels) == partition(brute_force_dbscan(x, eps, min_pts))


def test_dbscan_bad_args():
    with pytest.raises(DomainError):
        dbscan([[0.0]], 0.0, 1)
    with pytest.raises(DomainError):
        dbscan([[0.0]], 1.0, 0)


def _cluster(xy, v=0.0):
    cloud = _cloud([(x, y, v) for x, y in xy])
    return make_cluster(cloud, range(len(xy)))


def test_cluster_invariants():
    c = _cluster([(0.0, 10.0), (1.0, 12.0), (-1.0, 11.0)])
    xyz = np.array([[0, 10], [1, 12], [-1, 11]], dtype=float)
    assert c.centroid[:2] == pytest.approx(xyz.mean(axis=0))
    assert np.all(np.array(c.bbox_min)[:2] <= xyz.min(axis=0)) and np.all(np.array(c.bbox_max)[:2] >= xyz.max(axis=0))


def test_filter_examples():
    assert filter_clusters([], ClusteringConfig()) == []
    pair = _cluster([(0.0, 10.0), (0.5, 10.0)])
    assert filter_clusters([pair], ClusteringConfig(min_cluster_size=5)) == []
    curb = _cluster([(0.3 * (i % 2), 10.0 + 12.0 * i / 19) for i in range(20)])
    cfg = ClusteringConfig(max_aspect=10, max_extent=20, extent_floor=0.5)
    assert filter_clusters([curb], cfg) == []
    (tagged,) = filter_clusters([curb], ClusteringConfig(max_aspect=10, max_extent=20, extent_floor=0.5, tag_mode=True))
    assert tagged.tags == (ROADSIDE_TAG,) and tagged.members == curb.members


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.tuples(st.floats(-10, 10), st.floats(1, 30)), min_size=1, max_size=12), max_size=6),
       st.integers(1, 6), st.floats(1, 10), st.floats(1, 10))
def test_filter_never_grows(groups, min_size, max_extent, max_aspect):
    clusters = [_cluster(g) for g in groups]
    cfg = ClusteringConfig(min_cluster_size=min_size, max_extent=max_extent, max_aspect=max_aspect, extent_floor=0.5)
    out = filter_clusters(clusters, cfg)
    assert len(out) <= len(clusters)
    assert all(any(c.members == o.members for c in clusters) for o in out)


def test_dynamic_permutation_invariance():
    cfg = ClusteringConfig(velocity_eps_floor=0.5, spatial_eps_floor=1.0, extent_floor=0.5, tag_mode=True)
    rng = np.random.default_rng(3)
    for rows in _scenarios():
        base = {frozenset(c.members) for c in dynamic_dbscan(_cloud(rows), cfg)}
        for _ in range(5):
            perm = rng.permutation(len(rows))
            res = dynamic_dbscan(_cloud([rows[i] for i in perm]), cfg)
            assert {frozenset(int(perm[i]) for i in c.members) for c in res} == base


def test_dynamic_provenance_and_order():
    cars, _, _ = _scenarios()
    cfg = ClusteringConfig(velocity_eps_floor=0.5, spatial_eps_floor=1.0)
    res = dynamic_dbscan(_cloud(cars), cfg)
    keys = [(c.velocity_cluster, c.spatial_cluster) for c in res]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)
    assert {round(c.mean_v) for c in res} == {0, 15}


def test_dynamic_small_cloud_uses_floor():
    res = dynamic_dbscan(_cloud([(0.0, 10.0, 1.0), (0.2, 10.1, 1.0), (0.1, 10.3, 1.0)]),
                         ClusteringConfig(velocity_eps_floor=0.5, spatial_eps_floor=1.0, min_pts_spatial=3))
    assert [c.members for c in res] == [(0, 1, 2)]
    with pytest.raises(DomainError):
        dynamic_dbscan(PointCloud(()))


def test_config_from_dict():
    assert ClusteringConfig.from_dict({"k_spatial": 6}).spatial_min_pts == 7
    with pytest.raises(SchemaError):
        ClusteringConfig.from_dict({"radius": 1})


def _frame(rows, f):
    return PointCloud(tuple(RadarPoint.from_polar(r, a, 0.0, v, 1.0, f) for r, a, v in rows), f)


def test_overlay_identity_and_static():
    static = [(10.0, 0.1, 0.0), (20.0, -0.2, 0.0), (30.0, 0.3, 0.0)]
    clouds = [_frame(static, f) for f in range(4)]
    assert overlay_frames(clouds, 1, 0.05) is clouds[-1]
    counts = [len(overlay_frames(clouds, w, 0.05)) for w in (1, 2, 3, 4)]
    assert counts == [3, 6, 9, 12]
    assert overlay_frames(clouds, 3, 0.05).frame_index == 3
    with pytest.raises(DomainError):
        overlay_frames([clouds[0], clouds[2]], 2, 0.05)


def test_overlay_compensation_reduces_smear():
    v, dt = 10.0, 0.1
    clouds = [_frame([(30.0 - v * f * dt + o, 0.05, v) for o in (-0.5, 0.0, 0.5)], f) for f in range(3)]
    extent = lambda c: np.ptp(c.column("range"))
    comp = overlay_frames(clouds, 3, dt)
    raw = overlay_frames(clouds, 3, dt, compensate=False)
    assert extent(comp) <= extent(raw)
    assert extent(comp) == pytest.approx(1.0)


def test_normalize_single_point():
    feats, _ = normalize_points(_cloud([(1.0, 5.0, 2.0)]))
    assert np.array_equal(feats, np.zeros((1, 4)))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.just(4)), elements=st.floats(-1e3, 1e3)))
def test_normalize_moments_and_inverse(x):
    feats, norm = normalize_points(x)
    live = norm.std > 0
    assert np.all(np.abs(feats.mean(axis=0)) < 1e-10)
    assert np.allclose(feats[:, live].var(axis=0), 1.0, atol=1e-10)
    assert np.all(feats[:, ~live] == 0)
    assert np.allclose(norm.inverse(feats), x, rtol=1e-10, atol=1e-10 * max(1.0, np.abs(x).max()))


def test_fps_examples():
    line = np.arange(11.0)[:, None]
    assert fps(line, 2, 0) == [0, 10]
    assert sorted(fps(line, 11, 4)) == list(range(11))
    with pytest.raises(DomainError):
        fps(line, 0)
    with pytest.raises(DomainError):
        fps(line, 12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_fps_permutation_covariant(seed, m):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(20, 2))
    perm = rng.permutation(20)
    # pts_perm[i] = pts[perm[i]]; the start maps with the permutation
    inv = np.argsort(perm)
    picks = fps(pts, m, 0)
    picks_perm = fps(pts[perm], m, int(inv[0]))
    assert [int(perm[i]) for i in picks_perm] == picks


def test_ball_query_examples():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    assert ball_query(pts, [[1.0, 0.0]], 1e-9, 4) == [[1]]
    assert ball_query(pts, [[4.0, 4.0]], 0.5, 4) == [[2]]
    assert ball_query(pts, [[0.5, 0.0]], 1.0, 1) == [[0]]
    with pytest.raises(DomainError):
        ball_query(np.empty((0, 2)), [[0.0, 0.0]], 1.0, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 2.0))
def test_ball_query_brute_force(seed, radius):
    rng = np.random.default_rng(seed)
    pts, centres = rng.uniform(-2, 2, (60, 3)), rng.uniform(-2, 2, (8, 3))
    groups = ball_query(pts, centres, radius, 60)
    for c, g in zip(centres, groups):
        brute = [i for i in range(60) if math.dist(pts[i], c) <= radius]
        assert g == (brute or [int(np.argmin(np.linalg.norm(pts - c, axis=1)))])
