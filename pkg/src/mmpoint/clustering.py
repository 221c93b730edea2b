"""Two-pass (velocity, then space) DBSCAN, k-distance radii and point-set utilities."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from mmpoint.detection import PointCloud, RadarPoint
from mmpoint.errors import DomainError, SchemaError

ROADSIDE_TAG = "roadside-like"
DEFAULT_EXTENT_FLOOR = 0.5  # m, used when no range-bin width is known


def _as_matrix(points) -> np.ndarray:
    a = np.asarray(points, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DomainError(f"expected an (n, d) array of feature vectors, got shape {a.shape}")
    return a


# ------------------------------------------------------------------ k-distance


def k_distances(points, k: int) -> np.ndarray:
    """Distance from every point to its k-th nearest other point."""
    x = _as_matrix(points)
    if k < 1:
        raise DomainError("k must be >= 1")
    if len(x) < k + 1:
        raise DomainError(f"need at least k+1={k + 1} points, got {len(x)}")
    d, _ = cKDTree(x).query(x, k=k + 1)
    return d[:, k]


def knee_value(curve: np.ndarray) -> float:
    """Value at the knee of a descending curve.

    Both axes are rescaled to [0, 1] and the knee is the sample farthest
    from the chord joining the endpoints. A flat curve returns its value.
    """
    y = np.sort(np.asarray(curve, dtype=float))[::-1]
    span = y[0] - y[-1]
    if len(y) < 3 or span <= 1e-12 * max(abs(y[0]), 1.0):
        return float(y[0])
    t = np.linspace(0.0, 1.0, len(y))
    yn = (y - y[-1]) / span
    # Chord from (0, 1) to (1, 0): distance is proportional to |t + yn - 1|.
    return float(y[int(np.argmax(np.abs(t + yn - 1.0)))])


def k_distance_radius(points, k: int, floor: float = 0.0) -> float:
    """Neighbourhood radius from the knee of the sorted k-distance curve.

    ``floor`` is a lower bound for data on a grid (e.g. velocities
    quantised to Doppler bins) where the knee can land on zero.
    """
    eps = max(knee_value(k_distances(points, k)), floor)
    if not eps > 0:
        raise DomainError("k-distance radius is zero (duplicate points); set a floor or an explicit eps")
    return eps


# ---------------------------------------------------------------------- DBSCAN


@dataclass(frozen=True, eq=False)
class DBSCANResult:
    labels: np.ndarray  # cluster id per point, -1 for noise
    clusters: tuple[tuple[int, ...], ...]
    noise: tuple[int, ...]


def region_query(x: np.ndarray, eps: float) -> list[np.ndarray]:
    """Indices within ``eps`` of each point (inclusive, self counted), ascending."""
    tree = cKDTree(x)
    out = []
    for i, cand in enumerate(tree.query_ball_point(x, eps * (1 + 1e-9) + 1e-300)):
        cand = np.asarray(sorted(cand), dtype=int)
        keep = np.linalg.norm(x[cand] - x[i], axis=1) <= eps
        out.append(cand[keep])
    return out


def dbscan(points, eps: float, min_pts: int) -> DBSCANResult:
    """Classic DBSCAN with deterministic index-order expansion.

    Clusters are seeded from core points in ascending index order and grown
    breadth first; a border point reachable from several clusters stays in
    the first one that claims it.
    """
    x = _as_matrix(points)
    if not eps > 0:
        raise DomainError(f"eps must be > 0, got {eps}")
    if min_pts < 1:
        raise DomainError(f"min_pts must be >= 1, got {min_pts}")
    n = len(x)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return DBSCANResult(labels, (), ())
    neighbours = region_query(x, eps)
    core = np.array([len(nb) >= min_pts for nb in neighbours])
    cid = 0
    for seed in range(n):
        if labels[seed] != -1 or not core[seed]:
            continue
        labels[seed] = cid
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            for j in neighbours[i]:
                if labels[j] == -1:
                    labels[j] = cid
                    if core[j]:
                        queue.append(j)
        cid += 1
    clusters = tuple(tuple(int(i) for i in np.flatnonzero(labels == c)) for c in range(cid))
    return DBSCANResult(labels, clusters, tuple(int(i) for i in np.flatnonzero(labels == -1)))


# -------------------------------------------------------------------- clusters


@dataclass(frozen=True)
class Cluster:
    members: tuple[int, ...]
    centroid: tuple[float, float, float]
    mean_v: float
    bbox_min: tuple[float, float, float]
    bbox_max: tuple[float, float, float]
    label: str | None = None
    velocity_cluster: int = 0
    spatial_cluster: int = 0
    tags: tuple[str, ...] = ()
    verdicts: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.members:
            raise DomainError("cluster needs at least one member")
        if len(set(self.members)) != len(self.members):
            raise DomainError("cluster members must be unique")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(b - a for a, b in zip(self.bbox_min, self.bbox_max))  # type: ignore[return-value]

    def to_dict(self) -> dict:
        return {
            "members": list(self.members),
            "centroid": list(self.centroid),
            "bbox": {"min": list(self.bbox_min), "max": list(self.bbox_max)},
            "mean_v": self.mean_v,
            "label": self.label,
            "velocity_cluster": self.velocity_cluster,
            "spatial_cluster": self.spatial_cluster,
            "tags": list(self.tags),
            "verdicts": dict(self.verdicts),
        }


def make_cluster(cloud: PointCloud, members: Sequence[int], **kw) -> Cluster:
    members = tuple(int(i) for i in members)
    xyz = cloud.xyz()[list(members)]
    v = cloud.column("v_radial")[list(members)]
    return Cluster(
        members,
        tuple(float(c) for c in xyz.mean(axis=0)),
        float(v.mean()),
        tuple(float(c) for c in xyz.min(axis=0)),
        tuple(float(c) for c in xyz.max(axis=0)),
        **kw,
    )


@dataclass(frozen=True)
class ClusteringConfig:
    k_velocity: int = 2
    k_spatial: int = 4
    min_pts_velocity: int | None = None  # None -> k_velocity + 1
    min_pts_spatial: int | None = None  # None -> k_spatial + 1
    velocity_eps: float | None = None
    spatial_eps: float | None = None
    velocity_eps_floor: float | None = None  # None -> one Doppler bin
    spatial_eps_floor: float | None = None  # None -> one range bin
    min_cluster_size: int = 3
    max_extent: float = 6.0
    max_aspect: float = 8.0
    extent_floor: float | None = None  # None -> one range bin
    tag_mode: bool = False

    def __post_init__(self):
        if self.k_velocity < 1 or self.k_spatial < 1:
            raise DomainError("k must be >= 1")
        for name in ("min_pts_velocity", "min_pts_spatial"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise DomainError(f"{name} must be >= 1")

    @property
    def velocity_min_pts(self) -> int:
        return self.min_pts_velocity or self.k_velocity + 1

    @property
    def spatial_min_pts(self) -> int:
        return self.min_pts_spatial or self.k_spatial + 1

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusteringConfig":
        known = set(cls.__dataclass_fields__)
        for key in doc:
            if key not in known:
                raise SchemaError("unknown key", f"clustering.{key}")
        return cls(**doc)


def filter_clusters(clusters: Sequence[Cluster], config: ClusteringConfig = ClusteringConfig()) -> list[Cluster]:
    """Drop small clusters and drop (or tag) implausibly shaped ones.

    Shape checks use the horizontal extents; the shorter one is floored at
    ``config.extent_floor`` so a single-range-cell line is not infinitely thin.
    """
    floor = config.extent_floor if config.extent_floor is not None else DEFAULT_EXTENT_FLOOR
    out = []
    for c in clusters:
        ex, ey, _ = c.extent
        longest = max(ex, ey)
        aspect = longest / max(min(ex, ey), floor)
        verdicts = {
            "size_ok": c.size >= config.min_cluster_size,
            "extent_ok": longest <= config.max_extent,
            "aspect_ok": aspect <= config.max_aspect,
            "aspect": aspect,
        }
        if not verdicts["size_ok"]:
            continue
        if verdicts["extent_ok"] and verdicts["aspect_ok"]:
            out.append(replace(c, verdicts=verdicts))
        elif config.tag_mode:
            out.append(replace(c, tags=c.tags + (ROADSIDE_TAG,), verdicts=verdicts))
    return out


def _resolve(config: ClusteringConfig, cloud: PointCloud) -> ClusteringConfig:
    p = cloud.params
    updates = {}
    if config.velocity_eps_floor is None:
        updates["velocity_eps_floor"] = p.velocity_bin if p else 0.0
    if config.spatial_eps_floor is None:
        updates["spatial_eps_floor"] = p.range_bin if p else 0.0
    if config.extent_floor is None:
        updates["extent_floor"] = p.range_bin if p else DEFAULT_EXTENT_FLOOR
    return replace(config, **updates)


def _radius(values: np.ndarray, k: int, floor: float) -> float:
    if len(values) <= k:
        if floor > 0:
            return floor
        raise DomainError(f"need more than k={k} points to pick a radius")
    return k_distance_radius(values, k, floor)


def dynamic_dbscan(cloud: PointCloud, config: ClusteringConfig = ClusteringConfig()) -> list[Cluster]:
    """Velocity DBSCAN, then spatial (x, y) DBSCAN per velocity group, then filtering.

    Radii not given in ``config`` come from the k-distance knee over the
    whole cloud. Output is ordered by (velocity cluster, spatial cluster).
    """
    if len(cloud) == 0:
        raise DomainError("cloud is empty")
    config = _resolve(config, cloud)
    v = cloud.column("v_radial")[:, None]
    xy = cloud.xyz()[:, :2]
    eps_v = config.velocity_eps or _radius(v, config.k_velocity, config.velocity_eps_floor)
    eps_xy = config.spatial_eps or _radius(xy, config.k_spatial, config.spatial_eps_floor)

    clusters = []
    for vid, vmembers in enumerate(dbscan(v, eps_v, config.velocity_min_pts).clusters):
        idx = np.asarray(vmembers)
        spatial = dbscan(xy[idx], eps_xy, config.spatial_min_pts)
        for sid, smembers in enumerate(spatial.clusters):
            clusters.append(make_cluster(cloud, idx[list(smembers)], velocity_cluster=vid, spatial_cluster=sid))
    return filter_clusters(clusters, config)


# ---------------------------------------------------------------- multi-frame


def overlay_frames(
    clouds: Sequence[PointCloud],
    window: int,
    frame_interval: float,
    compensate: bool = True,
) -> PointCloud:
    """Merge the newest ``window`` frames into one cloud.

    Moving points are shifted along their line of sight by their own radial
    velocity, ``r' = r - v*dt``, to the newest frame's time. Points that
    would cross the radar are dropped.
    """
    if window < 1:
        raise DomainError("window must be >= 1")
    if not clouds:
        raise DomainError("no clouds to overlay")
    frames = [c.frame_index for c in clouds]
    if any(b - a != 1 for a, b in zip(frames, frames[1:])):
        raise DomainError(f"clouds are not consecutive frames: {frames}")
    newest = clouds[-1]
    if window == 1:
        return newest
    points = []
    for cloud in clouds[-window:]:
        dt = (newest.frame_index - cloud.frame_index) * frame_interval
        for p in cloud:
            r = p.range - p.v_radial * dt if compensate else p.range
            if r <= 0:
                continue
            points.append(RadarPoint.from_polar(r, p.azimuth, p.elevation, p.v_radial, p.intensity, newest.frame_index))
    meta = dict(newest.meta, overlay_window=window)
    return PointCloud(tuple(points), newest.frame_index, newest.params, meta)


@dataclass(frozen=True, eq=False)
class Normalization:
    mean: np.ndarray
    std: np.ndarray  # population standard deviation, 0 for constant columns

    def inverse(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=float) * self.std + self.mean


FEATURES = ("x", "y", "z", "v_radial")


def normalize_points(cloud: PointCloud | np.ndarray) -> tuple[np.ndarray, Normalization]:
    """Standardise (x, y, z, v) columns; constant columns map to zeros."""
    if isinstance(cloud, PointCloud):
        x = np.column_stack([cloud.column(f) for f in FEATURES]) if len(cloud) else np.empty((0, 4))
    else:
        x = _as_matrix(cloud)
    if len(x) == 0:
        raise DomainError("cannot normalise an empty cloud")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    # Relative test so round-off in a constant column is not mistaken for spread.
    const = std <= 1e-12 * np.maximum(np.abs(mean), 1.0)
    std = np.where(const, 0.0, std)
    features = np.where(const, 0.0, (x - mean) / np.where(const, 1.0, std))
    return features, Normalization(mean, std)


# ----------------------------------------------------------- sampling/grouping


def fps(points, m: int, start_index: int = 0) -> list[int]:
    """Farthest point sampling; ties go to the lowest index."""
    x = _as_matrix(points)
    n = len(x)
    if not 1 <= m <= n:
        raise DomainError(f"m must lie in [1, {n}], got {m}")
    if not 0 <= start_index < n:
        raise DomainError(f"start_index {start_index} out of range")
    picks = [int(start_index)]
    min_d = np.linalg.norm(x - x[start_index], axis=1)
    min_d[start_index] = -np.inf
    for _ in range(m - 1):
        j = int(np.argmax(min_d))
        picks.append(j)
        min_d = np.minimum(min_d, np.linalg.norm(x - x[j], axis=1))
        min_d[picks] = -np.inf
    return picks


def ball_query(points, centers, radius: float, max_k: int) -> list[list[int]]:
    """Per centre, ascending indices within ``radius`` (at most ``max_k``).

    An empty neighbourhood falls back to the single nearest point so no
    group is ever empty.
    """
    x = _as_matrix(points)
    c = _as_matrix(centers)
    if len(x) == 0:
        raise DomainError("point set is empty")
    if not radius > 0:
        raise DomainError("radius must be > 0")
    if max_k < 1:
        raise DomainError("max_k must be >= 1")
    if c.shape[1] != x.shape[1]:
        raise DomainError("centres and points differ in dimension")
    out = []
    for centre in c:
        d = np.linalg.norm(x - centre, axis=1)
        inside = np.flatnonzero(d <= radius)
        out.append([int(i) for i in inside[:max_k]] if len(inside) else [int(np.argmin(d))])
    return out

