"""Simulated planar LiDAR over a world of static convex obstacles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConvexPolygon, Pose2D


@dataclass
class Obstacle:
    polygon: ConvexPolygon
    pose: Pose2D = field(default_factory=Pose2D.identity)

    @property
    def world_vertices(self) -> np.ndarray:
        return self.pose.to_world(self.polygon.vertices)


@dataclass
class World:
    obstacles: list = field(default_factory=list)
    bounds: tuple = (0.0, 50.0, 0.0, 50.0)  # x_min, x_max, y_min, y_max

    def __post_init__(self):
        x0, x1, y0, y1 = self.bounds
        for ob in self.obstacles:
            v = ob.world_vertices
            if v[:, 0].min() < x0 or v[:, 0].max() > x1 or v[:, 1].min() < y0 or v[:, 1].max() > y1:
                raise ValueError("obstacle lies outside the world bounds")

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """All obstacle edges as start points and direction vectors, (E, 2) each."""
        if not self.obstacles:
            return np.empty((0, 2)), np.empty((0, 2))
        starts, dirs = [], []
        for ob in self.obstacles:
            v = ob.world_vertices
            starts.append(v)
            dirs.append(np.roll(v, -1, axis=0) - v)
        return np.vstack(starts), np.vstack(dirs)


@dataclass
class LidarConfig:
    n_beams: int = 360
    fov: float = 2.0 * math.pi
    max_range: float = 20.0
    mount_offset: tuple = (0.0, 0.0)
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.n_beams < 1:
            raise ValueError("n_beams must be >= 1")
        if not 0.0 < self.fov <= 2.0 * math.pi + 1e-12:
            raise ValueError("fov must lie in (0, 2 pi]")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    def beam_angles(self) -> np.ndarray:
        if self.fov >= 2.0 * math.pi - 1e-12:
            return -math.pi + 2.0 * math.pi * np.arange(self.n_beams) / self.n_beams
        if self.n_beams == 1:
            return np.zeros(1)
        return np.linspace(-self.fov / 2, self.fov / 2, self.n_beams)


@dataclass
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    stamp: int = 0

    def __len__(self):
        return self.points.shape[0]


def ray_hits(origin, angles: np.ndarray, world: World, max_range: float) -> np.ndarray:
    """Range of the nearest obstacle edge along each ray, ``inf`` on a miss."""
    starts, dirs = world.segments()
    ranges = np.full(angles.shape[0], np.inf)
    if starts.shape[0] == 0:
        return ranges
    o = np.asarray(origin, dtype=float)
    r = np.column_stack([np.cos(angles), np.sin(angles)])  # (B, 2)
    # o + t r = s + u e  ->  solve with 2D cross products
    rel = starts - o  # (E, 2)
    denom = r[:, None, 0] * dirs[None, :, 1] - r[:, None, 1] * dirs[None, :, 0]  # (B, E)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[None, :, 0] * dirs[None, :, 1] - rel[None, :, 1] * dirs[None, :, 0]) / denom
        u = (rel[None, :, 0] * r[:, None, 1] - rel[None, :, 1] * r[:, None, 0]) / denom
    ok = (np.abs(denom) > 1e-12) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0) & (t <= max_range)
    t = np.where(ok, t, np.inf)
    return t.min(axis=1)


def scan(world: World, sensor_pose: Pose2D, cfg: LidarConfig | None = None, seed: int = 0,
         stamp: int = 0) -> PointCloud:
    """Cast ``cfg.n_beams`` rays across the field of view around the sensor heading."""
    cfg = cfg or LidarConfig()
    origin = sensor_pose.to_world(np.asarray(cfg.mount_offset, dtype=float))
    angles = sensor_pose.theta + cfg.beam_angles()
    ranges = ray_hits(origin, angles, world, cfg.max_range)
    hit = np.isfinite(ranges)
    rng_vals = ranges[hit]
    if cfg.noise_sigma > 0 and rng_vals.size:
        noise = np.random.default_rng([seed, stamp]).normal(0.0, cfg.noise_sigma, rng_vals.size)
        rng_vals = rng_vals + noise
    a = angles[hit]
    pts = origin + rng_vals[:, None] * np.column_stack([np.cos(a), np.sin(a)])
    return PointCloud(pts, stamp)


def downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """Replace the points of each occupied voxel by their centroid.

    Output order follows the first point seen in each voxel.
    """
    if not voxel > 0:
        raise ValueError("voxel size must be positive")
    pts = cloud.points
    if pts.shape[0] == 0:
        return PointCloud(pts.copy(), cloud.stamp)
    keys = np.floor(pts / voxel).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse)
    cx = np.bincount(inverse, weights=pts[:, 0]) / counts
    cy = np.bincount(inverse, weights=pts[:, 1]) / counts
    order = np.argsort(first, kind="stable")
    return PointCloud(np.column_stack([cx[order], cy[order]]), cloud.stamp)
