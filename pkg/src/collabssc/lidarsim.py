"""Noise-free semantic LiDAR: nearest-hit ray casting against scene shapes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose6D
from .pointcloud import (  # noqa: F401  (re-exported)
    LabeledPointCloud,
    load_cloud,
    save_cloud,
)
from .shapes import Shape, ray_hits
from .voxelgrid import PRIORITY_RANK
from .worldsim import Scene, SceneObject


@dataclass(frozen=True)
class LidarSpec:
    channels: int = 32
    elevation_range: tuple[float, float] = (-25.0, 5.0)  # degrees
    azimuth_steps: int = 720
    max_range: float = 120.0

    def __post_init__(self):
        if self.channels < 1 or self.azimuth_steps < 1 or self.max_range <= 0:
            raise ValueError(f"invalid lidar spec {self}")

    def directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, elevation-major."""
        lo, hi = self.elevation_range
        elev = np.radians(np.linspace(lo, hi, self.channels))
        azim = np.radians(np.arange(self.azimuth_steps) * (360.0 / self.azimuth_steps))
        e, a = np.meshgrid(elev, azim, indexing="ij")
        ce = np.cos(e)
        d = np.stack([ce * np.cos(a), ce * np.sin(a), np.sin(e)], axis=-1)
        return d.reshape(-1, 3)


def ray_hit(origin, direction, obj: SceneObject | Shape) -> float | None:
    """Range to the first intersection of one ray with one object, or ``None``."""
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    shape = obj.shape if isinstance(obj, SceneObject) else obj
    t = ray_hits(shape, np.asarray(origin, dtype=np.float64), d.reshape(1, 3))[0]
    return None if np.isinf(t) else float(t)


def cast_rays(
    s: Scene,
    sensor_pose: Pose6D,
    dirs_sensor: np.ndarray,
    max_range: float,
    exclude: tuple[int, ...] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit range and label index per ray (``inf`` / 0 on miss).

    Equal ranges resolve to the higher-priority class.
    """
    rot = sensor_pose.rotation()
    origin = sensor_pose.position
    dirs_world = dirs_sensor @ rot.T
    best_t = np.full(len(dirs_sensor), np.inf)
    best_rank = np.zeros(len(dirs_sensor), dtype=np.int8)
    best_label = np.zeros(len(dirs_sensor), dtype=np.uint8)
    for i, obj in enumerate(s.objects):
        if i in exclude:
            continue
        shape = obj.at(s.clock)
        reach = np.linalg.norm(shape.half_extents())
        if np.linalg.norm(np.asarray(shape.center) - origin) - reach > max_range:
            continue
        t = ray_hits(shape, origin, dirs_world)
        rank = PRIORITY_RANK[obj.kind]
        better = (t < best_t) | ((t == best_t) & (rank > best_rank) & np.isfinite(t))
        best_t = np.where(better, t, best_t)
        best_rank = np.where(better, rank, best_rank)
        best_label = np.where(better, np.uint8(obj.kind), best_label)
    return best_t, best_label


def scan(
    s: Scene,
    sensor_pose: Pose6D,
    spec: LidarSpec = LidarSpec(),
    exclude: tuple[int, ...] = (),
) -> LabeledPointCloud:
    """Simulated semantic scan in the sensor frame.

    ``exclude`` lists object indices invisible to this sensor, normally the
    host vehicle. Points keep (elevation, azimuth) order.
    """
    dirs = spec.directions()
    t, labels = cast_rays(s, sensor_pose, dirs, spec.max_range, exclude)
    hit = t <= spec.max_range
    return LabeledPointCloud(dirs[hit] * t[hit, None], labels[hit], s.clock)


def scan_agent(s: Scene, agent_id: int, spec: LidarSpec = LidarSpec()) -> LabeledPointCloud:
    return scan(s, s.sensor_pose(agent_id), spec, exclude=(s.agent(agent_id).host,))
