"""Rigid poses, frame transforms and pose perturbation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pointcloud import LabeledPointCloud


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]. Values already in range pass through untouched."""
    if -math.pi < a <= math.pi:
        return a
    r = math.fmod(a + math.pi, 2.0 * math.pi)
    if r <= 0.0:
        r += 2.0 * math.pi
    return r - math.pi


@dataclass(frozen=True)
class Pose6D:
    """Rigid pose; rotation is yaw-pitch-roll applied Z-Y-X intrinsic, in radians."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "yaw", "pitch", "roll"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"pose field {name} is not finite: {v}")
            object.__setattr__(self, name, v)
        for name in ("yaw", "pitch", "roll"):
            object.__setattr__(self, name, wrap_angle(getattr(self, name)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_tuple(self) -> tuple[float, ...]:
        return (self.x, self.y, self.z, self.yaw, self.pitch, self.roll)

    def rotation(self) -> np.ndarray:
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cr, sr = math.cos(self.roll), math.sin(self.roll)
        return np.array(
            [
                [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
                [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
                [-sp, cp * sr, cp * cr],
            ]
        )

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation()
        m[:3, 3] = (self.x, self.y, self.z)
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose6D":
        r = m[:3, :3]
        pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
        yaw = math.atan2(r[1, 0], r[0, 0])
        roll = math.atan2(r[2, 1], r[2, 2])
        return cls(m[0, 3], m[1, 3], m[2, 3], yaw, pitch, roll)


IDENTITY = Pose6D()


def translate(x: float = 0.0, y: float = 0.0, z: float = 0.0, yaw: float = 0.0) -> Pose6D:
    return Pose6D(x, y, z, yaw)


def compose(a: Pose6D, b: Pose6D) -> Pose6D:
    """Pose of ``b`` expressed through ``a``: apply ``b`` first, then ``a``."""
    if b == IDENTITY:
        return a
    if a == IDENTITY:
        return b
    return Pose6D.from_matrix(a.matrix() @ b.matrix())


def inverse(p: Pose6D) -> Pose6D:
    r = p.rotation()
    m = np.eye(4)
    m[:3, :3] = r.T
    m[:3, 3] = -r.T @ p.position
    return Pose6D.from_matrix(m)


def relative_matrix(src: Pose6D, dst: Pose6D) -> np.ndarray:
    """Homogeneous transform taking src-frame coordinates to dst-frame coordinates."""
    d = dst.rotation()
    m = np.eye(4)
    m[:3, :3] = d.T @ src.rotation()
    m[:3, 3] = d.T @ (src.position - dst.position)
    return m


def transform_xyz(xyz: np.ndarray, src: Pose6D, dst: Pose6D) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if src == dst:
        return xyz.copy()
    m = relative_matrix(src, dst)
    return xyz @ m[:3, :3].T + m[:3, 3]


def transform_points(points: LabeledPointCloud, src: Pose6D, dst: Pose6D) -> LabeledPointCloud:
    """Re-express a cloud (and its ray origins) from ``src``'s frame in ``dst``'s frame."""
    origins = None
    if points.origins is not None or src != dst:
        origins = transform_xyz(points.ray_origins(), src, dst)
    return LabeledPointCloud(
        transform_xyz(points.xyz, src, dst), points.labels.copy(), points.stamp, origins
    )


def perturb_pose(
    p: Pose6D, pos_std: float, heading_std: float, rng: np.random.Generator
) -> Pose6D:
    """Planar position noise on x/y and heading noise on yaw.

    Three standard normals are always drawn (dx, dy, dyaw) so the generator
    advances identically whatever the stds are.
    """
    if pos_std < 0 or heading_std < 0:
        raise ValueError(f"noise std must be >= 0, got pos={pos_std} heading={heading_std}")
    zx, zy, zh = rng.standard_normal(3)
    x, y, yaw = p.x, p.y, p.yaw
    if pos_std:
        x += pos_std * zx
        y += pos_std * zy
    if heading_std:
        yaw = wrap_angle(yaw + heading_std * zh)
    return Pose6D(x, y, p.z, yaw, p.pitch, p.roll)


def planar_distance(a: Pose6D, b: Pose6D) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)
