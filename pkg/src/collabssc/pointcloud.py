"""Labeled point clouds and the VPCD binary format.

VPCD layout (little-endian)::

    magic   b"VPCD"
    version u16
    count   u64
    count * (f32 x, f32 y, f32 z, u8 label)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagicError, FormatError, TruncatedError, VersionError

VPCD_MAGIC = b"VPCD"
VPCD_VERSION = 1
POINT_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("label", "u1")])


@dataclass(eq=False)
class LabeledPointCloud:
    """LiDAR returns with one semantic label per point.

    ``origins`` optionally records the sensor position each return was
    measured from, expressed in the same frame as ``xyz``. ``None`` means
    every point came from the frame origin (a single-sensor scan in its own
    sensor frame). Fused clouds carry explicit origins so free-space
    carving can trace each ray from the sensor that produced it.
    """

    xyz: np.ndarray
    labels: np.ndarray
    stamp: float = 0.0
    origins: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if len(self.labels) != len(self.xyz):
            raise ValueError(
                f"{len(self.xyz)} points but {len(self.labels)} labels"
            )
        if self.origins is not None:
            self.origins = np.asarray(self.origins, dtype=np.float64).reshape(-1, 3)
            if len(self.origins) != len(self.xyz):
                raise ValueError("origins must have one row per point")

    def __len__(self) -> int:
        return len(self.xyz)

    @classmethod
    def empty(cls, stamp: float = 0.0) -> "LabeledPointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.uint8), stamp)

    def ray_origins(self) -> np.ndarray:
        """Per-point sensor origins, materialized."""
        if self.origins is None:
            return np.zeros_like(self.xyz)
        return self.origins

    def same_as(self, other: "LabeledPointCloud") -> bool:
        """Bit-exact comparison of points, labels and stamp."""
        return (
            self.stamp == other.stamp
            and np.array_equal(self.xyz, other.xyz)
            and np.array_equal(self.labels, other.labels)
        )


def concatenate(clouds: list[LabeledPointCloud], stamp: float | None = None) -> LabeledPointCloud:
    """Stack clouds in order, keeping per-point ray origins."""
    if not clouds:
        return LabeledPointCloud.empty(0.0 if stamp is None else stamp)
    return LabeledPointCloud(
        np.concatenate([c.xyz for c in clouds]),
        np.concatenate([c.labels for c in clouds]),
        clouds[0].stamp if stamp is None else stamp,
        np.concatenate([c.ray_origins() for c in clouds]),
    )


def encode_points(cloud: LabeledPointCloud) -> bytes:
    """Count plus packed per-point records, without magic/version."""
    rec = np.empty(len(cloud), dtype=POINT_DTYPE)
    rec["x"] = cloud.xyz[:, 0]
    rec["y"] = cloud.xyz[:, 1]
    rec["z"] = cloud.xyz[:, 2]
    rec["label"] = cloud.labels
    return struct.pack("<Q", len(cloud)) + rec.tobytes()


def decode_points(buf: bytes, offset: int = 0, stamp: float = 0.0) -> tuple[LabeledPointCloud, int]:
    if len(buf) - offset < 8:
        raise TruncatedError("truncated point count", offset)
    (count,) = struct.unpack_from("<Q", buf, offset)
    offset += 8
    nbytes = count * POINT_DTYPE.itemsize
    if len(buf) - offset < nbytes:
        raise TruncatedError(f"truncated point payload, expected {nbytes} bytes", offset)
    rec = np.frombuffer(buf, dtype=POINT_DTYPE, count=count, offset=offset)
    xyz = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    return LabeledPointCloud(xyz, rec["label"].copy(), stamp), offset + nbytes


def to_vpcd_bytes(cloud: LabeledPointCloud) -> bytes:
    return VPCD_MAGIC + struct.pack("<H", VPCD_VERSION) + encode_points(cloud)


def from_vpcd_bytes(buf: bytes) -> LabeledPointCloud:
    if buf[:4] != VPCD_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}", 0)
    if len(buf) < 6:
        raise TruncatedError("truncated header", 4)
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VPCD_VERSION:
        raise VersionError(f"unsupported VPCD version {version}", 4)
    cloud, end = decode_points(buf, 6)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes", end)
    return cloud


def save_cloud(cloud: LabeledPointCloud, path) -> None:
    Path(path).write_bytes(to_vpcd_bytes(cloud))


def load_cloud(path) -> LabeledPointCloud:
    return from_vpcd_bytes(Path(path).read_bytes())
