"""Semantic occupancy grids, world/voxel indexing and priority voxelization.

Arrays are stored ``(nz, ny, nx)`` in C order, so flattening walks x
fastest, then y, then z.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .pointcloud import LabeledPointCloud

Point3 = tuple[float, float, float]


class SemanticLabel(IntEnum):
    Empty = 0
    Road = 1
    Car = 2
    Terrain = 3
    Building = 4
    Vegetation = 5
    Pole = 6


CLASSES = (
    SemanticLabel.Road,
    SemanticLabel.Car,
    SemanticLabel.Terrain,
    SemanticLabel.Building,
    SemanticLabel.Vegetation,
    SemanticLabel.Pole,
)
NUM_LABELS = len(SemanticLabel)

# Highest first. Overlaps resolve to the earliest entry.
PRIORITY_ORDER = (
    SemanticLabel.Car,
    SemanticLabel.Road,
    SemanticLabel.Pole,
    SemanticLabel.Vegetation,
    SemanticLabel.Building,
    SemanticLabel.Terrain,
)

# rank[label] -> larger wins; Empty ranks 0.
PRIORITY_RANK = np.zeros(NUM_LABELS, dtype=np.int8)
for _r, _lab in enumerate(reversed(PRIORITY_ORDER), start=1):
    PRIORITY_RANK[_lab] = _r
RANK_TO_LABEL = np.zeros(NUM_LABELS, dtype=np.uint8)
RANK_TO_LABEL[PRIORITY_RANK] = np.arange(NUM_LABELS, dtype=np.uint8)


def resolve(a: int, b: int) -> int:
    """The higher-priority of two labels (Empty loses to anything)."""
    return a if PRIORITY_RANK[a] >= PRIORITY_RANK[b] else b


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned voxel lattice in a sensor frame.

    Cells are half-open ``[min, min + n*d)`` on every axis.
    """

    origin: tuple[float, float, float] = (-50.0, -50.0, -3.0)
    voxel_size: tuple[float, float, float] = (100.0 / 128, 100.0 / 128, 0.4)
    dims: tuple[int, int, int] = (128, 128, 20)  # (nx, ny, nz)

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if any(v <= 0 for v in self.voxel_size) or any(n <= 0 for n in self.dims):
            raise ValueError(f"invalid grid spec {self}")

    @property
    def nx(self) -> int:
        return self.dims[0]

    @property
    def ny(self) -> int:
        return self.dims[1]

    @property
    def nz(self) -> int:
        return self.dims[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nz, self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def upper(self) -> tuple[float, float, float]:
        return tuple(o + n * d for o, n, d in zip(self.origin, self.dims, self.voxel_size))

    def voxel_indices(self, xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integer (ix, iy, iz) per point and an in-bounds mask."""
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        idx = np.floor((xyz - np.asarray(self.origin)) / np.asarray(self.voxel_size))
        inside = np.all(np.isfinite(idx), axis=1)
        idx = np.where(np.isfinite(idx), idx, -1).astype(np.int64)
        inside &= np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=1)
        return idx, inside

    def flat_index(self, ix, iy, iz):
        return (np.asarray(iz) * self.ny + np.asarray(iy)) * self.nx + np.asarray(ix)

    def centers(self) -> np.ndarray:
        """All voxel centers, shape (nz, ny, nx, 3)."""
        axes = [
            o + (np.arange(n) + 0.5) * d
            for o, n, d in zip(self.origin, self.dims, self.voxel_size)
        ]
        z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def center_of(self, ix: int, iy: int, iz: int) -> np.ndarray:
        return np.array(
            [o + (i + 0.5) * d for o, i, d in zip(self.origin, (ix, iy, iz), self.voxel_size)]
        )


DEFAULT_SPEC = GridSpec()


def world_to_voxel(p: Point3, spec: GridSpec = DEFAULT_SPEC) -> tuple[int, int, int] | None:
    """Voxel index of a point, or ``None`` when it falls outside the grid."""
    idx, inside = spec.voxel_indices(np.asarray(p, dtype=np.float64))
    if not inside[0]:
        return None
    return tuple(int(v) for v in idx[0])


@dataclass(eq=False)
class SemanticGrid:
    spec: GridSpec
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.shape != self.spec.shape:
            raise ValueError(f"labels shape {self.labels.shape} != {self.spec.shape}")
        if self.labels.size and self.labels.max() >= NUM_LABELS:
            raise ValueError("labels contain values outside SemanticLabel")

    @classmethod
    def empty(cls, spec: GridSpec = DEFAULT_SPEC) -> "SemanticGrid":
        return cls(spec, np.zeros(spec.shape, dtype=np.uint8))

    def __eq__(self, other):
        if not isinstance(other, SemanticGrid):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass(eq=False)
class ConfidenceGrid:
    spec: GridSpec
    conf: np.ndarray

    def __post_init__(self):
        self.conf = np.asarray(self.conf, dtype=np.float64)
        if self.conf.shape != self.spec.shape:
            raise ValueError(f"conf shape {self.conf.shape} != {self.spec.shape}")
        if self.conf.size and (self.conf.min() < 0 or self.conf.max() > 1):
            raise ValueError("confidence values must lie in [0, 1]")

    @classmethod
    def zeros(cls, spec: GridSpec = DEFAULT_SPEC) -> "ConfidenceGrid":
        return cls(spec, np.zeros(spec.shape))

    def __eq__(self, other):
        if not isinstance(other, ConfidenceGrid):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.conf, other.conf)

    __hash__ = None


def voxelize_labeled_points(
    points: LabeledPointCloud, spec: GridSpec = DEFAULT_SPEC
) -> SemanticGrid:
    """Label each voxel with the highest-priority class among its points.

    Points outside the grid are dropped.
    """
    idx, inside = spec.voxel_indices(points.xyz)
    labels = points.labels[inside]
    keep = labels != SemanticLabel.Empty
    flat = spec.flat_index(*idx[inside][keep].T)
    rank = np.zeros(spec.size, dtype=np.int8)
    np.maximum.at(rank, flat, PRIORITY_RANK[labels[keep]])
    return SemanticGrid(spec, RANK_TO_LABEL[rank].reshape(spec.shape))


def occupied_count(g: SemanticGrid) -> int:
    return int(np.count_nonzero(g.labels))


def class_histogram(g: SemanticGrid) -> dict[SemanticLabel, int]:
    """Voxel counts per non-Empty class."""
    counts = np.bincount(g.labels.ravel(), minlength=NUM_LABELS)
    return {c: int(counts[c]) for c in CLASSES}
