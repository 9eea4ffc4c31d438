"""Analytic solids used as scene geometry.

Every shape exposes vectorized point membership and ray intersection in its
own local frame, plus the rigid pose that maps local to world coordinates.
Boxes may rotate about z; cylinders are vertical; ellipsoids are
axis-aligned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose6D

_EPS = 1e-9


def _vec3(v) -> tuple[float, float, float]:
    v = tuple(float(c) for c in v)
    if len(v) != 3:
        raise ValueError(f"expected 3 components, got {v}")
    return v


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    dims: tuple[float, float, float]  # length (local x), width (local y), height (z)
    yaw: float = 0.0

    type_name = "box"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        object.__setattr__(self, "dims", _vec3(self.dims))
        object.__setattr__(self, "yaw", float(self.yaw))

    @property
    def pose(self) -> Pose6D:
        return Pose6D(*self.center, yaw=self.yaw)

    def moved(self, offset) -> "Box":
        return Box(np.add(self.center, offset), self.dims, self.yaw)

    def half_extents(self) -> np.ndarray:
        """Half extents of the world-frame axis-aligned bounding box."""
        c, s = abs(np.cos(self.yaw)), abs(np.sin(self.yaw))
        hx, hy, hz = np.asarray(self.dims) / 2
        return np.array([c * hx + s * hy, s * hx + c * hy, hz])

    def contains_local(self, p: np.ndarray) -> np.ndarray:
        half = np.asarray(self.dims) / 2
        return np.all(np.abs(p) <= half, axis=-1)

    def hit_local(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        half = np.asarray(self.dims) / 2
        o = np.broadcast_to(o, d.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - o) / d
            t2 = (half - o) / d
        parallel = d == 0
        inside_slab = np.abs(o) <= half
        t1 = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), t1)
        t2 = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), t2)
        tnear = np.minimum(t1, t2).max(axis=-1)
        tfar = np.maximum(t1, t2).min(axis=-1)
        t = np.where(tnear > _EPS, tnear, tfar)
        return np.where((tnear <= tfar) & (t > _EPS), t, np.inf)

    def to_params(self) -> dict:
        return {"center": list(self.center), "dims": list(self.dims), "yaw": self.yaw}


@dataclass(frozen=True)
class Cylinder:
    center: tuple[float, float, float]  # geometric center; axis is vertical
    radius: float
    height: float

    type_name = "cylinder"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "height", float(self.height))

    @property
    def pose(self) -> Pose6D:
        return Pose6D(*self.center)

    def moved(self, offset) -> "Cylinder":
        return Cylinder(np.add(self.center, offset), self.radius, self.height)

    def half_extents(self) -> np.ndarray:
        return np.array([self.radius, self.radius, self.height / 2])

    def contains_local(self, p: np.ndarray) -> np.ndarray:
        return (p[..., 0] ** 2 + p[..., 1] ** 2 <= self.radius**2) & (
            np.abs(p[..., 2]) <= self.height / 2
        )

    def hit_local(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        o = np.broadcast_to(o, d.shape)
        h = self.height / 2
        r2 = self.radius**2
        best = np.full(d.shape[0], np.inf)
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - r2
        disc = b * b - 4 * a * c
        ok = (a > 0) & (disc >= 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        safe_a = np.where(ok, a, 1.0)
        for sign in (-1.0, 1.0):
            t = (-b + sign * sq) / (2 * safe_a)
            z = o[:, 2] + t * d[:, 2]
            good = ok & (t > _EPS) & (np.abs(z) <= h)
            best = np.where(good & (t < best), t, best)
        with np.errstate(divide="ignore", invalid="ignore"):
            for cap in (-h, h):
                t = (cap - o[:, 2]) / d[:, 2]
                x = o[:, 0] + t * d[:, 0]
                y = o[:, 1] + t * d[:, 1]
                good = (d[:, 2] != 0) & (t > _EPS) & (x * x + y * y <= r2)
                best = np.where(good & (t < best), t, best)
        return best

    def to_params(self) -> dict:
        return {"center": list(self.center), "radius": self.radius, "height": self.height}


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]

    type_name = "ellipsoid"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        object.__setattr__(self, "radii", _vec3(self.radii))

    @property
    def pose(self) -> Pose6D:
        return Pose6D(*self.center)

    def moved(self, offset) -> "Ellipsoid":
        return Ellipsoid(np.add(self.center, offset), self.radii)

    def half_extents(self) -> np.ndarray:
        return np.asarray(self.radii, dtype=np.float64)

    def contains_local(self, p: np.ndarray) -> np.ndarray:
        return np.sum((p / np.asarray(self.radii)) ** 2, axis=-1) <= 1.0

    def hit_local(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        r = np.asarray(self.radii)
        o = np.broadcast_to(o / r, d.shape)
        d = d / r
        a = np.sum(d * d, axis=-1)
        b = 2 * np.sum(o * d, axis=-1)
        c = np.sum(o * o, axis=-1) - 1.0
        disc = b * b - 4 * a * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t_near = (-b - sq) / (2 * a)
        t_far = (-b + sq) / (2 * a)
        t = np.where(t_near > _EPS, t_near, t_far)
        return np.where(ok & (t > _EPS), t, np.inf)

    def to_params(self) -> dict:
        return {"center": list(self.center), "radii": list(self.radii)}


Shape = Box | Cylinder | Ellipsoid
SHAPE_TYPES = {cls.type_name: cls for cls in (Box, Cylinder, Ellipsoid)}


def shape_from_dict(doc: dict) -> Shape:
    try:
        cls = SHAPE_TYPES[doc["type"]]
    except KeyError:
        raise ValueError(f"unknown shape type {doc.get('type')!r}") from None
    return cls(**doc["params"])


def shape_to_dict(shape: Shape) -> dict:
    return {"type": shape.type_name, "params": shape.to_params()}


def world_to_local(shape: Shape) -> np.ndarray:
    """4x4 transform taking world coordinates into the shape's local frame."""
    p = shape.pose
    r = p.rotation()
    m = np.eye(4)
    m[:3, :3] = r.T
    m[:3, 3] = -r.T @ p.position
    return m


def ray_hits(shape: Shape, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Nearest positive ray parameter per direction (``inf`` on miss).

    ``origin`` is a single world point, ``dirs`` an (M, 3) array.
    """
    p = shape.pose
    r = p.rotation()
    o_local = r.T @ (np.asarray(origin, dtype=np.float64) - p.position)
    d_local = np.asarray(dirs, dtype=np.float64) @ r
    return shape.hit_local(o_local, d_local)
