"""Procedural driving scenes and exact semantic ground truth.

Object shapes are stored at clock 0; the position of every object at the
scene clock is ``shape.center + velocity * clock`` (constant velocity, planar).
Stepping a scene only advances its clock.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import SceneGenerationError
from .geometry import Pose6D, compose, relative_matrix
from .shapes import Box, Cylinder, Ellipsoid, Shape, shape_from_dict, shape_to_dict
from .voxelgrid import (
    DEFAULT_SPEC,
    PRIORITY_RANK,
    RANK_TO_LABEL,
    GridSpec,
    SemanticGrid,
    SemanticLabel,
)

CAR_DIMS = (4.68, 1.56, 1.6)
SENSOR_HEIGHT = 1.9
GROUND_THICKNESS = 0.3
GT_RADIUS = 70.0


@dataclass(frozen=True)
class SceneObject:
    kind: SemanticLabel
    shape: Shape
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        kind = SemanticLabel(self.kind)
        if kind == SemanticLabel.Empty:
            raise ValueError("scene objects cannot be Empty")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))

    @property
    def is_static(self) -> bool:
        return self.velocity == (0.0, 0.0)

    def at(self, clock: float) -> Shape:
        if self.is_static or clock == 0:
            return self.shape
        return self.shape.moved((self.velocity[0] * clock, self.velocity[1] * clock, 0.0))


@dataclass(frozen=True)
class Agent:
    id: int
    host: int
    sensor_offset: Pose6D = field(default_factory=lambda: Pose6D(z=SENSOR_HEIGHT))


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]
    agents: tuple[Agent, ...] = ()
    clock: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "agents", tuple(self.agents))
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate agent ids {ids}")
        for a in self.agents:
            host = self.objects[a.host]
            if host.kind != SemanticLabel.Car or not isinstance(host.shape, Box):
                raise ValueError(f"agent {a.id} host {a.host} is not a Car box")

    def agent(self, agent_id: int) -> Agent:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(f"no agent with id {agent_id}")

    @property
    def agent_ids(self) -> list[int]:
        return sorted(a.id for a in self.agents)

    def shapes(self) -> list[Shape]:
        return [o.at(self.clock) for o in self.objects]

    def host_pose(self, agent_id: int) -> Pose6D:
        box = self.objects[self.agent(agent_id).host].at(self.clock)
        return Pose6D(*box.center, yaw=box.yaw)

    def sensor_pose(self, agent_id: int) -> Pose6D:
        return compose(self.host_pose(agent_id), self.agent(agent_id).sensor_offset)


def step_scene(s: Scene, dt: float) -> Scene:
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return s
    return replace(s, clock=s.clock + dt)


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_agents: int = 3
    n_background_cars: int = 6
    n_parked_cars: int = 4
    road_width: float = 14.0
    lane_width: float = 3.5
    cross_street_prob: float = 0.5
    building_density: float = 4.0  # buildings per 100 m of frontage, per side
    pole_density: float = 3.0  # per 100 m, per side
    tree_density: float = 5.0  # per 100 m, per side
    speed_range: tuple[float, float] = (5.0, 12.0)
    extent: float = 120.0  # half-size of the generated world, m
    agent_spread: float = 25.0  # agents start within +-agent_spread m of the origin along the road

    def __post_init__(self):
        if not 2 <= self.n_agents <= 7:
            raise ValueError(f"n_agents must be in [2, 7], got {self.n_agents}")
        for name in (
            "n_background_cars",
            "n_parked_cars",
            "building_density",
            "pole_density",
            "tree_density",
            "cross_street_prob",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad speed range {self.speed_range}")
        if self.road_width < self.lane_width:
            raise ValueError("road narrower than one lane")


def _slab(cx: float, cy: float, lx: float, ly: float) -> Box:
    return Box((cx, cy, -GROUND_THICKNESS / 2), (lx, ly, GROUND_THICKNESS))


def _frontage(rng, density: float, lo: float, hi: float, size_range, min_gap: float):
    """Spans [a, b) placed left to right with mean pitch 100/density metres."""
    if density <= 0:
        return []
    pitch = 100.0 / density
    mean_size = sum(size_range) / 2
    max_gap = max(min_gap, 2 * (pitch - mean_size) - min_gap)
    spans = []
    cursor = lo
    while True:
        start = cursor + rng.uniform(min_gap, max_gap)
        end = start + rng.uniform(*size_range)
        if end > hi:
            return spans
        spans.append((start, end))
        cursor = end


def build_scene(cfg: SceneConfig) -> Scene:
    """Generate a deterministic street scene from ``cfg.seed``.

    Object order: terrain, main road, optional cross street, buildings,
    poles, trees (trunk then canopy), parked cars, agent cars, moving
    background cars.
    """
    rng = np.random.default_rng(cfg.seed)
    E = cfg.extent
    half_road = cfg.road_width / 2
    objects: list[SceneObject] = [
        SceneObject(SemanticLabel.Terrain, _slab(0.0, 0.0, 2 * E, 2 * E)),
        SceneObject(SemanticLabel.Road, _slab(0.0, 0.0, 2 * E, cfg.road_width)),
    ]
    cross_x = None
    if cfg.cross_street_prob > 0 and rng.random() < cfg.cross_street_prob:
        cross_x = float(rng.uniform(-40.0, 40.0))
        objects.append(SceneObject(SemanticLabel.Road, _slab(cross_x, 0.0, cfg.road_width, 2 * E)))

    def clear_of_cross(a: float, b: float, margin: float) -> bool:
        if cross_x is None:
            return True
        return b < cross_x - half_road - margin or a > cross_x + half_road + margin

    parking_y = half_road + 1.1
    pole_y = half_road + 2.4
    tree_y = half_road + 3.4

    for side in (-1.0, 1.0):
        spans = [
            s for s in _frontage(rng, cfg.building_density, -E, E, (8.0, 20.0), 2.0)
            if clear_of_cross(*s, 2.0)
        ]
        if cfg.building_density > 0 and side > 0:
            # Guarantee one occluding building beside the road near the origin.
            if not any(a < 20.0 and b > -20.0 for a, b in spans):
                a = float(rng.uniform(-15.0, 0.0))
                spans.append((a, a + float(rng.uniform(10.0, 15.0))))
                spans.sort()
        for a, b in spans:
            setback = rng.uniform(5.5, 8.0)
            depth = rng.uniform(10.0, 20.0)
            height = rng.uniform(6.0, 25.0)
            y = side * (half_road + setback + depth / 2)
            objects.append(
                SceneObject(
                    SemanticLabel.Building,
                    Box(((a + b) / 2, y, height / 2), (b - a, depth, height)),
                )
            )

    for side in (-1.0, 1.0):
        for a, b in _frontage(rng, cfg.pole_density, -E, E, (0.0, 0.0), 5.0):
            if clear_of_cross(a, b, 1.0):
                objects.append(
                    SceneObject(SemanticLabel.Pole, Cylinder((a, side * pole_y, 4.0), 0.35, 8.0))
                )

    for side in (-1.0, 1.0):
        for a, b in _frontage(rng, cfg.tree_density, -E, E, (0.0, 0.0), 4.0):
            if not clear_of_cross(a, b, 3.0):
                continue
            trunk_h = rng.uniform(2.0, 3.0)
            rc = rng.uniform(1.8, 3.0)
            rz = rng.uniform(1.5, 2.5)
            y = side * (tree_y + rng.uniform(-0.3, 0.3))
            objects.append(
                SceneObject(SemanticLabel.Vegetation, Cylinder((a, y, trunk_h / 2), 0.4, trunk_h))
            )
            objects.append(
                SceneObject(SemanticLabel.Vegetation, Ellipsoid((a, y, trunk_h + rz), (rc, rc, rz)))
            )

    n_lanes = max(1, int(cfg.road_width // cfg.lane_width))
    lane_pitch = cfg.road_width / n_lanes
    lanes = [-half_road + lane_pitch * (i + 0.5) for i in range(n_lanes)]
    length = CAR_DIMS[0]
    placed: list[tuple[float, float]] = []  # (x, y) of car centers, for overlap checks

    def free(x: float, y: float) -> bool:
        return all(abs(x - px) >= length + 2.0 or abs(y - py) >= CAR_DIMS[1] + 0.5 for px, py in placed)

    def place(kind_desc: str, x_lo: float, x_hi: float, ys, moving: bool):
        for _ in range(200):
            y = float(ys[rng.integers(len(ys))])
            x = float(rng.uniform(x_lo, x_hi))
            if not free(x, y) or (not moving and not clear_of_cross(x - length, x + length, 1.0)):
                continue
            placed.append((x, y))
            if moving:
                heading = 0.0 if y < 0 else math.pi
                speed = float(rng.uniform(*cfg.speed_range))
                vel = (speed * math.cos(heading), speed * math.sin(heading))
            else:
                heading, vel = (0.0 if y < 0 else math.pi), (0.0, 0.0)
            return SceneObject(
                SemanticLabel.Car, Box((x, y, CAR_DIMS[2] / 2), CAR_DIMS, heading), vel
            )
        raise SceneGenerationError(
            f"could not place {kind_desc} without overlapping another car after 200 tries"
        )

    for i in range(cfg.n_parked_cars):
        objects.append(place(f"parked car {i}", -E + 10, E - 10, (-parking_y, parking_y), False))

    agents = []
    for i in range(cfg.n_agents):
        spread = 5.0 if i == 0 else cfg.agent_spread
        objects.append(place(f"agent {i} of {cfg.n_agents}", -spread, spread, lanes, True))
        agents.append(Agent(i, len(objects) - 1))

    for i in range(cfg.n_background_cars):
        objects.append(place(f"background car {i}", -E + 10, E - 10, lanes, True))

    return Scene(tuple(objects), tuple(agents), 0.0, cfg.seed)


@lru_cache(maxsize=4)
def _flat_centers(spec: GridSpec) -> np.ndarray:
    c = spec.centers().reshape(-1, 3)
    c.flags.writeable = False
    return c


def _planar_box_distance(point: np.ndarray, center: np.ndarray, half: np.ndarray) -> float:
    d = np.maximum(np.abs(point[:2] - center[:2]) - half[:2], 0.0)
    return float(np.hypot(d[0], d[1]))


def ground_truth_grid(
    s: Scene,
    ego_pose: Pose6D,
    spec: GridSpec = DEFAULT_SPEC,
    radius: float = GT_RADIUS,
) -> SemanticGrid:
    """Semantic occupancy in ``ego_pose``'s frame by voxel-center membership.

    Objects whose planar bounding box lies farther than ``radius`` from the
    ego are dropped. Overlaps resolve by class priority; only in-bounds
    voxels are produced.
    """
    rank = np.zeros(spec.size, dtype=np.int8)
    ego_pos = ego_pose.position
    ego_rot = ego_pose.rotation()
    origin = np.asarray(spec.origin)
    vsize = np.asarray(spec.voxel_size)
    dims = np.asarray(spec.dims)
    centers = _flat_centers(spec)

    for obj in s.objects:
        shape = obj.at(s.clock)
        center = np.asarray(shape.center)
        half = shape.half_extents()
        if _planar_box_distance(ego_pos, center, half) > radius:
            continue
        corners = center + half * np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
        )
        local_corners = (corners - ego_pos) @ ego_rot
        lo = np.floor((local_corners.min(axis=0) - origin) / vsize - 0.5).astype(int)
        hi = np.ceil((local_corners.max(axis=0) - origin) / vsize - 0.5).astype(int) + 1
        lo = np.clip(lo, 0, dims)
        hi = np.clip(hi, 0, dims)
        if np.any(hi <= lo):
            continue
        ix, iy, iz = (np.arange(a, b) for a, b in zip(lo, hi))
        flat = ((iz[:, None, None] * spec.ny + iy[None, :, None]) * spec.nx + ix[None, None, :]).ravel()
        m = relative_matrix(ego_pose, shape.pose)
        local = centers[flat] @ m[:3, :3].T + m[:3, 3]
        inside = flat[shape.contains_local(local)]
        if inside.size:
            r = PRIORITY_RANK[obj.kind]
            rank[inside] = np.maximum(rank[inside], r)
    return SemanticGrid(spec, RANK_TO_LABEL[rank].reshape(spec.shape))


def scene_to_dict(s: Scene) -> dict:
    return {
        "seed": s.seed,
        "clock": s.clock,
        "objects": [
            {
                "kind": obj.kind.name,
                "shape": shape_to_dict(obj.shape),
                "velocity": list(obj.velocity),
            }
            for obj in s.objects
        ],
        "agents": [
            {"id": a.id, "host": a.host, "sensor_offset": list(a.sensor_offset.as_tuple())}
            for a in s.agents
        ],
    }


def scene_from_dict(doc: dict) -> Scene:
    objects = tuple(
        SceneObject(SemanticLabel[o["kind"]], shape_from_dict(o["shape"]), tuple(o["velocity"]))
        for o in doc["objects"]
    )
    agents = tuple(
        Agent(int(a["id"]), int(a["host"]), Pose6D(*a["sensor_offset"])) for a in doc["agents"]
    )
    return Scene(objects, agents, float(doc["clock"]), doc.get("seed"))


def scene_to_json(s: Scene) -> str:
    return json.dumps(scene_to_dict(s), indent=1) + "\n"


def save_scene(s: Scene, path) -> None:
    Path(path).write_text(scene_to_json(s))


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))
