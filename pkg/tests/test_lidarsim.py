import math

import numpy as np
import pytest

from collabssc.geometry import IDENTITY, Pose6D
from collabssc.lidarsim import LidarSpec, cast_rays, ray_hit, scan, scan_agent
from collabssc.shapes import Box, Cylinder, Ellipsoid, ray_hits
from collabssc.voxelgrid import SemanticLabel as L
from collabssc.worldsim import Scene, SceneConfig, SceneObject, build_scene


def march_box(o_local, d_local, half, t_max, step=1e-3):
    """First 1 mm sample inside an axis-aligned box, per ray (inf on miss)."""
    n = len(o_local)
    hit = np.full(n, np.inf)
    live = np.ones(n, dtype=bool)
    t = step
    while t <= t_max and live.any():
        p = o_local[live] + t * d_local[live]
        inside = np.all(np.abs(p) <= half[live], axis=1)
        idx = np.flatnonzero(live)[inside]
        hit[idx] = t
        live[idx] = False
        t += step
    return hit


def test_ray_hit_axis_aligned_box():
    box = Box((5, 0, 0), (1, 1, 1))
    assert ray_hit((0, 0, 0), (1, 0, 0), box) == pytest.approx(4.5)
    assert ray_hit((0, 0, 0), (-1, 0, 0), box) is None
    with pytest.raises(ValueError):
        ray_hit((0, 0, 0), (2, 0, 0), box)


def test_ray_hit_accepts_scene_object():
    obj = SceneObject(L.Car, Box((5, 0, 0), (1, 1, 1)))
    assert ray_hit((0, 0, 0), (1, 0, 0), obj) == pytest.approx(4.5)


def test_ray_box_matches_marching_oracle():
    rng = np.random.default_rng(11)
    n = 10_000
    # box centers 3-8 m away, so the ray origin is never inside a box
    u = rng.normal(size=(n, 3))
    centers = u / np.linalg.norm(u, axis=1, keepdims=True) * rng.uniform(3, 8, (n, 1))
    dims = rng.uniform(0.3, 3.0, (n, 3))
    yaws = rng.uniform(-math.pi, math.pi, n)
    # aim near each box so most rays hit; some miss
    targets = centers + rng.normal(0, 0.4, (n, 3)) * dims
    dirs = targets / np.linalg.norm(targets, axis=1, keepdims=True)

    analytic = np.array(
        [ray_hits(Box(c, s, y), np.zeros(3), d[None])[0] for c, s, y, d in zip(centers, dims, yaws, dirs)]
    )
    # move each ray into its box frame with an independently built rotation
    cy, sy = np.cos(yaws), np.sin(yaws)
    rot_t = np.stack(
        [np.stack([cy, sy, 0 * cy], 1), np.stack([-sy, cy, 0 * cy], 1), np.tile([0, 0, 1.0], (n, 1))], 1
    )
    o_local = np.einsum("nij,nj->ni", rot_t, -centers)
    d_local = np.einsum("nij,nj->ni", rot_t, dirs)
    marched = march_box(o_local, d_local, dims / 2, t_max=12.0)

    both = np.isfinite(analytic) & np.isfinite(marched)
    assert both.sum() > 5000
    assert np.all(np.abs(analytic[both] - marched[both]) <= 2e-3)
    # a marched hit is always an analytic hit
    assert not np.any(np.isfinite(marched) & ~np.isfinite(analytic))
    # analytic-only hits are grazing: the chord is shorter than the step
    grazing = np.isfinite(analytic) & ~np.isfinite(marched)
    assert grazing.sum() <= 0.005 * n
    inflated = march_box(o_local[grazing], d_local[grazing], dims[grazing] / 2 + 2e-3, 12.0)
    assert np.all(np.abs(inflated - analytic[grazing]) <= 2e-3)


@pytest.mark.parametrize(
    "shape", [Cylinder((3, 1, 0), 0.8, 2.0), Ellipsoid((3, -1, 0.5), (1.0, 0.6, 0.8))]
)
def test_ray_quadric_matches_marching(shape):
    rng = np.random.default_rng(5)
    c = np.asarray(shape.center)
    dirs = c / np.linalg.norm(c) + rng.normal(0, 0.15, (2000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    analytic = ray_hits(shape, np.zeros(3), dirs)
    t = np.arange(1, 8001) * 1e-3
    pts = t[None, :, None] * dirs[:, None, :] - np.asarray(shape.center)
    mask = shape.contains_local(pts)
    first = np.where(mask.any(axis=1), t[np.argmax(mask, axis=1)], np.inf)
    both = np.isfinite(analytic) & np.isfinite(first)
    assert both.sum() > 200
    assert np.all(np.abs(analytic[both] - first[both]) <= 2e-3)
    assert not np.any(np.isfinite(first) & ~np.isfinite(analytic))


def test_scan_empty_scene():
    c = scan(Scene(()), Pose6D(z=2.0))
    assert len(c) == 0


def test_ground_slab_downward_ray():
    ground = SceneObject(L.Terrain, Box((0, 0, -0.15), (1e4, 1e4, 0.3)))
    s = Scene((ground,))
    t, lab = cast_rays(s, Pose6D(z=1.9), np.array([[0.0, 0.0, -1.0]]), 120.0)
    assert t[0] == pytest.approx(1.9)
    assert lab[0] == L.Terrain


def test_equal_range_resolves_by_priority():
    road = SceneObject(L.Road, Box((0, 0, -0.15), (100, 100, 0.3)))
    terrain = SceneObject(L.Terrain, Box((0, 0, -0.15), (100, 100, 0.3)))
    for objs in ((road, terrain), (terrain, road)):
        _, lab = cast_rays(Scene(objs), Pose6D(z=1.0), np.array([[0.0, 0.0, -1.0]]), 50.0)
        assert lab[0] == L.Road


def test_occluded_box_produces_no_points():
    occluder = SceneObject(L.Building, Box((10, 0, 2), (2, 20, 8)))
    hidden = SceneObject(L.Car, Box((20, 0, 0.8), (4.68, 1.56, 1.6)))
    pose = Pose6D(z=1.9)
    without = scan(Scene((hidden,)), pose)
    with_occ = scan(Scene((occluder, hidden)), pose)
    assert np.count_nonzero(without.labels == L.Car) > 0
    assert np.count_nonzero(with_occ.labels == L.Car) == 0


@pytest.fixture(scope="module")
def seed_scene():
    return build_scene(SceneConfig(seed=3))


def test_scan_properties(seed_scene):
    spec = LidarSpec()
    c = scan_agent(seed_scene, 0, spec)
    assert 10_000 <= len(c) <= spec.channels * spec.azimuth_steps
    assert np.all(c.labels > 0)
    assert np.all(np.linalg.norm(c.xyz, axis=1) <= spec.max_range + 1e-9)


def test_scan_occlusion_correct(seed_scene):
    pose = seed_scene.sensor_pose(0)
    host = seed_scene.agent(0).host
    c = scan_agent(seed_scene, 0)
    rng = np.random.default_rng(0)
    pick = rng.choice(len(c), 300, replace=False)
    origin = pose.position
    for i in pick:
        p = c.xyz[i]
        r = np.linalg.norm(p)
        d_world = pose.rotation() @ (p / r)
        for j, shape in enumerate(seed_scene.shapes()):
            if j == host:
                continue
            t = ray_hits(shape, origin, d_world[None])[0]
            assert not t < r - 1e-9


def test_scan_rigid_invariance():
    objs = (
        SceneObject(L.Terrain, Box((0, 0, -0.15), (300, 300, 0.3))),
        SceneObject(L.Building, Box((12, 6, 4), (8, 5, 8), 0.3)),
        SceneObject(L.Pole, Cylinder((-5, 3, 4), 0.35, 8)),
        SceneObject(L.Vegetation, Ellipsoid((3, -9, 4), (2, 2, 1.5))),
    )
    pose = Pose6D(1, 2, 1.9, 0.2)
    base = scan(Scene(objs), pose)
    dx, dy, dyaw = 37.0, -12.0, 0.7
    c, s = math.cos(dyaw), math.sin(dyaw)

    def move(xyz):
        x, y, z = xyz
        return (c * x - s * y + dx, s * x + c * y + dy, z)

    moved = []
    for o in objs:
        sh = o.shape
        if isinstance(sh, Box):
            sh = Box(move(sh.center), sh.dims, sh.yaw + dyaw)
        elif isinstance(sh, Cylinder):
            sh = Cylinder(move(sh.center), sh.radius, sh.height)
        else:
            sh = Ellipsoid(move(sh.center), sh.radii)
        moved.append(SceneObject(o.kind, sh))
    p2 = Pose6D(*move((pose.x, pose.y, pose.z)), yaw=pose.yaw + dyaw)
    out = scan(Scene(tuple(moved)), p2)
    assert len(out) == len(base)
    assert np.array_equal(out.labels, base.labels)
    np.testing.assert_allclose(out.xyz, base.xyz, atol=1e-6)


def test_lidar_spec_directions():
    d = LidarSpec().directions()
    assert d.shape == (32 * 720, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
    elev = np.degrees(np.arcsin(d[:, 2]))
    assert elev.min() == pytest.approx(-25) and elev.max() == pytest.approx(5)
    with pytest.raises(ValueError):
        LidarSpec(channels=0)
