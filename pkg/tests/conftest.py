import math

import numpy as np
import pytest

import beamforge as bf


def walled_scene(ground: float = -1.73) -> bf.Scene:
    """Ground plane plus an enclosure box (sensor inside) and two obstacles,
    so every beam of any realistic VFOV gets a return and object edges
    create range discontinuities."""
    return bf.Scene(
        ground_height=ground,
        boxes=(
            bf.SceneBox(0.0, 0.0, 160.0, 160.0, ground, 30.0),
            bf.SceneBox(12.0, 0.0, 4.2, 1.9, ground, 0.2),
            bf.SceneBox(-20.0, 8.0, 2.0, 2.0, ground, 2.2),
        ),
    )


@pytest.fixture(scope="session")
def waymo() -> bf.SensorProfile:
    return bf.resolve_profile("waymo")


@pytest.fixture(scope="session")
def kitti() -> bf.SensorProfile:
    return bf.resolve_profile("kitti")


@pytest.fixture(scope="session")
def nuscenes() -> bf.SensorProfile:
    return bf.resolve_profile("nuscenes")


@pytest.fixture(scope="session")
def small_sim_scan() -> bf.SimulatedScan:
    """16 beams x 400 points, mild zenith noise; cheap enough for many tests."""
    cfg = bf.SimConfig(
        beam_count=16,
        vfov=(math.radians(-20.0), math.radians(2.0)),
        points_per_beam=400,
        zenith_noise=math.radians(0.04),
        scene=walled_scene(),
        seed=11,
    )
    return bf.simulate_scan(cfg)


@pytest.fixture(scope="session")
def kitti_sim_scan(kitti) -> bf.SimulatedScan:
    """Full KITTI-preset scan: 64 beams x 1863 points, noise = gap/10."""
    gap = kitti.vfov_span / (kitti.beam_count - 1)
    cfg = bf.SimConfig(
        beam_count=kitti.beam_count,
        vfov=kitti.vfov,
        points_per_beam=int(kitti.points_per_beam),
        zenith_noise=gap / 10.0,
        scene=walled_scene(),
        seed=7,
    )
    return bf.simulate_scan(cfg)


@pytest.fixture(scope="session")
def waymo_sim_scan(waymo) -> bf.SimulatedScan:
    gap = waymo.vfov_span / (waymo.beam_count - 1)
    cfg = bf.SimConfig(
        beam_count=waymo.beam_count,
        vfov=waymo.vfov,
        points_per_beam=int(waymo.points_per_beam),
        zenith_noise=gap / 10.0,
        scene=walled_scene(ground=-2.0),
        seed=5,
    )
    return bf.simulate_scan(cfg)


def random_cloud(
    rng: np.random.Generator,
    n: int,
    beams: int | None = None,
    with_intensity: bool = True,
) -> bf.PointCloud:
    """Random finite cloud away from the vertical axis."""
    azim = rng.uniform(-math.pi, math.pi, n)
    zen = rng.uniform(-1.2, 1.2, n)
    rng_m = rng.uniform(0.5, 90.0, n)
    x, y, z = bf.spherical_to_cartesian(zen, azim, rng_m)
    labels = None
    if beams is not None:
        labels = rng.integers(0, beams, n).astype(np.int32)
        cover = min(beams, n)
        labels[:cover] = np.arange(cover)  # populate beams densely from 0
    intensity = rng.uniform(0.0, 1.0, n) if with_intensity else None
    return bf.PointCloud(
        xyz=np.stack([x, y, z], axis=1), intensity=intensity, beam_labels=labels
    )
