import math

import numpy as np
import pytest

import beamforge as bf

from conftest import walled_scene


def test_horizontal_beam_hits_box_near_face():
    # Box near face at x = 10; horizontal rays never reach the ground plane.
    scene = bf.Scene(
        ground_height=-1.7, boxes=(bf.SceneBox(12.0, 0.0, 4.0, 2.0, -1.7, 1.5),)
    )
    cfg = bf.SimConfig(
        beam_angles=(0.0,), points_per_beam=2000, scene=scene, seed=1
    )
    scan = bf.simulate_scan(cfg)
    assert len(scan.cloud) > 0
    assert scan.no_hit_count == 2000 - len(scan.cloud)
    xyz = scan.cloud.xyz
    np.testing.assert_allclose(xyz[:, 0], 10.0, atol=1e-9)  # on the near face
    assert np.all(np.abs(xyz[:, 1]) <= 1.0 + 1e-9)
    ranges = np.linalg.norm(xyz, axis=1)
    assert np.all(ranges >= 10.0 - 1e-9)
    assert np.all(ranges <= 10.0 / math.cos(math.atan2(1.0, 10.0)) + 1e-9)


def test_noiseless_zeniths_recover_beam_table_exactly():
    angles = tuple(math.radians(a) for a in (-10.0, -5.0, 0.5, 2.0))
    cfg = bf.SimConfig(
        beam_angles=angles, points_per_beam=100, scene=walled_scene(), seed=2
    )
    scan = bf.simulate_scan(cfg)
    batch = bf.batch_to_spherical(scan.cloud)
    for b, angle in enumerate(angles):
        got = batch.zenith[scan.cloud.beam_labels == b]
        np.testing.assert_allclose(got, angle, atol=1e-12)


def test_kitti_preset_statistics(kitti, kitti_sim_scan):
    scan = kitti_sim_scan
    assert len(scan.cloud) <= kitti.beam_count * int(kitti.points_per_beam)
    stats = bf.sensor_stats(scan.truth)
    assert stats.beam_count == 64
    assert stats.vfov[0] == pytest.approx(math.radians(-23.6), abs=1e-12)
    assert stats.vfov[1] == pytest.approx(math.radians(3.2), abs=1e-12)
    # walled scene: every ray returns
    assert stats.mean_points_per_beam == pytest.approx(1863, abs=1e-9)


def test_determinism_bit_identical():
    cfg = bf.SimConfig(
        beam_count=8,
        vfov=(math.radians(-15.0), math.radians(1.0)),
        points_per_beam=500,
        zenith_noise=math.radians(0.05),
        azimuth_jitter=math.radians(0.02),
        dropout_rate=0.1,
        scene=walled_scene(),
        seed=9,
    )
    a = bf.simulate_scan(cfg)
    b = bf.simulate_scan(cfg)
    assert np.array_equal(a.cloud.xyz, b.cloud.xyz)
    assert np.array_equal(a.cloud.beam_labels, b.cloud.beam_labels)
    assert a.no_hit_count == b.no_hit_count
    assert a.dropout_count == b.dropout_count


def test_points_lie_exactly_on_scene_surfaces(small_sim_scan):
    scene = walled_scene()
    xyz = small_sim_scan.cloud.xyz
    residual = np.full(len(xyz), np.inf)
    if scene.ground_height is not None:
        residual = np.minimum(residual, np.abs(xyz[:, 2] - scene.ground_height))
    for box in scene.boxes:
        lo = np.array([box.cx - box.dx / 2, box.cy - box.dy / 2, box.z_min])
        hi = np.array([box.cx + box.dx / 2, box.cy + box.dy / 2, box.z_max])
        inside = np.all((xyz >= lo - 1e-9) & (xyz <= hi + 1e-9), axis=1)
        face = np.minimum(np.abs(xyz - lo), np.abs(xyz - hi)).min(axis=1)
        residual = np.minimum(residual, np.where(inside, face, np.inf))
    assert residual.max() < 1e-9


def test_zenith_noise_stays_near_beam_angle():
    sigma = math.radians(0.05)
    cfg = bf.SimConfig(
        beam_count=12,
        vfov=(math.radians(-18.0), math.radians(2.0)),
        points_per_beam=2000,
        zenith_noise=sigma,
        scene=walled_scene(),
        seed=21,
    )
    scan = bf.simulate_scan(cfg)
    batch = bf.batch_to_spherical(scan.cloud)
    truth_angles = scan.truth.centers[scan.cloud.beam_labels]
    err = np.abs(batch.zenith - truth_angles)
    assert (err <= 4.0 * sigma).mean() >= 0.999
    assert err.max() <= 6.0 * sigma


def test_azimuth_jitter_stays_within_slot():
    jitter = math.radians(0.02)
    per_beam = 360
    cfg = bf.SimConfig(
        beam_angles=(math.radians(-5.0),),
        points_per_beam=per_beam,
        azimuth_jitter=jitter,
        scene=walled_scene(),
        seed=4,
    )
    scan = bf.simulate_scan(cfg)
    batch = bf.batch_to_spherical(scan.cloud)
    slots = -math.pi + (np.arange(per_beam) + 0.5) * (2 * math.pi / per_beam)
    # nearest slot distance must stay within the jitter half-width
    diff = np.abs(batch.azimuth[:, None] - slots[None, :])
    diff = np.minimum(diff, 2 * math.pi - diff)
    assert diff.min(axis=1).max() <= jitter + 1e-12


def test_dropout_reduces_counts():
    base = bf.SimConfig(
        beam_count=4,
        vfov=(math.radians(-10.0), math.radians(0.0)),
        points_per_beam=1000,
        scene=walled_scene(),
        seed=6,
    )
    full = bf.simulate_scan(base)
    import dataclasses

    dropped = bf.simulate_scan(dataclasses.replace(base, dropout_rate=0.25))
    assert len(dropped.cloud) < len(full.cloud)
    frac = len(dropped.cloud) / len(full.cloud)
    assert 0.70 <= frac <= 0.80
    assert dropped.dropout_count == len(full.cloud) - len(dropped.cloud)


def test_perturbed_spacing_sorted_and_deterministic():
    cfg = bf.SimConfig(
        beam_count=32,
        vfov=(math.radians(-20.0), math.radians(0.0)),
        spacing_sigma=math.radians(0.1),
        points_per_beam=10,
        scene=walled_scene(),
        seed=13,
    )
    a = cfg.resolved_beam_angles()
    b = cfg.resolved_beam_angles()
    assert np.array_equal(a, b)
    assert np.all(np.diff(a) > 0)
    uniform = np.linspace(math.radians(-20.0), 0.0, 32)
    assert not np.allclose(a, uniform, atol=1e-6)


def test_config_file_round_trip(tmp_path):
    cfg = bf.SimConfig(
        beam_count=16,
        vfov=(math.radians(-12.0), math.radians(3.0)),
        points_per_beam=77,
        zenith_noise=math.radians(0.03),
        azimuth_jitter=math.radians(0.01),
        dropout_rate=0.05,
        scene=walled_scene(),
        seed=33,
    )
    path = tmp_path / "sim.cfg"
    bf.save_sim_config(cfg, path)
    loaded = bf.load_sim_config(path)
    # degrees in the file cost at most 1 ulp on the angles
    assert loaded.points_per_beam == cfg.points_per_beam
    assert loaded.seed == cfg.seed
    assert loaded.scene == cfg.scene
    assert loaded.vfov == pytest.approx(cfg.vfov, abs=1e-12)
    # the same file always produces the same scan, bit for bit
    again = bf.load_sim_config(path)
    scan_a = bf.simulate_scan(loaded)
    scan_b = bf.simulate_scan(again)
    assert np.array_equal(scan_a.cloud.xyz, scan_b.cloud.xyz)


def test_shipped_presets_load():
    from beamforge.resampler import builtin_profile_dir

    for name in ("sim_kitti.cfg", "sim_waymo.cfg", "sim_nuscenes.cfg"):
        cfg = bf.load_sim_config(builtin_profile_dir() / name)
        assert cfg.beam_count in (32, 64)


def test_bad_config_raises_profile_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("beam_count = sixty-four\nvfov_deg = -10 2\n")
    with pytest.raises(bf.ProfileError):
        bf.load_sim_config(path)
