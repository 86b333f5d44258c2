import math

import numpy as np
import pytest

import beamforge as bf


def _profile(name, beams, lo_deg, hi_deg, ppb):
    return bf.SensorProfile(
        name=name,
        beam_count=beams,
        vfov=(math.radians(lo_deg), math.radians(hi_deg)),
        points_per_beam=ppb,
    )


def test_equivalent_beams_cross_sensor(waymo, nuscenes):
    assert bf.equivalent_beams(waymo, nuscenes) == 16


def test_equivalent_beams_identical_vfov():
    a = _profile("a", 64, -20.0, 0.0, 1000)
    b = _profile("b", 32, -20.0, 0.0, 500)
    assert bf.equivalent_beams(a, b) == 32


def test_equivalent_beams_rounds_half_away():
    src = _profile("s", 64, -10.0, 0.0, 1000)  # span 10
    tgt = _profile("t", 30, -40.0, 0.0, 500)  # span 40 -> 30 * 0.25 = 7.5
    assert bf.equivalent_beams(src, tgt) == 8


def test_plan_stride_halving(waymo):
    target = _profile("half", 32, math.degrees(waymo.vfov[0]), math.degrees(waymo.vfov[1]), 2258)
    plan = bf.plan_resample(waymo, target)
    assert plan.equivalent_beams == 32
    assert plan.keep_beam_indices.tolist() == list(range(0, 64, 2))
    assert plan.per_beam_keep_ratio == 1.0


def test_plan_keep_ratio_from_point_density(waymo, nuscenes):
    plan = bf.plan_resample(waymo, nuscenes)
    assert plan.per_beam_keep_ratio == pytest.approx(1084 / 2258)
    assert round(plan.per_beam_keep_ratio, 3) == 0.480


def test_plan_identity(waymo):
    plan = bf.plan_resample(waymo, waymo)
    assert plan.is_identity
    assert plan.keep_beam_indices.tolist() == list(range(64))
    assert plan.per_beam_keep_ratio == 1.0


def test_plan_refuses_upsampling(waymo, nuscenes):
    with pytest.raises(bf.UpsampleRequestedError):
        bf.plan_resample(nuscenes, waymo)  # would need 128 beams from 32


def test_ratio_clamps_at_one():
    sparse = _profile("sparse", 64, -20.0, 0.0, 500)
    dense = _profile("dense", 64, -20.0, 0.0, 2000)
    plan = bf.plan_resample(sparse, dense)
    assert plan.per_beam_keep_ratio == 1.0


def test_apply_identity_plan_keeps_point_set(small_sim_scan, waymo):
    scan = small_sim_scan
    src = _profile("sim", 16, -20.0, 2.0, 400)
    plan = bf.plan_resample(src, src)
    out = bf.apply_resample(scan.cloud, scan.truth, plan)
    assert len(out) == len(scan.cloud)
    # same point set (order may change within beams)
    a = set(map(tuple, np.round(scan.cloud.xyz, 9)))
    b = set(map(tuple, np.round(out.xyz, 9)))
    assert a == b
    assert out.beam_labels.max() == 15


def test_apply_keeps_even_beams(small_sim_scan):
    scan = small_sim_scan
    src = _profile("sim", 16, -20.0, 2.0, 400)
    plan = bf.plan_for_beam_target(src, 8, 1.0)
    out = bf.apply_resample(scan.cloud, scan.truth, plan)
    kept_truth = {0, 2, 4, 6, 8, 10, 12, 14}
    assert set(plan.keep_beam_indices.tolist()) == kept_truth
    # per-beam counts unchanged for kept beams
    for new_label, old_beam in enumerate(plan.keep_beam_indices):
        n_new = int((out.beam_labels == new_label).sum())
        n_old = int((scan.truth.assignments == old_beam).sum())
        assert n_new == n_old


def test_apply_half_ratio_counts_and_azimuth_spread():
    cfg = bf.SimConfig(
        beam_count=4,
        vfov=(math.radians(-8.0), 0.0),
        points_per_beam=1000,
        scene=bf.Scene(boxes=(bf.SceneBox(0, 0, 100, 100, -2, 20),)),
        seed=2,
    )
    scan = bf.simulate_scan(cfg)
    src = _profile("sim4", 4, -8.0, 0.0, 1000)
    plan = bf.plan_for_beam_target(src, 4, 0.5)
    out = bf.apply_resample(scan.cloud, scan.truth, plan)
    batch = bf.batch_to_spherical(out)
    for b in range(4):
        mask = out.beam_labels == b
        n_orig = int((scan.truth.assignments == b).sum())
        assert abs(int(mask.sum()) - 0.5 * n_orig) <= 1
        phi = batch.azimuth[mask]
        assert np.all(np.diff(phi) >= 0)  # azimuth-sorted output
        gaps = np.diff(phi)
        assert gaps.max() <= 2.5 * gaps.mean()


def test_stats_alignment_invariant(waymo_sim_scan, waymo, nuscenes):
    plan = bf.plan_resample(waymo, nuscenes)
    out = bf.apply_resample(waymo_sim_scan.cloud, waymo_sim_scan.truth, plan)
    model = bf.model_from_labeled_cloud(out, plan.equivalent_beams)
    stats = bf.sensor_stats(model)
    assert stats.beam_count == 16
    expected = plan.per_beam_keep_ratio * waymo.points_per_beam
    assert abs(stats.mean_points_per_beam - expected) <= 1.0


def test_idempotence_of_identity_plan(small_sim_scan):
    src = _profile("sim", 16, -20.0, 2.0, 400)
    plan = bf.plan_resample(src, src)
    once = bf.apply_resample(small_sim_scan.cloud, small_sim_scan.truth, plan)
    model = bf.model_from_labeled_cloud(once, 16)
    twice = bf.apply_resample(once, model, plan)
    assert np.array_equal(once.xyz, twice.xyz)
    assert np.array_equal(once.beam_labels, twice.beam_labels)


def test_subset_and_determinism(small_sim_scan):
    src = _profile("sim", 16, -20.0, 2.0, 400)
    tgt = _profile("tgt", 8, -20.0, 2.0, 150)
    plan = bf.plan_resample(src, tgt)
    a = bf.apply_resample(small_sim_scan.cloud, small_sim_scan.truth, plan)
    b = bf.apply_resample(small_sim_scan.cloud, small_sim_scan.truth, plan)
    assert np.array_equal(a.xyz, b.xyz)
    source_set = set(map(tuple, small_sim_scan.cloud.xyz))
    assert set(map(tuple, a.xyz)) <= source_set


def test_apply_mismatched_model(small_sim_scan):
    src = _profile("sim", 16, -20.0, 2.0, 400)
    plan = bf.plan_resample(src, src)
    bogus = bf.BeamModel.from_assignments(
        np.linspace(-0.3, 0.0, 16), np.zeros(3, dtype=np.int32)
    )
    with pytest.raises(bf.ModelCloudMismatchError):
        bf.apply_resample(small_sim_scan.cloud, bogus, plan)


def test_profile_file_round_trip(tmp_path):
    p = _profile("custom", 40, -25.0, 5.0, 900.5)
    path = tmp_path / "custom.profile"
    bf.save_profile(p, path)
    q = bf.load_profile(path)
    assert q.name == "custom"
    assert q.beam_count == 40
    assert q.vfov == pytest.approx(p.vfov, abs=1e-12)
    assert q.points_per_beam == 900.5


def test_builtin_profiles_match_published_sensors(waymo, kitti, nuscenes):
    assert (waymo.beam_count, waymo.points_per_beam) == (64, 2258)
    assert math.degrees(waymo.vfov[0]) == pytest.approx(-17.6)
    assert math.degrees(waymo.vfov[1]) == pytest.approx(2.4)
    assert (kitti.beam_count, kitti.points_per_beam) == (64, 1863)
    assert math.degrees(kitti.vfov[0]) == pytest.approx(-23.6)
    assert math.degrees(kitti.vfov[1]) == pytest.approx(3.2)
    assert (nuscenes.beam_count, nuscenes.points_per_beam) == (32, 1084)
    assert math.degrees(nuscenes.vfov[0]) == pytest.approx(-30.0)
    assert math.degrees(nuscenes.vfov[1]) == pytest.approx(10.0)


def test_resolve_profile_search_path(tmp_path):
    custom = _profile("mine", 8, -5.0, 5.0, 10)
    bf.save_profile(custom, tmp_path / "mine.profile")
    got = bf.resolve_profile("mine", str(tmp_path))
    assert got.beam_count == 8
    with pytest.raises(bf.ProfileError):
        bf.resolve_profile("definitely-missing")


def test_stride_indices_non_power_of_two():
    from beamforge.resampler import _stride_indices

    idx = _stride_indices(5, 4)
    assert sorted(set(idx.tolist())) == idx.tolist()
    assert len(idx) == 4
    assert idx[0] == 0
    idx2 = _stride_indices(3, 2)
    assert idx2.tolist() == [0, 2]
