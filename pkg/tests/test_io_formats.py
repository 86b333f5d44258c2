import struct

import numpy as np
import pytest

import beamforge as bf
from beamforge.io_formats import encode_beam_labeled

from conftest import random_cloud


def test_kitti_hand_built_fixture(tmp_path):
    path = tmp_path / "scan.bin"
    path.write_bytes(struct.pack("<8f", 1, 2, 3, 0.5, 4, 5, 6, 0.1))
    report = bf.read_scan_report(path)
    assert report.fmt is bf.ScanFileFormat.KITTI_BIN
    cloud = report.cloud
    assert len(cloud) == 2
    np.testing.assert_allclose(cloud.xyz, [[1, 2, 3], [4, 5, 6]])
    np.testing.assert_allclose(cloud.intensity, [0.5, 0.1], atol=1e-7)


def test_kitti_truncated_file(tmp_path):
    path = tmp_path / "scan.bin"
    path.write_bytes(b"\x00" * 33)
    with pytest.raises(bf.TruncatedFileError):
        bf.read_scan(path)


def test_kitti_nonfinite_dropped_with_counter(tmp_path):
    path = tmp_path / "scan.bin"
    path.write_bytes(
        struct.pack("<12f", 1, 2, 3, 0.5, np.nan, 5, 6, 0.1, 7, 8, np.inf, 0.2)
    )
    report = bf.read_scan_report(path)
    assert len(report.cloud) == 1
    assert report.dropped_nonfinite == 2


def test_kitti_round_trip_exact_at_f32(tmp_path):
    rng = np.random.default_rng(0)
    cloud = random_cloud(rng, 500)
    path = tmp_path / "out.bin"
    bf.write_scan(cloud, path, bf.ScanFileFormat.KITTI_BIN)
    back = bf.read_scan(path)
    np.testing.assert_array_equal(back.xyz, cloud.xyz.astype(np.float32))
    np.testing.assert_array_equal(
        back.intensity, cloud.intensity.astype(np.float32)
    )


def test_kitti_write_drops_labels_with_flag(tmp_path):
    rng = np.random.default_rng(1)
    cloud = random_cloud(rng, 64, beams=4)
    report = bf.write_scan(cloud, tmp_path / "x.bin", bf.ScanFileFormat.KITTI_BIN)
    assert report.labels_dropped
    assert bf.read_scan(tmp_path / "x.bin").beam_labels is None


def test_beam_labeled_write_read_identity_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    for i in range(20):
        cloud = random_cloud(rng, int(rng.integers(1, 400)), beams=8)
        path = tmp_path / f"c{i}.bfrg"
        bf.write_scan(cloud, path, bf.ScanFileFormat.BEAM_LABELED_BIN)
        first = path.read_bytes()
        back = bf.read_scan(path)
        bf.write_scan(back, path, bf.ScanFileFormat.BEAM_LABELED_BIN)
        assert path.read_bytes() == first
        # and the clouds agree at 32-bit precision
        np.testing.assert_array_equal(back.xyz, cloud.xyz.astype(np.float32))
        np.testing.assert_array_equal(back.beam_labels, cloud.beam_labels)


def test_beam_labeled_empty_cloud(tmp_path):
    cloud = bf.PointCloud(
        xyz=np.zeros((0, 3)), beam_labels=np.zeros(0, dtype=np.int32)
    )
    path = tmp_path / "empty.bfrg"
    bf.write_scan(cloud, path, bf.ScanFileFormat.BEAM_LABELED_BIN)
    report = bf.read_scan_report(path)
    assert len(report.cloud) == 0
    header = path.read_bytes()
    assert header[:4] == b"BFRG"
    assert struct.unpack_from("<Q", header, 6)[0] == 0


def test_beam_labeled_requires_labels(tmp_path):
    cloud = bf.PointCloud(xyz=np.array([[1.0, 0.0, 0.0]]))
    with pytest.raises(bf.MissingBeamLabelsError):
        bf.write_scan(cloud, tmp_path / "x.bfrg", bf.ScanFileFormat.BEAM_LABELED_BIN)


def test_beam_labeled_bad_magic(tmp_path):
    path = tmp_path / "x.bfrg"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(bf.BadMagicError):
        bf.read_scan(path)


def test_beam_labeled_truncated_payload(tmp_path):
    rng = np.random.default_rng(3)
    cloud = random_cloud(rng, 10, beams=2)
    data = encode_beam_labeled(cloud)
    path = tmp_path / "x.bfrg"
    path.write_bytes(data[:-5])
    with pytest.raises(bf.TruncatedFileError):
        bf.read_scan(path)


def test_beam_labeled_out_of_range_beam_id(tmp_path):
    rng = np.random.default_rng(4)
    cloud = random_cloud(rng, 10, beams=2)
    data = bytearray(encode_beam_labeled(cloud, beam_count=2))
    # corrupt the first record's beam id (little-endian u16 at offset 18+16)
    struct.pack_into("<H", data, 18 + 16, 999)
    path = tmp_path / "x.bfrg"
    path.write_bytes(bytes(data))
    with pytest.raises(bf.ScanFormatError):
        bf.read_scan(path)


def test_pcd_ascii_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    cloud = random_cloud(rng, 50)
    path = tmp_path / "x.pcd"
    bf.write_scan(cloud, path, bf.ScanFileFormat.PCD_ASCII)
    report = bf.read_scan_report(path)
    assert report.fmt is bf.ScanFileFormat.PCD_ASCII
    np.testing.assert_allclose(
        report.cloud.xyz, cloud.xyz.astype(np.float32), rtol=1e-6
    )


def test_pcd_binary_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    cloud = random_cloud(rng, 50, with_intensity=False)
    path = tmp_path / "x.pcd"
    bf.write_scan(cloud, path, bf.ScanFileFormat.PCD_BINARY)
    report = bf.read_scan_report(path)
    assert report.fmt is bf.ScanFileFormat.PCD_BINARY
    np.testing.assert_array_equal(report.cloud.xyz, cloud.xyz.astype(np.float32))
    assert report.cloud.intensity is None


def test_pcd_unsupported_layout(tmp_path):
    path = tmp_path / "x.pcd"
    path.write_text(
        "VERSION 0.7\nFIELDS x y z rgb\nSIZE 4 4 4 4\nTYPE F F F U\n"
        "COUNT 1 1 1 1\nWIDTH 1\nHEIGHT 1\nPOINTS 1\nDATA ascii\n1 2 3 0\n"
    )
    with pytest.raises(bf.UnsupportedLayoutError):
        bf.read_scan(path)


def test_pcd_truncated_body(tmp_path):
    path = tmp_path / "x.pcd"
    path.write_text(
        "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\n"
        "COUNT 1 1 1\nWIDTH 3\nHEIGHT 1\nPOINTS 3\nDATA ascii\n1 2 3\n"
    )
    with pytest.raises(bf.TruncatedFileError):
        bf.read_scan(path)


def test_detect_format(tmp_path):
    rng = np.random.default_rng(7)
    cloud = random_cloud(rng, 8, beams=2)
    a = tmp_path / "a.bin"
    bf.write_scan(cloud, a, bf.ScanFileFormat.KITTI_BIN)
    assert bf.detect_format(a) is bf.ScanFileFormat.KITTI_BIN
    b = tmp_path / "b.bin"  # beam-labeled despite the .bin extension
    bf.write_scan(cloud, b, bf.ScanFileFormat.BEAM_LABELED_BIN)
    assert bf.detect_format(b) is bf.ScanFileFormat.BEAM_LABELED_BIN
    c = tmp_path / "c.weird"
    c.write_bytes(b"garbage")
    with pytest.raises(bf.BadMagicError):
        bf.detect_format(c)


def test_fuzz_random_bytes_yield_typed_errors_only(tmp_path):
    rng = np.random.default_rng(8)
    path = tmp_path / "fuzz.bin"
    outcomes = {"ok": 0, "typed": 0}
    for _ in range(300):
        n = int(rng.integers(0, 200))
        path.write_bytes(rng.integers(0, 256, n, dtype=np.uint8).tobytes())
        for fmt in bf.ScanFileFormat:
            try:
                bf.read_scan(path, fmt)
                outcomes["ok"] += 1
            except bf.ScanFormatError:
                outcomes["typed"] += 1
    assert outcomes["typed"] > 0
