"""Bit-exact readers and writers for raw LiDAR scan files.

Supported formats:

* ``KITTI_BIN`` — bare ``float32[4]`` records (x, y, z, intensity), little
  endian, no header. File length must be a multiple of 16 bytes.
* ``PCD_ASCII`` / ``PCD_BINARY`` — the ``FIELDS x y z [intensity]`` subset
  with SIZE 4 / TYPE F / COUNT 1; anything else is an unsupported layout.
* ``BEAM_LABELED_BIN`` — this package's canonical interchange format. It
  persists per-point beam labels so downstream stages never re-cluster:

      header  : magic b"BFRG", version u16, point_count u64,
                beam_count u16, flags u16          (18 bytes, little endian)
      payload : per point x, y, z, intensity as float32 LE + beam_id u16
                (18 bytes per record)

  Flag bit 0 marks the intensity column as meaningful; writers emit zeros
  with the bit clear when the cloud has no intensity.

Coordinates are promoted to float64 in memory; formats that store 32 bits
quantize on write. Non-finite coordinates are dropped at read time (spherical
decomposition and clustering require finite inputs) and counted in the read
report. Parsers raise typed ScanFormatError subclasses on malformed input,
never anything else.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    MissingBeamLabelsError,
    ScanFormatError,
    TruncatedFileError,
    UnsupportedLayoutError,
)
from .geometry import PointCloud

BEAM_LABELED_MAGIC = b"BFRG"
BEAM_LABELED_VERSION = 1
_BFRG_HEADER = struct.Struct("<4sHQHH")
_BFRG_RECORD_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("intensity", "<f4"), ("beam", "<u2")]
)
_FLAG_HAS_INTENSITY = 0x0001
_KITTI_RECORD_BYTES = 16


class ScanFileFormat(enum.Enum):
    KITTI_BIN = "kitti"
    PCD_ASCII = "pcd"
    PCD_BINARY = "pcd-binary"
    BEAM_LABELED_BIN = "bfrg"


@dataclass(frozen=True)
class ReadReport:
    cloud: PointCloud
    fmt: ScanFileFormat
    dropped_nonfinite: int = 0
    beam_count: int = 0  # header value for BEAM_LABELED_BIN, else 0


@dataclass(frozen=True)
class WriteReport:
    path: Path
    fmt: ScanFileFormat
    labels_dropped: bool = False
    intensity_dropped: bool = False


def detect_format(path) -> ScanFileFormat:
    """Resolve a file's format from its extension plus magic bytes."""
    path = Path(path)
    suffix = path.suffix.lower()
    head = b""
    try:
        with open(path, "rb") as fh:
            head = fh.read(64)
    except FileNotFoundError:
        raise
    if head[:4] == BEAM_LABELED_MAGIC:
        return ScanFileFormat.BEAM_LABELED_BIN
    if suffix == ".bfrg":
        raise BadMagicError(f"{path}: .bfrg file without {BEAM_LABELED_MAGIC!r} magic")
    if suffix == ".pcd" or head.startswith(b"# .PCD") or head.startswith(b"VERSION"):
        return _pcd_data_kind(head)
    if suffix == ".bin":
        return ScanFileFormat.KITTI_BIN
    raise BadMagicError(f"cannot determine scan format of {path}")


def _pcd_data_kind(head: bytes) -> ScanFileFormat:
    if b"DATA binary" in head or b"\nDATA binary" in head:
        return ScanFileFormat.PCD_BINARY
    return ScanFileFormat.PCD_ASCII


def _filter_finite(
    xyz: np.ndarray, intensity: np.ndarray | None, labels: np.ndarray | None
):
    finite = np.all(np.isfinite(xyz), axis=1)
    if intensity is not None:
        finite &= np.isfinite(intensity)
    dropped = int(len(xyz) - finite.sum())
    if dropped:
        xyz = xyz[finite]
        intensity = intensity[finite] if intensity is not None else None
        labels = labels[finite] if labels is not None else None
    return xyz, intensity, labels, dropped


def read_scan_report(path, fmt: ScanFileFormat | None = None) -> ReadReport:
    """Read a scan and report the format used and per-point drop count."""
    path = Path(path)
    if fmt is None:
        fmt = detect_format(path)
    data = path.read_bytes()
    if fmt is ScanFileFormat.KITTI_BIN:
        return _read_kitti(data, path)
    if fmt is ScanFileFormat.BEAM_LABELED_BIN:
        return _read_beam_labeled(data, path)
    if fmt in (ScanFileFormat.PCD_ASCII, ScanFileFormat.PCD_BINARY):
        return _read_pcd(data, path)
    raise ValueError(f"unhandled format {fmt}")


def read_scan(path, fmt: ScanFileFormat | None = None) -> PointCloud:
    return read_scan_report(path, fmt).cloud


def _read_kitti(data: bytes, path: Path) -> ReadReport:
    if len(data) % _KITTI_RECORD_BYTES != 0:
        raise TruncatedFileError(
            f"{path}: {len(data)} bytes is not a whole number of 16-byte records"
        )
    with np.errstate(invalid="ignore"):  # signalling NaNs in garbage bytes
        records = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    xyz, intensity, _, dropped = _filter_finite(records[:, :3], records[:, 3], None)
    cloud = PointCloud(xyz=xyz, intensity=intensity, frame_id=path.stem)
    return ReadReport(cloud, ScanFileFormat.KITTI_BIN, dropped)


def _read_beam_labeled(data: bytes, path: Path) -> ReadReport:
    if len(data) < _BFRG_HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than the {_BFRG_HEADER.size}-byte header")
    magic, version, point_count, beam_count, flags = _BFRG_HEADER.unpack_from(data)
    if magic != BEAM_LABELED_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != BEAM_LABELED_VERSION:
        raise UnsupportedLayoutError(f"{path}: unsupported version {version}")
    payload = data[_BFRG_HEADER.size :]
    expected = point_count * _BFRG_RECORD_DTYPE.itemsize
    if len(payload) != expected:
        raise TruncatedFileError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    records = np.frombuffer(payload, dtype=_BFRG_RECORD_DTYPE)
    labels = records["beam"].astype(np.int32)
    if point_count and beam_count == 0:
        raise ScanFormatError(f"{path}: nonzero points but beam_count 0")
    if point_count and labels.max() >= beam_count:
        raise ScanFormatError(
            f"{path}: beam_id {labels.max()} out of range for {beam_count} beams"
        )
    with np.errstate(invalid="ignore"):  # signalling NaNs in garbage bytes
        xyz = np.stack(
            [records["x"], records["y"], records["z"]], axis=1
        ).astype(np.float64)
        intensity = (
            records["intensity"].astype(np.float64)
            if flags & _FLAG_HAS_INTENSITY
            else None
        )
    xyz, intensity, labels, dropped = _filter_finite(xyz, intensity, labels)
    cloud = PointCloud(
        xyz=xyz, intensity=intensity, beam_labels=labels, frame_id=path.stem
    )
    return ReadReport(cloud, ScanFileFormat.BEAM_LABELED_BIN, dropped, beam_count)


def _read_pcd(data: bytes, path: Path) -> ReadReport:
    try:
        header_end = 0
        lines = []
        view = data
        while True:
            nl = view.find(b"\n", header_end)
            if nl < 0:
                raise TruncatedFileError(f"{path}: PCD header never ends")
            line = view[header_end:nl].decode("ascii", errors="strict")
            header_end = nl + 1
            if line.startswith("#"):
                continue
            lines.append(line)
            if line.startswith("DATA"):
                break
    except UnicodeDecodeError as exc:
        raise UnsupportedLayoutError(f"{path}: PCD header is not ASCII") from exc

    fields: dict[str, str] = {}
    for line in lines:
        parts = line.split(None, 1)
        if len(parts) == 2:
            fields[parts[0].upper()] = parts[1]
    names = fields.get("FIELDS", "").split()
    if names not in (["x", "y", "z"], ["x", "y", "z", "intensity"]):
        raise UnsupportedLayoutError(f"{path}: unsupported PCD fields {names}")
    ncols = len(names)
    if fields.get("SIZE", "").split() != ["4"] * ncols:
        raise UnsupportedLayoutError(f"{path}: only 4-byte PCD fields supported")
    if fields.get("TYPE", "").split() != ["F"] * ncols:
        raise UnsupportedLayoutError(f"{path}: only float PCD fields supported")
    if "COUNT" in fields and fields["COUNT"].split() != ["1"] * ncols:
        raise UnsupportedLayoutError(f"{path}: multi-count PCD fields unsupported")
    try:
        n_points = int(fields["POINTS"])
    except (KeyError, ValueError) as exc:
        raise UnsupportedLayoutError(f"{path}: missing/invalid POINTS") from exc
    kind = fields.get("DATA", "").strip()

    if kind == "ascii":
        try:
            body = data[header_end:].decode("ascii")
            rows = np.array(
                [
                    [float(tok) for tok in line.split()]
                    for line in body.splitlines()
                    if line.strip()
                ],
                dtype=np.float64,
            )
        except (UnicodeDecodeError, ValueError) as exc:
            raise ScanFormatError(f"{path}: malformed PCD ascii body") from exc
        if rows.size == 0:
            rows = rows.reshape(0, ncols)
        if rows.ndim != 2 or rows.shape != (n_points, ncols):
            raise TruncatedFileError(
                f"{path}: PCD body has shape {rows.shape}, expected ({n_points}, {ncols})"
            )
        fmt = ScanFileFormat.PCD_ASCII
    elif kind == "binary":
        body = data[header_end:]
        expected = n_points * 4 * ncols
        if len(body) < expected:
            raise TruncatedFileError(
                f"{path}: PCD binary body {len(body)} bytes, expected {expected}"
            )
        rows = (
            np.frombuffer(body[:expected], dtype="<f4")
            .reshape(n_points, ncols)
            .astype(np.float64)
        )
        fmt = ScanFileFormat.PCD_BINARY
    else:
        raise UnsupportedLayoutError(f"{path}: unsupported PCD data kind {kind!r}")

    intensity = rows[:, 3] if ncols == 4 else None
    xyz, intensity, _, dropped = _filter_finite(rows[:, :3], intensity, None)
    cloud = PointCloud(xyz=xyz, intensity=intensity, frame_id=path.stem)
    return ReadReport(cloud, fmt, dropped)


def write_scan(
    cloud: PointCloud,
    path,
    fmt: ScanFileFormat,
    beam_count: int | None = None,
) -> WriteReport:
    """Write a cloud; returns a report flagging any lossy conversions.

    ``beam_count`` overrides the BEAM_LABELED_BIN header field (defaults to
    max label + 1), letting callers preserve trailing empty beams.
    """
    path = Path(path)
    if fmt is ScanFileFormat.BEAM_LABELED_BIN:
        if cloud.beam_labels is None:
            raise MissingBeamLabelsError("BEAM_LABELED_BIN requires beam labels")
        data = encode_beam_labeled(cloud, beam_count)
        path.write_bytes(data)
        return WriteReport(path, fmt)
    if fmt is ScanFileFormat.KITTI_BIN:
        records = np.zeros((len(cloud), 4), dtype="<f4")
        records[:, :3] = cloud.xyz
        if cloud.intensity is not None:
            records[:, 3] = cloud.intensity
        path.write_bytes(records.tobytes())
        return WriteReport(
            path,
            fmt,
            labels_dropped=cloud.beam_labels is not None,
            intensity_dropped=False,
        )
    if fmt in (ScanFileFormat.PCD_ASCII, ScanFileFormat.PCD_BINARY):
        return _write_pcd(cloud, path, fmt)
    raise ValueError(f"unhandled format {fmt}")


def encode_beam_labeled(cloud: PointCloud, beam_count: int | None = None) -> bytes:
    labels = cloud.beam_labels
    if labels is None:
        raise MissingBeamLabelsError("cloud has no beam labels")
    if beam_count is None:
        beam_count = int(labels.max()) + 1 if len(labels) else 0
    if len(labels) and labels.max() >= beam_count:
        raise ValueError("beam_count smaller than max beam label")
    if beam_count > 0xFFFF:
        raise ValueError("beam_count exceeds the u16 header field")
    flags = _FLAG_HAS_INTENSITY if cloud.intensity is not None else 0
    header = _BFRG_HEADER.pack(
        BEAM_LABELED_MAGIC, BEAM_LABELED_VERSION, len(cloud), beam_count, flags
    )
    records = np.zeros(len(cloud), dtype=_BFRG_RECORD_DTYPE)
    records["x"] = cloud.xyz[:, 0]
    records["y"] = cloud.xyz[:, 1]
    records["z"] = cloud.xyz[:, 2]
    if cloud.intensity is not None:
        records["intensity"] = cloud.intensity
    records["beam"] = labels.astype("<u2")
    return header + records.tobytes()


def _write_pcd(cloud: PointCloud, path: Path, fmt: ScanFileFormat) -> WriteReport:
    has_intensity = cloud.intensity is not None
    names = "x y z intensity" if has_intensity else "x y z"
    ncols = 4 if has_intensity else 3
    n = len(cloud)
    header = "\n".join(
        [
            "# .PCD v0.7 - Point Cloud Data file format",
            "VERSION 0.7",
            f"FIELDS {names}",
            "SIZE " + " ".join(["4"] * ncols),
            "TYPE " + " ".join(["F"] * ncols),
            "COUNT " + " ".join(["1"] * ncols),
            f"WIDTH {n}",
            "HEIGHT 1",
            "VIEWPOINT 0 0 0 1 0 0 0",
            f"POINTS {n}",
            f"DATA {'ascii' if fmt is ScanFileFormat.PCD_ASCII else 'binary'}",
        ]
    )
    rows = np.zeros((n, ncols), dtype="<f4")
    rows[:, :3] = cloud.xyz
    if has_intensity:
        rows[:, 3] = cloud.intensity
    if fmt is ScanFileFormat.PCD_ASCII:
        body = "\n".join(" ".join(repr(float(v)) for v in row) for row in rows)
        path.write_text(header + "\n" + body + ("\n" if n else ""), encoding="ascii")
    else:
        path.write_bytes(header.encode("ascii") + b"\n" + rows.tobytes())
    return WriteReport(path, fmt, labels_dropped=cloud.beam_labels is not None)
