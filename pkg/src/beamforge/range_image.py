"""Point cloud <-> range image conversion and bilinear row upsampling.

A range image is a (beams x azimuth bins) grid of return ranges: row order
follows the beam model's ascending zenith centers, column 0 sits at azimuth
-pi, and each cell stores the nearest return that landed in it. The bilinear
upsampler interpolates new rows between existing beam angles; it exists to
demonstrate why interpolated returns make poor pseudo data (interpolating
across a range discontinuity fabricates points in mid-air), not as a
recommended densification path.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beam_model import BeamModel
from .errors import (
    BadMagicError,
    ModelCloudMismatchError,
    TruncatedFileError,
    UnsupportedLayoutError,
)
from .geometry import PointCloud, batch_to_spherical, spherical_to_cartesian

RANGE_IMAGE_MAGIC = b"BFRI"
RANGE_IMAGE_VERSION = 1
_TILE_HEADER = struct.Struct("<4sHII")
DEFAULT_AZIMUTH_BINS = 2048


@dataclass(frozen=True)
class RangeImage:
    """Grid of ranges with a validity mask and per-row zenith angles."""

    range_m: np.ndarray  # (rows, cols) float64
    valid: np.ndarray  # (rows, cols) bool
    row_angles: np.ndarray  # (rows,) radians, strictly ascending

    def __post_init__(self) -> None:
        range_m = np.asarray(self.range_m, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        row_angles = np.asarray(self.row_angles, dtype=np.float64)
        if range_m.ndim != 2 or valid.shape != range_m.shape:
            raise ValueError("range_m and valid must be matching 2-D grids")
        if row_angles.shape != (range_m.shape[0],):
            raise ValueError("row_angles must have one entry per row")
        if len(row_angles) > 1 and not np.all(np.diff(row_angles) > 0):
            raise ValueError("row_angles must be strictly ascending")
        if valid.any():
            cells = range_m[valid]
            if not np.all(np.isfinite(cells)) or not np.all(cells > 0):
                raise ValueError("valid cells must hold positive finite ranges")
        object.__setattr__(self, "range_m", range_m)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "row_angles", row_angles)

    @property
    def rows(self) -> int:
        return self.range_m.shape[0]

    @property
    def cols(self) -> int:
        return self.range_m.shape[1]


def azimuth_bin_centers(cols: int) -> np.ndarray:
    return -math.pi + (np.arange(cols) + 0.5) * (2.0 * math.pi / cols)


def project(
    cloud: PointCloud, model: BeamModel, cols: int = DEFAULT_AZIMUTH_BINS
) -> RangeImage:
    """Rasterize a labeled cloud: row = beam label, column = azimuth bin.

    When several points land in one cell the nearest range wins, which makes
    the result independent of input point order (foreground priority).
    """
    if cols < 8:
        raise ValueError("cols must be >= 8")
    if len(model.assignments) != len(cloud):
        raise ModelCloudMismatchError(
            f"model covers {len(model.assignments)} points, cloud has {len(cloud)}"
        )
    sph = batch_to_spherical(cloud)
    if sph.dropped:
        raise ModelCloudMismatchError("cloud contains vertical-axis points")
    rows = model.assignments.astype(np.int64)
    col_idx = np.floor((sph.azimuth + math.pi) / (2.0 * math.pi) * cols).astype(
        np.int64
    ) % cols
    grid = np.full(model.beam_count * cols, np.inf)
    np.minimum.at(grid, rows * cols + col_idx, sph.range_m)
    grid = grid.reshape(model.beam_count, cols)
    valid = np.isfinite(grid)
    return RangeImage(
        range_m=np.where(valid, grid, 0.0), valid=valid, row_angles=model.centers
    )


def unproject(img: RangeImage) -> PointCloud:
    """Emit one point per valid cell at (row angle, bin-center azimuth, range).

    Output beam labels are row indices; iteration is row-major so the result
    is deterministic.
    """
    r_idx, c_idx = np.nonzero(img.valid)
    ranges = img.range_m[r_idx, c_idx]
    zenith = img.row_angles[r_idx]
    azimuth = azimuth_bin_centers(img.cols)[c_idx]
    x, y, z = spherical_to_cartesian(zenith, azimuth, ranges)
    return PointCloud(
        xyz=np.stack([x, y, z], axis=1), beam_labels=r_idx.astype(np.int32)
    )


def upsample_bilinear(img: RangeImage, target_rows: int) -> RangeImage:
    """Interpolate to ``target_rows`` rows spanning the same VFOV.

    Ranges are interpolated linearly between the two bracketing source rows
    at each column; a target cell is valid only when every contributing
    source cell is valid (holes are never filled by extrapolation, and the
    original VFOV is never exceeded).
    """
    if target_rows < img.rows:
        raise ValueError("target_rows must be >= current rows")
    if img.rows == 1:
        if target_rows == 1:
            return img
        raise ValueError("cannot upsample a single-row image")
    new_angles = np.linspace(img.row_angles[0], img.row_angles[-1], target_rows)
    upper = np.searchsorted(img.row_angles, new_angles, side="left")
    upper = np.clip(upper, 0, img.rows - 1)
    lower = np.clip(upper - 1, 0, img.rows - 1)
    exact = img.row_angles[upper] == new_angles
    lower[exact] = upper[exact]

    span = img.row_angles[upper] - img.row_angles[lower]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(span > 0, (new_angles - img.row_angles[lower]) / span, 0.0)
    t = t[:, None]
    lo_range = img.range_m[lower]
    # v = lo + t*(hi - lo) keeps constant inputs bit-exact, unlike the
    # symmetric (1-t)*lo + t*hi form.
    new_range = lo_range + t * (img.range_m[upper] - lo_range)
    new_valid = img.valid[lower] & img.valid[upper]
    return RangeImage(
        range_m=np.where(new_valid, new_range, 0.0),
        valid=new_valid,
        row_angles=new_angles,
    )


def take_rows(img: RangeImage, row_indices) -> RangeImage:
    """Row-subset view (e.g. keep every other beam before an upsample demo)."""
    idx = np.asarray(row_indices, dtype=np.int64)
    return RangeImage(
        range_m=img.range_m[idx], valid=img.valid[idx], row_angles=img.row_angles[idx]
    )


def save_range_image(img: RangeImage, path) -> None:
    """Flat binary tile: header, float32 row angles, float32 ranges, packed mask."""
    header = _TILE_HEADER.pack(
        RANGE_IMAGE_MAGIC, RANGE_IMAGE_VERSION, img.rows, img.cols
    )
    angles = img.row_angles.astype("<f4").tobytes()
    ranges = np.where(img.valid, img.range_m, 0.0).astype("<f4").tobytes()
    mask = np.packbits(img.valid.reshape(-1)).tobytes()
    Path(path).write_bytes(header + angles + ranges + mask)


def load_range_image(path) -> RangeImage:
    data = Path(path).read_bytes()
    if len(data) < _TILE_HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than tile header")
    magic, version, rows, cols = _TILE_HEADER.unpack_from(data)
    if magic != RANGE_IMAGE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != RANGE_IMAGE_VERSION:
        raise UnsupportedLayoutError(f"{path}: unsupported tile version {version}")
    n_cells = rows * cols
    need = _TILE_HEADER.size + 4 * rows + 4 * n_cells + (n_cells + 7) // 8
    if len(data) != need:
        raise TruncatedFileError(f"{path}: {len(data)} bytes, expected {need}")
    off = _TILE_HEADER.size
    angles = np.frombuffer(data, dtype="<f4", count=rows, offset=off).astype(
        np.float64
    )
    off += 4 * rows
    ranges = (
        np.frombuffer(data, dtype="<f4", count=n_cells, offset=off)
        .astype(np.float64)
        .reshape(rows, cols)
    )
    off += 4 * n_cells
    mask = (
        np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=off))[:n_cells]
        .astype(bool)
        .reshape(rows, cols)
    )
    return RangeImage(
        range_m=np.where(mask, ranges, 0.0), valid=mask, row_angles=angles
    )
