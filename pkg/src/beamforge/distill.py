"""ROI generation on BEV grids and the feature-mimicking loss with analytic
gradients.

The loss a student network minimizes against a frozen teacher is the mean,
over sampled regions of interest, of the Euclidean norm of the difference
between the two networks' pooled BEV feature blocks:

    loss = (1/M) * sum_j || pool(teacher, roi_j) - pool(student, roi_j) ||_2

Pooling is a fixed pooled_size x pooled_size bilinear crop so the norm is
well defined across ROI sizes. The gradient with respect to the student map
is accumulated analytically back through the bilinear sampling weights; a
block with zero difference contributes zero gradient (the subgradient choice
at the norm's kink). Teacher values are constants: no gradient flows to them.

Coordinate convention: ROI rectangles live in continuous cell-center space,
where the feature value at grid index (row, col) sits at coordinate
y = row, x = col. A rectangle may be degenerate (x0 == x1) to pin samples to
one location. Samples outside the grid clamp to the border.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    EmptyIntersectionError,
    NonFiniteInputError,
    ShapeMismatchError,
    TruncatedFileError,
    UnsupportedLayoutError,
)

FEATURE_TILE_MAGIC = b"BFFT"
ROI_TILE_MAGIC = b"BFRS"
TILE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sHIIIfff")
_ROI_HEADER = struct.Struct("<4sHHIH")
_ROI_RECORD = struct.Struct("<ffffI")

DEFAULT_ROI_COUNT = 128
DEFAULT_POOLED_SIZE = 7
NEGATIVE_IOU_CEILING = 0.1
CENTER_JITTER_FRACTION = 0.1
SCALE_JITTER_RANGE = (0.9, 1.1)


@dataclass(frozen=True)
class BevFeatureMap:
    """Dense H x W x C feature grid over the ground plane."""

    values: np.ndarray  # (H, W, C) float64
    cell_size: float = 1.0  # meters per cell
    origin: tuple[float, float] = (0.0, 0.0)  # BEV meters of cell (0, 0)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"values must be (H, W, C), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be > 0")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class BevBox:
    """Ground-plane footprint of a 3D label: center, size, yaw."""

    cx: float
    cy: float
    dx: float
    dy: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("box sizes must be positive")

    def aligned_half_extents(self) -> tuple[float, float]:
        """Half extents of the axis-aligned bounds of the rotated footprint."""
        c, s = abs(math.cos(self.yaw)), abs(math.sin(self.yaw))
        return 0.5 * (self.dx * c + self.dy * s), 0.5 * (self.dx * s + self.dy * c)


class RoiTag(enum.Enum):
    POSITIVE = 1
    NEGATIVE = 0


@dataclass(frozen=True)
class Roi:
    """Axis-aligned rectangle in cell-center coordinates, tagged pos/neg."""

    x0: float
    y0: float
    x1: float
    y1: float
    tag: RoiTag = RoiTag.POSITIVE

    def __post_init__(self) -> None:
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError("ROI must have x1 >= x0 and y1 >= y0")


@dataclass(frozen=True)
class RoiSet:
    rois: tuple[Roi, ...]
    pooled_size: int = DEFAULT_POOLED_SIZE
    balance_shortfall: bool = False

    def __post_init__(self) -> None:
        if self.pooled_size < 1:
            raise ValueError("pooled_size must be >= 1")

    def __len__(self) -> int:
        return len(self.rois)

    @property
    def positive_count(self) -> int:
        return sum(1 for r in self.rois if r.tag is RoiTag.POSITIVE)


@dataclass(frozen=True)
class MimicLossResult:
    loss: float
    grad: np.ndarray  # dloss/dstudent, same shape as the student values


def _rect_iou(a: tuple[float, float, float, float], b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _intersects_grid(rect, width: int, height: int) -> bool:
    return (
        rect[2] >= -0.5
        and rect[0] <= width - 0.5
        and rect[3] >= -0.5
        and rect[1] <= height - 0.5
    )


def generate_rois(
    boxes,
    map_shape: tuple[int, int],
    seed: int,
    total: int = DEFAULT_ROI_COUNT,
    pooled_size: int = DEFAULT_POOLED_SIZE,
    cell_size: float = 1.0,
    origin: tuple[float, float] = (0.0, 0.0),
) -> RoiSet:
    """Sample a balanced ROI set from ground-truth BEV boxes.

    Positives are the axis-aligned bounds of each box, jittered in center
    (up to 10% of the size) and scale (0.9x to 1.1x per axis), resampled
    with replacement to total/2. Negatives are random rectangles whose size
    follows the positive size distribution (or grid-scaled defaults when
    there are no boxes) and whose IoU with every unjittered box bound stays
    below 0.1; when that constraint cannot be met the set is tagged with
    ``balance_shortfall``. Deterministic for a given (boxes, shape, seed).
    """
    height, width = int(map_shape[0]), int(map_shape[1])
    if height < 1 or width < 1:
        raise ValueError("map_shape must be positive")
    rng = np.random.default_rng(seed)
    half = total // 2

    gt_rects = []
    for box in boxes:
        cx = (box.cx - origin[0]) / cell_size
        cy = (box.cy - origin[1]) / cell_size
        hx, hy = box.aligned_half_extents()
        hx /= cell_size
        hy /= cell_size
        rect = (cx - hx, cy - hy, cx + hx, cy + hy)
        if _intersects_grid(rect, width, height):
            gt_rects.append(rect)

    rois: list[Roi] = []
    if gt_rects:
        target_pos = half
        for k in range(target_pos):
            rect = gt_rects[int(rng.integers(len(gt_rects)))]
            w = rect[2] - rect[0]
            h = rect[3] - rect[1]
            cx = 0.5 * (rect[0] + rect[2]) + rng.uniform(
                -CENTER_JITTER_FRACTION, CENTER_JITTER_FRACTION
            ) * w
            cy = 0.5 * (rect[1] + rect[3]) + rng.uniform(
                -CENTER_JITTER_FRACTION, CENTER_JITTER_FRACTION
            ) * h
            sw = 0.5 * w * rng.uniform(*SCALE_JITTER_RANGE)
            sh = 0.5 * h * rng.uniform(*SCALE_JITTER_RANGE)
            jittered = (cx - sw, cy - sh, cx + sw, cy + sh)
            if not _intersects_grid(jittered, width, height):
                jittered = rect
            rois.append(Roi(*jittered, tag=RoiTag.POSITIVE))

    want_neg = total - len(rois)
    made_neg = 0
    attempts_left = want_neg * 200
    while made_neg < want_neg and attempts_left > 0:
        attempts_left -= 1
        if gt_rects:
            src = gt_rects[int(rng.integers(len(gt_rects)))]
            w = src[2] - src[0]
            h = src[3] - src[1]
        else:
            w = rng.uniform(2.0, max(4.0, width / 4.0))
            h = rng.uniform(2.0, max(4.0, height / 4.0))
        w = min(w, float(width))
        h = min(h, float(height))
        cx = rng.uniform(min(w / 2, width - 1 - w / 2), max(w / 2, width - 1 - w / 2))
        cy = rng.uniform(
            min(h / 2, height - 1 - h / 2), max(h / 2, height - 1 - h / 2)
        )
        rect = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        if not _intersects_grid(rect, width, height):
            continue
        if any(_rect_iou(rect, gt) >= NEGATIVE_IOU_CEILING for gt in gt_rects):
            continue
        rois.append(Roi(*rect, tag=RoiTag.NEGATIVE))
        made_neg += 1

    shortfall = made_neg < want_neg
    return RoiSet(
        rois=tuple(rois), pooled_size=pooled_size, balance_shortfall=shortfall
    )


def _sample_grid(roi: Roi, pooled_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample coordinates: pooled_size points per axis, centered in equal
    subdivisions of the ROI (midpoint for a degenerate axis)."""
    s = pooled_size
    fr = (np.arange(s) + 0.5) / s
    xs = roi.x0 + fr * (roi.x1 - roi.x0)
    ys = roi.y0 + fr * (roi.y1 - roi.y0)
    return xs, ys


def _bilinear_weights(
    xs: np.ndarray, ys: np.ndarray, width: int, height: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Neighbor indices, weights, and fractional offsets for an S x S grid.

    Returns (idx, w, fx, fy) where idx and w have shape (S*S, 4): each sample
    interpolates 4 neighbors (repeated at borders, where positions clamp).
    """
    gx, gy = np.meshgrid(xs, ys, indexing="xy")  # (S, S): rows vary y
    px = np.clip(gx.reshape(-1), 0.0, width - 1.0)
    py = np.clip(gy.reshape(-1), 0.0, height - 1.0)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    x0 = np.minimum(x0, width - 2) if width > 1 else np.zeros_like(x0)
    y0 = np.minimum(y0, height - 2) if height > 1 else np.zeros_like(y0)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = px - x0
    fy = py - y0
    idx = np.stack(
        [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1], axis=1
    )
    w = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1
    )
    return idx, w, fx, fy


def _gather_bilinear(flat: np.ndarray, idx, fx, fy) -> np.ndarray:
    """Interpolated values in incremental form, which is exact for constant
    and linear fields (the symmetric 4-weight sum is not, by an ulp)."""
    v00 = flat[idx[:, 0]]
    v01 = flat[idx[:, 1]]
    v10 = flat[idx[:, 2]]
    v11 = flat[idx[:, 3]]
    fx = fx[:, None]
    fy = fy[:, None]
    return v00 + fx * (v01 - v00) + fy * (v10 - v00) + (fx * fy) * (
        v11 - v01 - v10 + v00
    )


def pool_roi(feature_map: BevFeatureMap, roi: Roi, pooled_size: int | None = None):
    """Bilinearly crop one ROI to a (pooled, pooled, C) block."""
    height, width, channels = feature_map.shape
    if not _intersects_grid((roi.x0, roi.y0, roi.x1, roi.y1), width, height):
        raise EmptyIntersectionError(f"ROI {roi} lies outside the {height}x{width} grid")
    s = pooled_size if pooled_size is not None else DEFAULT_POOLED_SIZE
    xs, ys = _sample_grid(roi, s)
    idx, _, fx, fy = _bilinear_weights(xs, ys, width, height)
    flat = feature_map.values.reshape(-1, channels)
    pooled = _gather_bilinear(flat, idx, fx, fy)
    return pooled.reshape(s, s, channels)


def mimic_loss(
    student: BevFeatureMap, teacher: BevFeatureMap, rois: RoiSet
) -> MimicLossResult:
    """Mean over ROIs of the L2 norm between pooled teacher/student blocks,
    with the analytic gradient with respect to the student map.

    The per-ROI gradient is (pooled_student - pooled_teacher) / (M * norm)
    scattered back through the bilinear weights; ROIs are reduced in index
    order so results are bit-reproducible.
    """
    if student.shape != teacher.shape:
        raise ShapeMismatchError(
            f"student {student.shape} vs teacher {teacher.shape}"
        )
    if len(rois) == 0:
        raise ValueError("rois must be non-empty")
    height, width, channels = student.shape
    s_flat = student.values.reshape(-1, channels)
    t_flat = teacher.values.reshape(-1, channels)
    grad_flat = np.zeros_like(s_flat)
    total = 0.0
    m = len(rois)
    for roi in rois.rois:
        if not _intersects_grid((roi.x0, roi.y0, roi.x1, roi.y1), width, height):
            raise EmptyIntersectionError(f"ROI {roi} lies outside the grid")
        xs, ys = _sample_grid(roi, rois.pooled_size)
        idx, w, fx, fy = _bilinear_weights(xs, ys, width, height)
        pooled_s = _gather_bilinear(s_flat, idx, fx, fy)
        pooled_t = _gather_bilinear(t_flat, idx, fx, fy)
        diff = pooled_s - pooled_t  # (S*S, C)
        norm = float(np.sqrt(np.sum(diff * diff)))
        total += norm / m
        if norm > 0.0:
            g_pooled = diff / (m * norm)  # dloss/dpooled_s
            contrib = w[:, :, None] * g_pooled[:, None, :]  # (S*S, 4, C)
            np.add.at(grad_flat, idx.reshape(-1), contrib.reshape(-1, channels))
    return MimicLossResult(loss=total, grad=grad_flat.reshape(student.shape))


def total_loss(l_gt: float, l_m: float, weight: float = 1.0) -> float:
    """Combined objective: detector loss plus weighted mimic loss.

    The detector loss is an externally supplied scalar; weight 0 disables
    mimicking entirely.
    """
    for name, v in (("l_gt", l_gt), ("l_m", l_m), ("weight", weight)):
        if not math.isfinite(v):
            raise NonFiniteInputError(f"{name} is not finite: {v}")
    if weight < 0:
        raise ValueError("weight must be >= 0")
    return l_gt + weight * l_m


def save_feature_map(fmap: BevFeatureMap, path) -> None:
    """Versioned flat tile: header + float32 LE row-major values."""
    height, width, channels = fmap.shape
    header = _FEATURE_HEADER.pack(
        FEATURE_TILE_MAGIC,
        TILE_VERSION,
        height,
        width,
        channels,
        fmap.cell_size,
        fmap.origin[0],
        fmap.origin[1],
    )
    Path(path).write_bytes(header + fmap.values.astype("<f4").tobytes())


def load_feature_map(path) -> BevFeatureMap:
    data = Path(path).read_bytes()
    if len(data) < _FEATURE_HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than tile header")
    magic, version, height, width, channels, cell, ox, oy = _FEATURE_HEADER.unpack_from(
        data
    )
    if magic != FEATURE_TILE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != TILE_VERSION:
        raise UnsupportedLayoutError(f"{path}: unsupported tile version {version}")
    n = height * width * channels
    if len(data) != _FEATURE_HEADER.size + 4 * n:
        raise TruncatedFileError(f"{path}: payload does not match header shape")
    values = (
        np.frombuffer(data, dtype="<f4", count=n, offset=_FEATURE_HEADER.size)
        .astype(np.float64)
        .reshape(height, width, channels)
    )
    return BevFeatureMap(values=values, cell_size=cell, origin=(ox, oy))


def save_roi_set(rois: RoiSet, path) -> None:
    header = _ROI_HEADER.pack(
        ROI_TILE_MAGIC,
        TILE_VERSION,
        rois.pooled_size,
        len(rois),
        1 if rois.balance_shortfall else 0,
    )
    body = b"".join(
        _ROI_RECORD.pack(r.x0, r.y0, r.x1, r.y1, r.tag.value) for r in rois.rois
    )
    Path(path).write_bytes(header + body)


def load_roi_set(path) -> RoiSet:
    data = Path(path).read_bytes()
    if len(data) < _ROI_HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than tile header")
    magic, version, pooled, count, flags = _ROI_HEADER.unpack_from(data)
    if magic != ROI_TILE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != TILE_VERSION:
        raise UnsupportedLayoutError(f"{path}: unsupported tile version {version}")
    if len(data) != _ROI_HEADER.size + count * _ROI_RECORD.size:
        raise TruncatedFileError(f"{path}: payload does not match ROI count")
    rois = []
    for i in range(count):
        x0, y0, x1, y1, tag = _ROI_RECORD.unpack_from(
            data, _ROI_HEADER.size + i * _ROI_RECORD.size
        )
        rois.append(Roi(x0, y0, x1, y1, tag=RoiTag(tag)))
    return RoiSet(
        rois=tuple(rois), pooled_size=pooled, balance_shortfall=bool(flags & 1)
    )
