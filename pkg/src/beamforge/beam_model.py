"""Beam structure recovery from zenith angles.

A rotating LiDAR's returns cluster tightly around one zenith angle per
laser channel, but with enough noise that the conventional approach of
snapping to uniformly spaced angles mislabels points whenever real beams
drift off the uniform grid. ``cluster_beams`` runs a deterministic 1-D
K-means on the zenith angles instead and recovers both the beam center
table and per-point labels; ``assign_uniform_baseline`` provides the
conventional method for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from ._util import format_float, parse_kv_text
from .errors import (
    InsufficientPointsError,
    InvalidVfovError,
    ModelCloudMismatchError,
)
from .geometry import PointCloud, batch_to_spherical

BEAM_MODEL_DOC_VERSION = 1
_DOC_HEADER = "beamforge-beam-model"


@dataclass(frozen=True)
class ClusterConfig:
    """K-means hyperparameters.

    ``init_seed=None`` selects the deterministic uniform-span initializer
    (beam_count centers evenly spaced over the observed zenith extent);
    an integer seed instead draws initial centers from the data. A nonzero
    ``trim_quantile`` drops that fraction of extreme zeniths from each tail
    before clustering, which guards the recovered field of view against
    stray outliers.
    """

    beam_count: int
    max_iters: int = 100
    tol: float = 1e-6  # radians of center movement
    init_seed: int | None = None
    trim_quantile: float = 0.0

    def __post_init__(self) -> None:
        if self.beam_count < 1:
            raise ValueError("beam_count must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if not 0.0 <= self.trim_quantile < 0.5:
            raise ValueError("trim_quantile must be in [0, 0.5)")


@dataclass(frozen=True)
class BeamModel:
    """Recovered beam structure of one scan.

    ``centers`` are strictly ascending zenith angles (radians); ``assignments``
    give each point's beam index. ``vfov`` spans the lowest to highest beam
    center, which is more robust to stray returns than the raw zenith extrema.
    """

    centers: np.ndarray
    assignments: np.ndarray
    per_beam_counts: np.ndarray
    n_iterations: int = 0

    def __post_init__(self) -> None:
        centers = np.asarray(self.centers, dtype=np.float64)
        if centers.ndim != 1 or len(centers) < 1:
            raise ValueError("centers must be a non-empty 1-D array")
        if len(centers) > 1 and not np.all(np.diff(centers) > 0):
            raise ValueError("centers must be strictly ascending")
        assignments = np.asarray(self.assignments, dtype=np.int32)
        counts = np.asarray(self.per_beam_counts, dtype=np.int64)
        if counts.shape != centers.shape:
            raise ValueError("per_beam_counts length must equal beam count")
        if len(assignments) and (
            assignments.min() < 0 or assignments.max() >= len(centers)
        ):
            raise ValueError("assignments reference beams outside the model")
        if counts.sum() != len(assignments):
            raise ValueError("per_beam_counts do not sum to the point count")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "assignments", assignments)
        object.__setattr__(self, "per_beam_counts", counts)

    @property
    def beam_count(self) -> int:
        return len(self.centers)

    @property
    def vfov(self) -> tuple[float, float]:
        return float(self.centers[0]), float(self.centers[-1])

    @property
    def mean_points_per_beam(self) -> float:
        return len(self.assignments) / self.beam_count

    @classmethod
    def from_assignments(cls, centers, assignments) -> "BeamModel":
        """Build a model from known labels (e.g. simulator ground truth)."""
        centers = np.asarray(centers, dtype=np.float64)
        assignments = np.asarray(assignments, dtype=np.int32)
        counts = np.bincount(assignments, minlength=len(centers)).astype(np.int64)
        return cls(centers=centers, assignments=assignments, per_beam_counts=counts)


@dataclass(frozen=True)
class SensorStats:
    beam_count: int
    vfov: tuple[float, float]  # radians, (low, high)
    mean_points_per_beam: float


def nearest_center(centers: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Assign each value to its nearest center; ties go to the lower index.

    centers must be sorted ascending. A value exactly midway between two
    centers is equidistant; searchsorted with side='left' over the midpoints
    places it with the lower-indexed center.
    """
    if len(centers) == 1:
        return np.zeros(len(values), dtype=np.int32)
    midpoints = 0.5 * (centers[:-1] + centers[1:])
    return np.searchsorted(midpoints, values, side="left").astype(np.int32)


def _init_centers(zeniths: np.ndarray, cfg: ClusterConfig) -> np.ndarray:
    if cfg.init_seed is None:
        return np.linspace(zeniths.min(), zeniths.max(), cfg.beam_count)
    rng = np.random.default_rng(cfg.init_seed)
    picks = rng.choice(np.unique(zeniths), size=cfg.beam_count, replace=False)
    return np.sort(picks)


def _reseed_empty(centers: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Move each empty cluster's center to the midpoint of the widest gap
    between the surviving centers, one at a time."""
    survivors = sorted(centers[counts > 0].tolist())
    n_empty = int((counts == 0).sum())
    for _ in range(n_empty):
        if len(survivors) < 2:
            raise InsufficientPointsError(
                "cannot re-seed empty clusters: fewer than two occupied beams"
            )
        gaps = np.diff(survivors)
        widest = int(np.argmax(gaps))
        mid = 0.5 * (survivors[widest] + survivors[widest + 1])
        survivors.insert(widest + 1, mid)
    return np.asarray(survivors, dtype=np.float64)


def _lloyd_steps(
    zeniths: np.ndarray, cfg: ClusterConfig
) -> Iterator[tuple[np.ndarray, np.ndarray, float]]:
    """Yield (centers, assignments, objective) after each K-means iteration.

    The objective is the sum of squared zenith distances to assigned centers;
    it is non-increasing across iterations.
    """
    centers = _init_centers(zeniths, cfg)
    for _ in range(cfg.max_iters):
        assign = nearest_center(centers, zeniths)
        objective = float(np.sum((zeniths - centers[assign]) ** 2))
        counts = np.bincount(assign, minlength=cfg.beam_count)
        sums = np.bincount(assign, weights=zeniths, minlength=cfg.beam_count)
        new_centers = centers.copy()
        occupied = counts > 0
        new_centers[occupied] = sums[occupied] / counts[occupied]
        reseeded = not occupied.all()
        if reseeded:
            new_centers = _reseed_empty(new_centers, counts)
        new_centers = np.sort(new_centers)
        movement = float(np.max(np.abs(new_centers - centers)))
        centers = new_centers
        yield centers, assign, objective
        if movement < cfg.tol and not reseeded:
            return


def cluster_beams(zeniths, cfg: ClusterConfig) -> BeamModel:
    """Recover beam centers and per-point labels by 1-D K-means on zeniths.

    Deterministic for a given (input, config): the uniform-span initializer
    has no randomness, assignment ties break to the lower index, and empty
    clusters re-seed at the midpoint of the widest surviving gap.
    """
    zeniths = np.asarray(zeniths, dtype=np.float64)
    if zeniths.ndim != 1:
        raise ValueError("zeniths must be 1-D")
    if not np.all(np.isfinite(zeniths)):
        raise ValueError("zeniths must be finite")
    if len(zeniths) < cfg.beam_count:
        raise InsufficientPointsError(
            f"{len(zeniths)} points cannot form {cfg.beam_count} beams"
        )

    work = zeniths
    if cfg.trim_quantile > 0.0:
        lo, hi = np.quantile(zeniths, [cfg.trim_quantile, 1.0 - cfg.trim_quantile])
        inside = (zeniths >= lo) & (zeniths <= hi)
        if inside.sum() >= cfg.beam_count:
            work = zeniths[inside]

    # K distinct non-empty 1-D clusters need at least K distinct values.
    if len(np.unique(work)) < cfg.beam_count:
        raise InsufficientPointsError(
            f"fewer than {cfg.beam_count} distinct zenith values"
        )

    centers = None
    iterations = 0
    for centers, _, _ in _lloyd_steps(work, cfg):
        iterations += 1
    assert centers is not None

    # Final labels always cover the full input, including trimmed tails.
    assignments = nearest_center(centers, zeniths)
    counts = np.bincount(assignments, minlength=cfg.beam_count).astype(np.int64)
    return BeamModel(
        centers=centers,
        assignments=assignments,
        per_beam_counts=counts,
        n_iterations=iterations,
    )


def assign_uniform_baseline(zeniths, vfov: tuple[float, float], beam_count: int):
    """Conventional labeling: nearest of ``beam_count`` uniformly spaced angles.

    Provided for comparison; it mislabels points whenever the true beam table
    deviates from the uniform grid.
    """
    low, high = float(vfov[0]), float(vfov[1])
    if not high > low:
        raise InvalidVfovError(f"vfov [{low}, {high}] is empty")
    if beam_count < 1:
        raise ValueError("beam_count must be >= 1")
    zeniths = np.asarray(zeniths, dtype=np.float64)
    angles = np.linspace(low, high, beam_count)
    return nearest_center(angles, zeniths)


def sensor_stats(model: BeamModel) -> SensorStats:
    """Summary statistics of a recovered beam model."""
    return SensorStats(
        beam_count=model.beam_count,
        vfov=model.vfov,
        mean_points_per_beam=model.mean_points_per_beam,
    )


def model_from_labeled_cloud(cloud: PointCloud, beam_count: int) -> BeamModel:
    """Rebuild a beam model from a cloud that already carries labels,
    using each beam's mean zenith as its center. Every beam must be
    populated (centers of empty beams would be undefined)."""
    if cloud.beam_labels is None:
        raise ModelCloudMismatchError("cloud has no beam labels")
    if len(cloud) == 0:
        raise ModelCloudMismatchError("cloud is empty")
    labels = cloud.beam_labels
    if labels.max() >= beam_count:
        raise ModelCloudMismatchError(
            f"label {labels.max()} outside {beam_count} beams"
        )
    sph = batch_to_spherical(cloud)
    if sph.dropped:
        raise ModelCloudMismatchError("cloud contains vertical-axis points")
    counts = np.bincount(labels, minlength=beam_count)
    if (counts == 0).any():
        raise ModelCloudMismatchError("labeled cloud has empty beams")
    sums = np.bincount(labels, weights=sph.zenith, minlength=beam_count)
    return BeamModel(
        centers=sums / counts,
        assignments=labels,
        per_beam_counts=counts.astype(np.int64),
    )


def save_beam_model(model: BeamModel, path) -> None:
    """Write the versioned text document (centers in degrees plus counts)."""
    lines = [
        f"# {_DOC_HEADER} v{BEAM_MODEL_DOC_VERSION}",
        f"version = {BEAM_MODEL_DOC_VERSION}",
        f"beam_count = {model.beam_count}",
        f"point_count = {len(model.assignments)}",
    ]
    for i, (center, count) in enumerate(zip(model.centers, model.per_beam_counts)):
        lines.append(f"beam = {i} {format_float(math.degrees(center))} {int(count)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_beam_model_centers(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back (centers_radians, per_beam_counts) from the text document.

    Assignments are per-scan and are not part of the document; callers that
    need labels re-derive them with ``nearest_center``.
    """
    mapping, pairs = parse_kv_text(Path(path).read_text(encoding="utf-8"))
    if mapping.get("version") != str(BEAM_MODEL_DOC_VERSION):
        raise ValueError(f"unsupported beam model document version in {path}")
    beam_count = int(mapping["beam_count"])
    centers = np.zeros(beam_count, dtype=np.float64)
    counts = np.zeros(beam_count, dtype=np.int64)
    seen = 0
    for key, value in pairs:
        if key != "beam":
            continue
        idx_s, deg_s, count_s = value.split()
        idx = int(idx_s)
        centers[idx] = math.radians(float(deg_s))
        counts[idx] = int(count_s)
        seen += 1
    if seen != beam_count:
        raise ValueError(f"beam model document lists {seen}/{beam_count} beams")
    return centers, counts
