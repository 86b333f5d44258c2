"""Point-cloud value types and the cartesian/spherical decomposition.

Conventions used throughout the package:

* zenith is the elevation angle of a return above the sensor's horizontal
  plane, ``arctan(z / sqrt(x^2 + y^2))``, in [-pi/2, pi/2];
* azimuth is the full-circle rotation about the vertical axis, computed
  with the two-argument arctangent of (y, x) and normalized to [-pi, pi).
  On the half-plane x > 0 this coincides with ``arcsin(y / sqrt(x^2+y^2))``
  but, unlike the arcsin form, it totally orders returns around the full
  circle, which azimuth-ordered subsampling relies on;
* all internal computation is 64-bit even when file formats store 32-bit,
  so clustering and sort orders stay stable.

Points on the vertical axis (x == y == 0) have no defined zenith for a
spinning-sensor model and are rejected (scalar path) or dropped with a
counter (batch path).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAxisError


@dataclass(frozen=True)
class Point3:
    """A single return in sensor-frame cartesian meters."""

    x: float
    y: float
    z: float
    intensity: float | None = None


@dataclass(frozen=True)
class SphericalCoord:
    """Spherical decomposition of a return: (zenith, azimuth, range)."""

    zenith: float  # radians in [-pi/2, pi/2]
    azimuth: float  # radians in [-pi, pi)
    range_m: float  # meters, >= 0


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of 3D points with optional intensity and beam labels.

    ``xyz`` is an (N, 3) float64 array. ``intensity`` and ``beam_labels``
    when present are length-N and aligned 1:1 with the points. Arrays are
    treated as immutable by every operation in this package.
    """

    xyz: np.ndarray
    intensity: np.ndarray | None = None
    beam_labels: np.ndarray | None = None
    frame_id: str = ""

    def __post_init__(self) -> None:
        xyz = np.asarray(self.xyz, dtype=np.float64)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must be (N, 3), got {xyz.shape}")
        if not np.all(np.isfinite(xyz)):
            raise ValueError("xyz contains non-finite coordinates")
        object.__setattr__(self, "xyz", xyz)
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float64)
            if inten.shape != (len(xyz),):
                raise ValueError("intensity length does not match points")
            object.__setattr__(self, "intensity", inten)
        if self.beam_labels is not None:
            labels = np.asarray(self.beam_labels, dtype=np.int32)
            if labels.shape != (len(xyz),):
                raise ValueError("beam_labels length does not match points")
            if len(labels) and labels.min() < 0:
                raise ValueError("beam_labels must be non-negative")
            object.__setattr__(self, "beam_labels", labels)

    def __len__(self) -> int:
        return len(self.xyz)


@dataclass(frozen=True)
class SphericalBatch:
    """Spherical coordinates of the non-degenerate points of a cloud.

    Indexable as a sequence of SphericalCoord. ``kept`` maps each entry back
    to its index in the source cloud; ``dropped`` counts points rejected for
    lying on the vertical axis.
    """

    zenith: np.ndarray
    azimuth: np.ndarray
    range_m: np.ndarray
    kept: np.ndarray
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.zenith)

    def __getitem__(self, i: int) -> SphericalCoord:
        return SphericalCoord(
            float(self.zenith[i]), float(self.azimuth[i]), float(self.range_m[i])
        )


def _normalize_azimuth(phi):
    """Map the +pi boundary of arctan2 onto -pi so azimuth lies in [-pi, pi)."""
    return np.where(phi >= math.pi, phi - 2.0 * math.pi, phi)


def to_spherical(p: Point3) -> SphericalCoord:
    """Decompose one cartesian point into (zenith, azimuth, range).

    Raises DegenerateAxisError when the point sits on the vertical axis;
    callers are expected to filter such points at ingestion.
    """
    rho_sq = p.x * p.x + p.y * p.y
    if rho_sq == 0.0:
        raise DegenerateAxisError(f"zenith undefined for ({p.x}, {p.y}, {p.z})")
    zenith = math.atan2(p.z, math.sqrt(rho_sq))
    azimuth = math.atan2(p.y, p.x)
    if azimuth >= math.pi:
        azimuth -= 2.0 * math.pi
    range_m = math.sqrt(rho_sq + p.z * p.z)
    return SphericalCoord(zenith, azimuth, range_m)


def batch_to_spherical(cloud: PointCloud) -> SphericalBatch:
    """Vectorized to_spherical over a cloud; degenerate points are dropped.

    The cloud must be non-empty; an empty *result* (every point degenerate)
    is legal and reported through ``dropped``.
    """
    if len(cloud) == 0:
        raise ValueError("cloud is empty")
    x, y, z = cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]
    rho_sq = x * x + y * y
    keep = rho_sq > 0.0
    kept = np.nonzero(keep)[0]
    rho = np.sqrt(rho_sq[keep])
    zenith = np.arctan2(z[keep], rho)
    azimuth = _normalize_azimuth(np.arctan2(y[keep], x[keep]))
    range_m = np.sqrt(rho_sq[keep] + z[keep] * z[keep])
    return SphericalBatch(
        zenith=zenith,
        azimuth=azimuth,
        range_m=range_m,
        kept=kept,
        dropped=int(len(cloud) - keep.sum()),
    )


def spherical_to_cartesian(zenith, azimuth, range_m):
    """Inverse decomposition; accepts scalars or arrays, returns x, y, z."""
    zenith = np.asarray(zenith, dtype=np.float64)
    azimuth = np.asarray(azimuth, dtype=np.float64)
    range_m = np.asarray(range_m, dtype=np.float64)
    xy = range_m * np.cos(zenith)
    return xy * np.cos(azimuth), xy * np.sin(azimuth), range_m * np.sin(zenith)
