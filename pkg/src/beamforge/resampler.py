"""Pseudo low-beam generation: beam subset selection and azimuth-ordered
per-beam point subsampling.

Sensors differ both in beam count and vertical field of view, so matching
beam counts alone would still mismatch angular beam density. The equivalent
beam count scales the target's beams by the VFOV ratio:

    equivalent = round(span_source / span_target * target_beams)

Downsampling then keeps that many beams (uniform stride over the sorted beam
table) and, when the target has fewer points per beam, keeps an evenly
strided subset of each kept beam's azimuth-sorted points. Points are never
synthesized and never modified; upsampling requests are refused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ._util import format_float, parse_kv_text, round_half_away
from .beam_model import BeamModel
from .errors import (
    InvalidVfovError,
    ModelCloudMismatchError,
    ProfileError,
    UpsampleRequestedError,
)
from .geometry import PointCloud, batch_to_spherical


@dataclass(frozen=True)
class SensorProfile:
    """Static description of one rotating LiDAR: beam count, VFOV, density."""

    name: str
    beam_count: int
    vfov: tuple[float, float]  # radians, (low, high)
    points_per_beam: float

    def __post_init__(self) -> None:
        if self.beam_count < 1:
            raise ValueError("beam_count must be >= 1")
        if not self.vfov[1] > self.vfov[0]:
            raise InvalidVfovError(f"vfov {self.vfov} is empty")
        if self.points_per_beam <= 0:
            raise ValueError("points_per_beam must be > 0")

    @property
    def vfov_span(self) -> float:
        return self.vfov[1] - self.vfov[0]


@dataclass(frozen=True)
class ResamplePlan:
    """A fully determined downsampling recipe between two sensor profiles."""

    source: SensorProfile
    target: SensorProfile
    equivalent_beams: int
    keep_beam_indices: np.ndarray  # sorted subset of [0, source.beam_count)
    per_beam_keep_ratio: float  # in (0, 1]

    def __post_init__(self) -> None:
        idx = np.asarray(self.keep_beam_indices, dtype=np.int64)
        if len(idx) != self.equivalent_beams:
            raise ValueError("keep_beam_indices must have equivalent_beams entries")
        if len(idx) > 1 and not np.all(np.diff(idx) > 0):
            raise ValueError("keep_beam_indices must be strictly ascending")
        if len(idx) and (idx[0] < 0 or idx[-1] >= self.source.beam_count):
            raise ValueError("keep_beam_indices out of source range")
        if not 0.0 < self.per_beam_keep_ratio <= 1.0:
            raise ValueError("per_beam_keep_ratio must be in (0, 1]")
        object.__setattr__(self, "keep_beam_indices", idx)

    @property
    def is_identity(self) -> bool:
        return (
            self.equivalent_beams == self.source.beam_count
            and self.per_beam_keep_ratio == 1.0
        )


def equivalent_beams(source: SensorProfile, target: SensorProfile) -> int:
    """Target beam count rescaled into the source VFOV (nearest integer,
    halves away from zero)."""
    if source.vfov_span <= 0 or target.vfov_span <= 0:
        raise InvalidVfovError("profiles must have non-degenerate VFOVs")
    return round_half_away(source.vfov_span / target.vfov_span * target.beam_count)


def _stride_indices(total: int, keep: int) -> np.ndarray:
    """``keep`` distinct indices spread uniformly over range(total)."""
    raw = [round_half_away(i * total / keep) for i in range(keep)]
    out: list[int] = []
    for idx in raw:
        idx = min(idx, total - 1)
        while idx in out:  # collisions only possible at the clamp boundary
            idx += 1
        out.append(idx)
    return np.asarray(sorted(out), dtype=np.int64)


def plan_resample(source: SensorProfile, target: SensorProfile) -> ResamplePlan:
    """Plan the beam subset and per-beam keep ratio for source -> target."""
    b_equiv = equivalent_beams(source, target)
    if b_equiv > source.beam_count:
        raise UpsampleRequestedError(
            f"target needs {b_equiv} equivalent beams but source has "
            f"{source.beam_count}; beam synthesis is refused"
        )
    return ResamplePlan(
        source=source,
        target=target,
        equivalent_beams=b_equiv,
        keep_beam_indices=_stride_indices(source.beam_count, b_equiv),
        per_beam_keep_ratio=min(
            1.0, target.points_per_beam / source.points_per_beam
        ),
    )


def plan_for_beam_target(
    source: SensorProfile, beam_target: int, keep_ratio: float = 1.0
) -> ResamplePlan:
    """Plan a downsample to an explicit beam count (used by staged pipelines);
    the synthetic target profile reuses the source VFOV."""
    if beam_target > source.beam_count:
        raise UpsampleRequestedError(
            f"beam target {beam_target} exceeds source {source.beam_count}"
        )
    synthetic = SensorProfile(
        name=f"{source.name}-{beam_target}b",
        beam_count=beam_target,
        vfov=source.vfov,
        points_per_beam=max(source.points_per_beam * keep_ratio, 1e-9),
    )
    return ResamplePlan(
        source=source,
        target=synthetic,
        equivalent_beams=beam_target,
        keep_beam_indices=_stride_indices(source.beam_count, beam_target),
        per_beam_keep_ratio=keep_ratio,
    )


def apply_resample(
    cloud: PointCloud, model: BeamModel, plan: ResamplePlan
) -> PointCloud:
    """Materialize a plan on one scan.

    Keeps only the planned beams; within each kept beam, points are sorted by
    azimuth (ties by range, then input position) and an evenly strided subset
    is kept, preserving coverage of the full rotation. Output labels are
    re-densified to 0..equivalent_beams-1; coordinates are untouched.
    """
    if len(model.assignments) != len(cloud):
        raise ModelCloudMismatchError(
            f"model covers {len(model.assignments)} points, cloud has {len(cloud)}"
        )
    if model.beam_count != plan.source.beam_count:
        raise ModelCloudMismatchError(
            f"model has {model.beam_count} beams, plan expects "
            f"{plan.source.beam_count}"
        )
    sph = batch_to_spherical(cloud)
    if sph.dropped:
        raise ModelCloudMismatchError(
            "cloud contains vertical-axis points; filter them at ingestion"
        )

    ratio = plan.per_beam_keep_ratio
    keep_parts: list[np.ndarray] = []
    label_parts: list[np.ndarray] = []
    for new_label, beam in enumerate(plan.keep_beam_indices):
        members = np.nonzero(model.assignments == beam)[0]
        n_b = len(members)
        if n_b == 0:
            continue
        order = np.lexsort(
            (members, sph.range_m[members], sph.azimuth[members])
        )
        members = members[order]
        if ratio >= 1.0:
            chosen = members
        else:
            m_b = round_half_away(ratio * n_b)
            if m_b == 0:
                continue
            positions = np.minimum(
                np.floor(np.arange(m_b) * (n_b / m_b) + 0.5).astype(np.int64),
                n_b - 1,
            )
            chosen = members[positions]
        keep_parts.append(chosen)
        label_parts.append(np.full(len(chosen), new_label, dtype=np.int32))

    if keep_parts:
        keep = np.concatenate(keep_parts)
        labels = np.concatenate(label_parts)
    else:
        keep = np.zeros(0, dtype=np.int64)
        labels = np.zeros(0, dtype=np.int32)
    return PointCloud(
        xyz=cloud.xyz[keep],
        intensity=cloud.intensity[keep] if cloud.intensity is not None else None,
        beam_labels=labels,
        frame_id=cloud.frame_id,
    )


def save_profile(profile: SensorProfile, path) -> None:
    lines = [
        "# beamforge sensor profile v1",
        "version = 1",
        f"name = {profile.name}",
        f"beam_count = {profile.beam_count}",
        "vfov_deg = "
        f"{format_float(math.degrees(profile.vfov[0]))} "
        f"{format_float(math.degrees(profile.vfov[1]))}",
        f"points_per_beam = {format_float(profile.points_per_beam)}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_profile(path) -> SensorProfile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ProfileError(f"cannot read profile {path}: {exc}") from exc
    try:
        mapping, _ = parse_kv_text(text)
        lo, hi = (float(v) for v in mapping["vfov_deg"].split())
        return SensorProfile(
            name=mapping["name"],
            beam_count=int(mapping["beam_count"]),
            vfov=(math.radians(lo), math.radians(hi)),
            points_per_beam=float(mapping["points_per_beam"]),
        )
    except (KeyError, ValueError) as exc:
        raise ProfileError(f"malformed profile {path}: {exc}") from exc


def builtin_profile_dir() -> Path:
    return Path(resources.files("beamforge") / "data")  # type: ignore[arg-type]


def resolve_profile(name_or_path: str, search_dir: str | None = None) -> SensorProfile:
    """Load a profile by filesystem path or by preset name.

    Names resolve to ``<name>.profile`` in ``search_dir`` (typically from the
    BEAMFORGE_PROFILE_DIR environment variable) and then the packaged presets.
    """
    candidate = Path(name_or_path)
    if candidate.suffix == ".profile" or candidate.exists():
        return load_profile(candidate)
    tried = []
    for base in ([Path(search_dir)] if search_dir else []) + [builtin_profile_dir()]:
        path = base / f"{name_or_path}.profile"
        tried.append(str(path))
        if path.exists():
            return load_profile(path)
    raise ProfileError(f"no profile named {name_or_path!r} (tried {', '.join(tried)})")
