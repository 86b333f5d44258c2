"""Synthetic spinning-LiDAR scan generator with ground-truth beam labels.

The simulator casts one ray per (beam, azimuth slot) from the sensor origin
into a scene of a ground plane plus axis-aligned boxes and emits the nearest
hit. Zenith noise is applied to the ray angle (not to the emitted point), so
every emitted point lies exactly on a scene surface while its zenith angle
scatters around the beam's true angle the way real sensors do.

Determinism: each beam draws from its own seeded substream, so scans are
bit-identical for a given config regardless of how beams are iterated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import format_float, parse_kv_text
from .beam_model import BeamModel
from .errors import ProfileError
from .geometry import PointCloud, spherical_to_cartesian

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class SceneBox:
    """Axis-aligned box: footprint center/size in meters plus a z extent."""

    cx: float
    cy: float
    dx: float
    dy: float
    z_min: float
    z_max: float

    def __post_init__(self) -> None:
        if self.dx <= 0 or self.dy <= 0 or self.z_max <= self.z_min:
            raise ValueError("box must have positive extent on every axis")


@dataclass(frozen=True)
class Scene:
    """Ground plane (optional) plus boxes. Boxes may enclose the sensor;
    rays cast from inside hit the inner faces, which is the cheap way to
    give every beam a return."""

    ground_height: float | None = None
    boxes: tuple[SceneBox, ...] = ()


@dataclass(frozen=True)
class SimConfig:
    """Scan generator configuration.

    Beam angles come either from ``beam_angles`` (explicit, strictly
    ascending) or from (beam_count, vfov, spacing). ``spacing_sigma`` > 0
    perturbs each nominally uniform angle by a Gaussian draw, modelling
    sensors whose real beam table drifts off the uniform grid.
    """

    beam_angles: tuple[float, ...] | None = None
    beam_count: int | None = None
    vfov: tuple[float, float] | None = None  # radians
    spacing_sigma: float = 0.0  # radians; 0 = uniform
    points_per_beam: int = 1000
    zenith_noise: float = 0.0  # radians, stddev
    azimuth_jitter: float = 0.0  # radians, half-width of uniform jitter
    scene: Scene = field(default_factory=Scene)
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.beam_angles is None:
            if self.beam_count is None or self.vfov is None:
                raise ValueError("need beam_angles or (beam_count, vfov)")
            if self.beam_count < 1:
                raise ValueError("beam_count must be >= 1")
            if self.beam_count > 1 and not self.vfov[1] > self.vfov[0]:
                raise ValueError("vfov must be non-empty")
        else:
            angles = tuple(float(a) for a in self.beam_angles)
            if len(angles) < 1 or list(angles) != sorted(set(angles)):
                raise ValueError("beam_angles must be strictly ascending")
            object.__setattr__(self, "beam_angles", angles)
        if self.points_per_beam < 1:
            raise ValueError("points_per_beam must be >= 1")
        if self.zenith_noise < 0 or self.azimuth_jitter < 0:
            raise ValueError("noise magnitudes must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    def resolved_beam_angles(self) -> np.ndarray:
        if self.beam_angles is not None:
            return np.asarray(self.beam_angles, dtype=np.float64)
        lo, hi = self.vfov  # type: ignore[misc]
        if self.beam_count == 1:
            angles = np.asarray([0.5 * (lo + hi)])
        else:
            angles = np.linspace(lo, hi, self.beam_count)
        if self.spacing_sigma > 0.0:
            rng = np.random.default_rng([self.seed, 0x5AC])
            angles = np.sort(angles + rng.normal(0.0, self.spacing_sigma, len(angles)))
            if len(angles) > 1 and not np.all(np.diff(angles) > 0):
                raise ValueError("perturbed beam angles collided; lower spacing_sigma")
        return angles


@dataclass(frozen=True)
class SimulatedScan:
    cloud: PointCloud  # beam_labels carry the ground truth
    truth: BeamModel
    no_hit_count: int
    dropout_count: int


def _ray_ranges(dirs: np.ndarray, scene: Scene) -> np.ndarray:
    """Nearest positive hit distance per unit-direction ray, inf if none."""
    n = len(dirs)
    best = np.full(n, np.inf)

    if scene.ground_height is not None:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = scene.ground_height / dz
        hit = np.isfinite(t) & (t > _RAY_EPS)
        best[hit] = np.minimum(best[hit], t[hit])

    for box in scene.boxes:
        lo = np.array([box.cx - box.dx / 2, box.cy - box.dy / 2, box.z_min])
        hi = np.array([box.cx + box.dx / 2, box.cy + box.dy / 2, box.z_max])
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = lo[None, :] / dirs
            t_hi = hi[None, :] / dirs
        t_near = np.minimum(t_lo, t_hi)
        t_far = np.maximum(t_lo, t_hi)
        # Rays parallel to an axis inside the slab: that axis never limits.
        parallel = dirs == 0.0
        inside = (0.0 >= lo[None, :]) & (0.0 <= hi[None, :])
        t_near = np.where(parallel, -np.inf, t_near)
        t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), t_far)
        t_enter = t_near.max(axis=1)
        t_exit = t_far.min(axis=1)
        hit = t_exit >= np.maximum(t_enter, 0.0)
        t_first = np.where(t_enter > _RAY_EPS, t_enter, t_exit)
        take = hit & (t_first > _RAY_EPS)
        best[take] = np.minimum(best[take], t_first[take])

    return best


def simulate_scan(cfg: SimConfig) -> SimulatedScan:
    """Generate one full rotation: every beam fires points_per_beam rays at
    uniformly spaced azimuth slots (plus jitter); nearest scene hit wins."""
    angles = cfg.resolved_beam_angles()
    n_beams = len(angles)
    per_beam = cfg.points_per_beam
    slots = -math.pi + (np.arange(per_beam) + 0.5) * (2.0 * math.pi / per_beam)

    xs, ys, zs, labels = [], [], [], []
    no_hit = 0
    dropped = 0
    for b in range(n_beams):
        rng = np.random.default_rng([cfg.seed, b])
        zenith = angles[b] + (
            rng.normal(0.0, cfg.zenith_noise, per_beam)
            if cfg.zenith_noise > 0
            else 0.0
        )
        azimuth = slots + (
            rng.uniform(-cfg.azimuth_jitter, cfg.azimuth_jitter, per_beam)
            if cfg.azimuth_jitter > 0
            else 0.0
        )
        azimuth = np.mod(azimuth + math.pi, 2.0 * math.pi) - math.pi
        ux, uy, uz = spherical_to_cartesian(zenith, azimuth, np.ones(per_beam))
        dirs = np.stack([ux, uy, uz], axis=1)
        ranges = _ray_ranges(dirs, cfg.scene)
        hit = np.isfinite(ranges)
        no_hit += int(per_beam - hit.sum())
        if cfg.dropout_rate > 0.0:
            keep = rng.uniform(0.0, 1.0, per_beam) >= cfg.dropout_rate
            dropped += int((hit & ~keep).sum())
            hit &= keep
        r = ranges[hit]
        xs.append(dirs[hit, 0] * r)
        ys.append(dirs[hit, 1] * r)
        zs.append(dirs[hit, 2] * r)
        labels.append(np.full(int(hit.sum()), b, dtype=np.int32))

    xyz = np.stack(
        [np.concatenate(xs), np.concatenate(ys), np.concatenate(zs)], axis=1
    )
    all_labels = np.concatenate(labels)
    cloud = PointCloud(xyz=xyz, beam_labels=all_labels, frame_id=f"sim-{cfg.seed}")
    truth = BeamModel.from_assignments(angles, all_labels)
    return SimulatedScan(
        cloud=cloud, truth=truth, no_hit_count=no_hit, dropout_count=dropped
    )


def save_sim_config(cfg: SimConfig, path) -> None:
    lines = ["# beamforge simulator config v1", "version = 1"]
    if cfg.beam_angles is not None:
        angles = " ".join(format_float(math.degrees(a)) for a in cfg.beam_angles)
        lines.append(f"beam_angles_deg = {angles}")
    else:
        lines.append(f"beam_count = {cfg.beam_count}")
        lines.append(
            "vfov_deg = "
            f"{format_float(math.degrees(cfg.vfov[0]))} "
            f"{format_float(math.degrees(cfg.vfov[1]))}"
        )
        if cfg.spacing_sigma:
            lines.append(
                f"spacing_sigma_deg = {format_float(math.degrees(cfg.spacing_sigma))}"
            )
    lines.append(f"points_per_beam = {cfg.points_per_beam}")
    lines.append(f"zenith_noise_deg = {format_float(math.degrees(cfg.zenith_noise))}")
    lines.append(
        f"azimuth_jitter_deg = {format_float(math.degrees(cfg.azimuth_jitter))}"
    )
    lines.append(f"dropout_rate = {format_float(cfg.dropout_rate)}")
    lines.append(f"seed = {cfg.seed}")
    if cfg.scene.ground_height is not None:
        lines.append(f"ground_height = {format_float(cfg.scene.ground_height)}")
    for box in cfg.scene.boxes:
        lines.append(
            "box = "
            + " ".join(
                format_float(v)
                for v in (box.cx, box.cy, box.dx, box.dy, box.z_min, box.z_max)
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_sim_config(path) -> SimConfig:
    try:
        mapping, pairs = parse_kv_text(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ProfileError(f"cannot read simulator config {path}: {exc}") from exc
    try:
        boxes = tuple(
            SceneBox(*(float(v) for v in value.split()))
            for key, value in pairs
            if key == "box"
        )
        ground = mapping.get("ground_height")
        scene = Scene(
            ground_height=float(ground) if ground is not None else None, boxes=boxes
        )
        common = dict(
            points_per_beam=int(mapping.get("points_per_beam", 1000)),
            zenith_noise=math.radians(float(mapping.get("zenith_noise_deg", 0.0))),
            azimuth_jitter=math.radians(float(mapping.get("azimuth_jitter_deg", 0.0))),
            dropout_rate=float(mapping.get("dropout_rate", 0.0)),
            seed=int(mapping.get("seed", 0)),
            scene=scene,
        )
        if "beam_angles_deg" in mapping:
            angles = tuple(
                math.radians(float(v)) for v in mapping["beam_angles_deg"].split()
            )
            return SimConfig(beam_angles=angles, **common)
        lo, hi = (float(v) for v in mapping["vfov_deg"].split())
        return SimConfig(
            beam_count=int(mapping["beam_count"]),
            vfov=(math.radians(lo), math.radians(hi)),
            spacing_sigma=math.radians(float(mapping.get("spacing_sigma_deg", 0.0))),
            **common,
        )
    except (KeyError, ValueError) as exc:
        raise ProfileError(f"malformed simulator config {path}: {exc}") from exc
