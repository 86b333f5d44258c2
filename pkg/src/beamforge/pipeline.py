"""Progressive teacher-student transfer over pseudo low-beam datasets.

A large beam gap (say 64 -> 16) is bridged in halving steps: the schedule
has n = floor(log2(source_beams / equivalent_target_beams)) stages, stage j
downsampling the *original* source scans to round(source/2^j) beams. Only
the final stage additionally aligns points per beam to the target density;
when the beam ratio is not a power of two the final stage targets the
equivalent beam count exactly so the produced data always matches the
target density. Each stage's trained student becomes the next stage's
teacher.

Training itself is an external executable (the "hook"), invoked per stage as

    hook --teacher <ref> --data <dir> --out <ref>

where refs are opaque paths. Stage state lives in versioned manifest files
keyed by a content hash of the input dataset, so re-runs skip completed
stages and dataset changes invalidate stale stages.
"""

from __future__ import annotations

import hashlib
import math
import shlex
import subprocess
from dataclasses import dataclass, replace
from pathlib import Path

from ._util import parse_kv_text, round_half_away
from .beam_model import (
    BeamModel,
    ClusterConfig,
    cluster_beams,
    model_from_labeled_cloud,
)
from .errors import (
    HookFailureError,
    ModelCloudMismatchError,
    UpsampleRequestedError,
)
from .geometry import PointCloud, batch_to_spherical
from .io_formats import ScanFileFormat, read_scan_report, write_scan
from .resampler import (
    SensorProfile,
    equivalent_beams,
    plan_for_beam_target,
    apply_resample,
)

MANIFEST_VERSION = 1
SCAN_SUFFIX = ".bfrg"


@dataclass(frozen=True)
class Stage:
    index: int  # 1-based
    beam_target: int
    align_points: bool


@dataclass(frozen=True)
class ProgressiveSchedule:
    source: SensorProfile
    target: SensorProfile
    equivalent_target_beams: int
    stages: tuple[Stage, ...]

    @property
    def n(self) -> int:
        return len(self.stages)


@dataclass(frozen=True)
class StageManifest:
    stage: int
    beam_target: int
    align_points: bool
    input_dir: str
    input_hash: str
    output_dir: str
    output_hash: str
    teacher: str
    student: str
    status: str  # pending | generated | trained


def plan_schedule(
    source: SensorProfile, target: SensorProfile
) -> ProgressiveSchedule:
    """Compute the halving stage sequence from source to target density."""
    b_equiv = equivalent_beams(source, target)
    if b_equiv > source.beam_count:
        raise UpsampleRequestedError(
            f"equivalent target beams {b_equiv} exceed source {source.beam_count}"
        )
    n = int(math.floor(math.log2(source.beam_count / b_equiv)))
    stages = []
    for j in range(1, n + 1):
        beam_target = round_half_away(source.beam_count / 2**j)
        if j == n:
            beam_target = b_equiv  # close any non-power-of-two residual gap
        stages.append(Stage(index=j, beam_target=beam_target, align_points=j == n))
    return ProgressiveSchedule(
        source=source,
        target=target,
        equivalent_target_beams=b_equiv,
        stages=tuple(stages),
    )


def _dataset_scans(dataset_dir: Path) -> list[Path]:
    scans = sorted(
        p
        for p in dataset_dir.iterdir()
        if p.suffix.lower() in (SCAN_SUFFIX, ".bin") and p.is_file()
    )
    if not scans:
        raise FileNotFoundError(f"no scans in {dataset_dir}")
    return scans


def dataset_hash(dataset_dir) -> str:
    """Order-independent content hash of every scan file in a directory."""
    digest = hashlib.sha256()
    for path in _dataset_scans(Path(dataset_dir)):
        digest.update(path.name.encode())
        digest.update(hashlib.sha256(path.read_bytes()).digest())
    return "sha256:" + digest.hexdigest()


def model_for_scan(
    cloud: PointCloud, beam_count: int, path: Path, models=None
) -> BeamModel:
    """Per-scan beam model: caller-provided, rebuilt from stored labels, or
    recovered by clustering when the scan carries no labels."""
    if models and path.name in models:
        return models[path.name]
    if len(cloud) == 0:
        raise ModelCloudMismatchError(f"{path}: empty scan")
    if cloud.beam_labels is not None:
        return model_from_labeled_cloud(cloud, beam_count)
    sph = batch_to_spherical(cloud)
    if sph.dropped:
        raise ModelCloudMismatchError(f"{path}: vertical-axis points present")
    return cluster_beams(sph.zenith, ClusterConfig(beam_count=beam_count))


def materialize_stage(
    schedule: ProgressiveSchedule,
    stage: Stage,
    input_dataset: Path | str,
    output_dir: Path | str,
    beam_models: dict[str, BeamModel] | None = None,
) -> Path:
    """Resample every source scan to the stage's beam target (and point ratio
    on the final stage) as beam-labeled files. Deterministic: re-running
    produces byte-identical outputs."""
    input_dataset = Path(input_dataset)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    ratio = 1.0
    if stage.align_points:
        ratio = min(
            1.0, schedule.target.points_per_beam / schedule.source.points_per_beam
        )
    plan = plan_for_beam_target(schedule.source, stage.beam_target, ratio)
    for scan_path in _dataset_scans(input_dataset):
        report = read_scan_report(scan_path)
        model = model_for_scan(
            report.cloud, schedule.source.beam_count, scan_path, beam_models
        )
        resampled = apply_resample(report.cloud, model, plan)
        out_path = output_dir / (scan_path.stem + SCAN_SUFFIX)
        write_scan(
            resampled,
            out_path,
            ScanFileFormat.BEAM_LABELED_BIN,
            beam_count=stage.beam_target,
        )
    return output_dir


def manifest_path(work_dir, stage_index: int) -> Path:
    return Path(work_dir) / f"stage_{stage_index}.manifest"


def save_manifest(manifest: StageManifest, work_dir) -> None:
    lines = [
        "# beamforge stage manifest v1",
        f"version = {MANIFEST_VERSION}",
        f"stage = {manifest.stage}",
        f"beam_target = {manifest.beam_target}",
        f"align_points = {int(manifest.align_points)}",
        f"input = {manifest.input_dir}",
        f"input_hash = {manifest.input_hash}",
        f"output = {manifest.output_dir}",
        f"output_hash = {manifest.output_hash}",
        f"teacher = {manifest.teacher}",
        f"student = {manifest.student}",
        f"status = {manifest.status}",
    ]
    path = manifest_path(work_dir, manifest.stage)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(work_dir, stage_index: int) -> StageManifest | None:
    path = manifest_path(work_dir, stage_index)
    if not path.exists():
        return None
    mapping, _ = parse_kv_text(path.read_text(encoding="utf-8"))
    if mapping.get("version") != str(MANIFEST_VERSION):
        raise ValueError(f"unsupported manifest version in {path}")
    return StageManifest(
        stage=int(mapping["stage"]),
        beam_target=int(mapping["beam_target"]),
        align_points=bool(int(mapping["align_points"])),
        input_dir=mapping["input"],
        input_hash=mapping["input_hash"],
        output_dir=mapping["output"],
        output_hash=mapping["output_hash"],
        teacher=mapping["teacher"],
        student=mapping["student"],
        status=mapping["status"],
    )


def _invoke_hook(hook, teacher: str, data_dir: str, out_ref: str) -> None:
    argv = shlex.split(hook) if isinstance(hook, str) else list(hook)
    argv += ["--teacher", teacher, "--data", data_dir, "--out", out_ref]
    result = subprocess.run(argv, capture_output=True, text=True)
    if result.returncode != 0:
        raise HookFailureError(
            f"hook {argv[0]} exited {result.returncode}: {result.stderr.strip()}"
        )


def run_schedule(
    schedule: ProgressiveSchedule,
    dataset_dir: Path | str,
    hook,
    work_dir: Path | str,
    initial_model: str | None = None,
    beam_models: dict[str, BeamModel] | None = None,
) -> str:
    """Drive the full progressive transfer; returns the final model ref.

    Stages run strictly in order: materialize the stage dataset, then invoke
    the trainer hook with the previous stage's student as teacher. Progress
    is resumable: a stage whose manifest is 'trained' and whose input hash
    still matches is skipped; a failed hook leaves the manifest 'generated'
    so the next run picks up exactly there. If no initial model is supplied
    the hook is first invoked on the raw source data to produce one.
    """
    dataset_dir = Path(dataset_dir)
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    refs_dir = work_dir / "refs"
    refs_dir.mkdir(exist_ok=True)

    in_hash = dataset_hash(dataset_dir)
    if initial_model is None:
        initial_model = str(refs_dir / "stage0.model")
        _invoke_hook(hook, "none", str(dataset_dir), initial_model)

    teacher = initial_model
    for stage in schedule.stages:
        student = str(refs_dir / f"stage{stage.index}.model")
        stage_out = work_dir / f"stage_{stage.index}" / "data"
        manifest = load_manifest(work_dir, stage.index)
        stale = manifest is not None and manifest.input_hash != in_hash
        if manifest is not None and not stale and manifest.status == "trained":
            teacher = manifest.student
            continue

        if manifest is None or stale or manifest.status == "pending":
            materialize_stage(schedule, stage, dataset_dir, stage_out, beam_models)
            manifest = StageManifest(
                stage=stage.index,
                beam_target=stage.beam_target,
                align_points=stage.align_points,
                input_dir=str(dataset_dir),
                input_hash=in_hash,
                output_dir=str(stage_out),
                output_hash=dataset_hash(stage_out),
                teacher=teacher,
                student=student,
                status="generated",
            )
            save_manifest(manifest, work_dir)
        elif manifest.output_hash != dataset_hash(Path(manifest.output_dir)):
            # Outputs were tampered with or lost; regenerate them.
            materialize_stage(schedule, stage, dataset_dir, stage_out, beam_models)
            manifest = replace(manifest, output_hash=dataset_hash(stage_out))
            save_manifest(manifest, work_dir)

        _invoke_hook(hook, manifest.teacher, manifest.output_dir, manifest.student)
        manifest = replace(manifest, status="trained")
        save_manifest(manifest, work_dir)
        teacher = manifest.student

    return teacher
