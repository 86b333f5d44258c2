"""Operator-facing command line.

All subcommands print machine-readable ``key=value`` lines so pipelines and
external trainers can parse results without linking against this package.
Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error. Timing
lines are suppressed under ``--deterministic`` so identical inputs produce
byte-identical stdout.
"""

from __future__ import annotations

import dataclasses
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import distill, pipeline, range_image, simulator
from ._util import format_float
from .beam_model import (
    ClusterConfig,
    cluster_beams,
    model_from_labeled_cloud,
    save_beam_model,
    sensor_stats,
)
from .errors import BeamforgeError, InsufficientPointsError
from .geometry import PointCloud, batch_to_spherical
from .io_formats import ScanFileFormat, read_scan_report, write_scan
from .resampler import (
    apply_resample,
    equivalent_beams,
    plan_resample,
    resolve_profile,
)

PROFILE_DIR_ENV = "BEAMFORGE_PROFILE_DIR"

_FORMATS = {f.value: f for f in ScanFileFormat}


class _Cli(click.Group):
    """Group wrapper mapping exception classes onto the documented exit codes."""

    def main(self, *args, **kwargs):
        kwargs.setdefault("standalone_mode", False)
        try:
            return super().main(*args, **kwargs)
        except click.UsageError as exc:
            exc.show()
            sys.exit(1)
        except click.ClickException as exc:
            exc.show()
            sys.exit(1)
        except click.Abort:
            sys.exit(1)
        except BeamforgeError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except OSError as exc:
            click.echo(f"io error: {exc}", err=True)
            sys.exit(3)


@click.group(cls=_Cli, context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--profile", default=None, help="Default sensor profile (name or path).")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for randomized subcommands.")
@click.option("--threads", type=int, default=1, show_default=True, help="Worker pool size for batch operations.")
@click.option("--format", "out_format", type=click.Choice(sorted(_FORMATS)), default="bfrg", show_default=True, help="Output scan format.")
@click.option("--verbose", is_flag=True, help="Chattier progress output on stderr.")
@click.option("--deterministic", is_flag=True, help="Suppress timing lines so stdout is reproducible.")
@click.pass_context
def cli(ctx, profile, seed, threads, out_format, verbose, deterministic):
    """Beam-structure recovery and pseudo low-beam data tooling."""
    ctx.obj = {
        "profile": profile,
        "seed": seed,
        "threads": max(1, threads),
        "format": _FORMATS[out_format],
        "verbose": verbose,
        "deterministic": deterministic,
        "profile_dir": os.environ.get(PROFILE_DIR_ENV),
    }


def _load_profile(ctx, name: str):
    return resolve_profile(name, ctx.obj["profile_dir"])


def _emit(key: str, value) -> None:
    click.echo(f"{key}={value}")


def _maybe_timing(ctx, t0: float) -> None:
    if not ctx.obj["deterministic"]:
        _emit("time_ms", f"{(time.perf_counter() - t0) * 1e3:.1f}")


def _vfov_deg(vfov) -> str:
    return f"{math.degrees(vfov[0]):.4f},{math.degrees(vfov[1]):.4f}"


@cli.command()
@click.argument("scan", type=click.Path(dir_okay=False))
@click.option("--beams", type=int, required=True, help="Number of beams to recover.")
@click.option("--out-model", type=click.Path(), default=None, help="Beam model document path.")
@click.option("--out-scan", type=click.Path(), default=None, help="Labeled scan output path.")
@click.option("--trim-quantile", type=float, default=0.0, show_default=True, help="Tail fraction of zeniths to ignore while clustering.")
@click.pass_context
def cluster(ctx, scan, beams, out_model, out_scan, trim_quantile):
    """Recover per-point beam labels for one scan.

    SCAN may be a KITTI .bin (float32 x,y,z,intensity records), a .pcd
    (x y z [intensity], ascii or binary), or a beam-labeled .bfrg file.
    Writes a versioned beam-model text document (centers in degrees plus
    per-beam counts) and, with --out-scan, a labeled .bfrg scan.
    """
    t0 = time.perf_counter()
    report = read_scan_report(scan)
    if len(report.cloud) == 0:
        raise InsufficientPointsError(f"{scan} contains no points")
    sph = batch_to_spherical(report.cloud)
    model = cluster_beams(
        sph.zenith, ClusterConfig(beam_count=beams, trim_quantile=trim_quantile)
    )
    stats = sensor_stats(model)
    _emit("points", len(report.cloud))
    _emit("dropped_nonfinite", report.dropped_nonfinite)
    _emit("dropped_degenerate", sph.dropped)
    _emit("beams", stats.beam_count)
    _emit("vfov_deg", _vfov_deg(stats.vfov))
    _emit("points_per_beam", format_float(stats.mean_points_per_beam))
    out_model = Path(out_model) if out_model else Path(scan).with_suffix(".beams")
    save_beam_model(model, out_model)
    _emit("model", out_model)
    if out_scan:
        labels = np.full(len(report.cloud), -1, dtype=np.int32)
        labels[sph.kept] = model.assignments
        keep = labels >= 0
        labeled = PointCloud(
            xyz=report.cloud.xyz[keep],
            intensity=report.cloud.intensity[keep]
            if report.cloud.intensity is not None
            else None,
            beam_labels=labels[keep],
            frame_id=report.cloud.frame_id,
        )
        write_scan(labeled, out_scan, ScanFileFormat.BEAM_LABELED_BIN, beams)
        _emit("scan", out_scan)
    _maybe_timing(ctx, t0)


def _resample_one(scan_path: Path, out_path: Path, source, plan, beams):
    report = read_scan_report(scan_path)
    if (
        report.cloud.beam_labels is not None
        and report.beam_count == source.beam_count
    ):
        model = model_from_labeled_cloud(report.cloud, source.beam_count)
    else:
        sph = batch_to_spherical(report.cloud)
        model = cluster_beams(sph.zenith, ClusterConfig(beam_count=source.beam_count))
    out = apply_resample(report.cloud, model, plan)
    write_scan(out, out_path, ScanFileFormat.BEAM_LABELED_BIN, beams)
    return out


@cli.command()
@click.argument("scan", type=click.Path())
@click.option("--source-profile", required=True, help="Source sensor (name or path).")
@click.option("--target-profile", required=True, help="Target sensor (name or path).")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Output scan path (or directory for batch input).")
@click.pass_context
def resample(ctx, scan, source_profile, target_profile, out_path):
    """Generate pseudo low-beam data for one scan or a directory of scans.

    Accepts .bfrg/.bin/.pcd input; labeled scans reuse their stored labels,
    anything else is clustered with the source profile's beam count first.
    Output is always beam-labeled .bfrg. Profiles are text files
    (name/beam_count/vfov_deg/points_per_beam); 'waymo', 'kitti' and
    'nuscenes' presets ship with the package.
    """
    t0 = time.perf_counter()
    source = _load_profile(ctx, source_profile)
    target = _load_profile(ctx, target_profile)
    plan = plan_resample(source, target)
    _emit("equivalent_beams", plan.equivalent_beams)
    _emit("keep_ratio", format_float(plan.per_beam_keep_ratio))

    scan = Path(scan)
    if scan.is_dir():
        out_dir = Path(out_path) if out_path else scan / "resampled"
        out_dir.mkdir(parents=True, exist_ok=True)
        scans = sorted(
            p for p in scan.iterdir() if p.suffix in (".bfrg", ".bin", ".pcd")
        )
        jobs = [
            (p, out_dir / (p.stem + ".bfrg"), source, plan, plan.equivalent_beams)
            for p in scans
        ]
        with ThreadPoolExecutor(max_workers=ctx.obj["threads"]) as pool:
            results = list(pool.map(lambda a: _resample_one(*a), jobs))
        _emit("scans", len(results))
        _emit("out_dir", out_dir)
    else:
        out_file = Path(out_path) if out_path else scan.with_name(scan.stem + ".low.bfrg")
        cloud = _resample_one(scan, out_file, source, plan, plan.equivalent_beams)
        counts = np.bincount(cloud.beam_labels, minlength=plan.equivalent_beams)
        _emit("points", len(cloud))
        _emit("achieved_beams", int((counts > 0).sum()))
        _emit(
            "achieved_points_per_beam",
            format_float(len(cloud) / plan.equivalent_beams),
        )
        _emit("out", out_file)
    _maybe_timing(ctx, t0)


@cli.command()
@click.option("--source-profile", required=True)
@click.option("--target-profile", required=True)
@click.pass_context
def plan(ctx, source_profile, target_profile):
    """Print the progressive transfer schedule between two sensors."""
    source = _load_profile(ctx, source_profile)
    target = _load_profile(ctx, target_profile)
    schedule = pipeline.plan_schedule(source, target)
    _emit("equivalent_beams", schedule.equivalent_target_beams)
    _emit("n", schedule.n)
    _emit(
        "stages",
        ",".join(
            f"{s.beam_target}{'*' if s.align_points else ''}" for s in schedule.stages
        ),
    )


@cli.command()
@click.option("--source-profile", required=True)
@click.option("--target-profile", required=True)
@click.option("--stage", "stage_index", type=int, required=True, help="1-based stage index.")
@click.option("--data", "data_dir", type=click.Path(file_okay=False), required=True)
@click.option("--work", "work_dir", type=click.Path(), required=True)
@click.pass_context
def materialize(ctx, source_profile, target_profile, stage_index, data_dir, work_dir):
    """Generate one stage's pseudo dataset without training."""
    t0 = time.perf_counter()
    source = _load_profile(ctx, source_profile)
    target = _load_profile(ctx, target_profile)
    schedule = pipeline.plan_schedule(source, target)
    if not 1 <= stage_index <= schedule.n:
        raise BeamforgeError(f"stage {stage_index} outside 1..{schedule.n}")
    stage = schedule.stages[stage_index - 1]
    out = pipeline.materialize_stage(
        schedule, stage, data_dir, Path(work_dir) / f"stage_{stage.index}" / "data"
    )
    _emit("stage", stage.index)
    _emit("beam_target", stage.beam_target)
    _emit("align_points", int(stage.align_points))
    _emit("out_dir", out)
    _maybe_timing(ctx, t0)


@cli.command()
@click.option("--source-profile", required=True)
@click.option("--target-profile", required=True)
@click.option("--data", "data_dir", type=click.Path(file_okay=False), required=True)
@click.option("--work", "work_dir", type=click.Path(), required=True)
@click.option("--hook", required=True, help="Trainer executable; invoked per stage with --teacher/--data/--out.")
@click.option("--teacher", "initial_model", default=None, help="Initial model ref; produced by the hook when omitted.")
@click.pass_context
def run(ctx, source_profile, target_profile, data_dir, work_dir, hook, initial_model):
    """Materialize and train every stage of the progressive schedule."""
    t0 = time.perf_counter()
    source = _load_profile(ctx, source_profile)
    target = _load_profile(ctx, target_profile)
    schedule = pipeline.plan_schedule(source, target)
    final = pipeline.run_schedule(
        schedule, data_dir, hook, work_dir, initial_model=initial_model
    )
    _emit("n", schedule.n)
    _emit("final_model", final)
    _maybe_timing(ctx, t0)


@cli.command()
@click.option("--work", "work_dir", type=click.Path(file_okay=False), required=True)
def status(work_dir):
    """Print per-stage manifest status."""
    found = 0
    for idx in range(1, 1000):
        manifest = pipeline.load_manifest(work_dir, idx)
        if manifest is None:
            break
        found += 1
        click.echo(
            f"stage={manifest.stage} beam_target={manifest.beam_target} "
            f"align_points={int(manifest.align_points)} status={manifest.status} "
            f"teacher={manifest.teacher} student={manifest.student}"
        )
    if found == 0:
        click.echo("stages=0")


@cli.command("mimic-loss")
@click.option("--student", "student_path", type=click.Path(dir_okay=False), required=True)
@click.option("--teacher", "teacher_path", type=click.Path(dir_okay=False), required=True)
@click.option("--rois", "rois_path", type=click.Path(dir_okay=False), default=None, help="ROI tile; generated from --seed when omitted.")
@click.option("--grad-out", type=click.Path(), default=None, help="Write the gradient as a feature tile.")
@click.pass_context
def mimic_loss_cmd(ctx, student_path, teacher_path, rois_path, grad_out):
    """Compute the ROI-sampled feature mimic loss between two tensor tiles.

    Tiles are flat binary files: feature tiles (magic BFFT) carry an
    H x W x C float32 grid; ROI tiles (magic BFRS) carry tagged rectangles
    in cell coordinates. The gradient tile written by --grad-out uses the
    feature tile format.
    """
    student = distill.load_feature_map(student_path)
    teacher = distill.load_feature_map(teacher_path)
    if rois_path:
        rois = distill.load_roi_set(rois_path)
    else:
        rois = distill.generate_rois(
            [], student.shape[:2], seed=ctx.obj["seed"]
        )
    result = distill.mimic_loss(student, teacher, rois)
    _emit("rois", len(rois))
    _emit("loss", format_float(result.loss))
    _emit("grad_max_abs", format_float(float(np.abs(result.grad).max())))
    if grad_out:
        distill.save_feature_map(
            distill.BevFeatureMap(
                values=result.grad,
                cell_size=student.cell_size,
                origin=student.origin,
            ),
            grad_out,
        )
        _emit("grad_out", grad_out)


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Simulator config file; defaults to the preset for --profile.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--count", type=int, default=1, show_default=True, help="Number of scans (seed increments per scan).")
@click.pass_context
def simulate(ctx, config_path, out_path, count):
    """Generate synthetic labeled scans with ground-truth beam structure.

    The config is a key = value text file (beam table, noise, scene boxes);
    sim_kitti/sim_waymo/sim_nuscenes presets ship with the package. Output
    scans are beam-labeled .bfrg files.
    """
    t0 = time.perf_counter()
    if config_path:
        cfg = simulator.load_sim_config(config_path)
    else:
        name = ctx.obj["profile"] or "kitti"
        preset = Path(__file__).parent / "data" / f"sim_{name}.cfg"
        if not preset.exists():
            raise BeamforgeError(f"no simulator preset for profile {name!r}")
        cfg = simulator.load_sim_config(preset)
    if ctx.obj["seed"]:
        cfg = dataclasses.replace(cfg, seed=ctx.obj["seed"])
    out_path = Path(out_path)
    if count > 1:
        out_path.mkdir(parents=True, exist_ok=True)
        total = 0
        for k in range(count):
            scan_cfg = dataclasses.replace(cfg, seed=cfg.seed + k)
            result = simulator.simulate_scan(scan_cfg)
            write_scan(
                result.cloud,
                out_path / f"scan_{k:04d}.bfrg",
                ScanFileFormat.BEAM_LABELED_BIN,
                result.truth.beam_count,
            )
            total += len(result.cloud)
        _emit("scans", count)
        _emit("points", total)
        _emit("out_dir", out_path)
    else:
        result = simulator.simulate_scan(cfg)
        write_scan(
            result.cloud,
            out_path,
            ScanFileFormat.BEAM_LABELED_BIN,
            result.truth.beam_count,
        )
        _emit("points", len(result.cloud))
        _emit("beams", result.truth.beam_count)
        _emit("no_hit", result.no_hit_count)
        _emit("out", out_path)
    _maybe_timing(ctx, t0)


@cli.group("range-image")
def range_image_group():
    """Point cloud <-> range image conversions."""


@range_image_group.command("project")
@click.argument("scan", type=click.Path(dir_okay=False))
@click.option("--beams", type=int, default=None, help="Cluster with this beam count when the scan is unlabeled.")
@click.option("--cols", type=int, default=range_image.DEFAULT_AZIMUTH_BINS, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--png", "png_path", type=click.Path(), default=None, help="Also write a grayscale preview image.")
@click.pass_context
def ri_project(ctx, scan, beams, cols, out_path, png_path):
    """Rasterize a scan into a range-image tile.

    The tile (magic BFRI) stores per-row beam angles, a float32 range grid
    with column 0 at azimuth -pi, and a packed validity mask. --png writes
    a grayscale preview (near returns bright).
    """
    report = read_scan_report(scan)
    if report.cloud.beam_labels is not None:
        model = model_from_labeled_cloud(report.cloud, report.beam_count)
    else:
        if beams is None:
            raise BeamforgeError("unlabeled scan: pass --beams to cluster first")
        sph = batch_to_spherical(report.cloud)
        model = cluster_beams(sph.zenith, ClusterConfig(beam_count=beams))
    img = range_image.project(report.cloud, model, cols)
    range_image.save_range_image(img, out_path)
    _emit("rows", img.rows)
    _emit("cols", img.cols)
    _emit("occupancy", format_float(float(img.valid.mean())))
    _emit("out", out_path)
    if png_path:
        _write_png(img, png_path)
        _emit("png", png_path)


def _write_png(img: range_image.RangeImage, path) -> None:
    from PIL import Image

    peak = img.range_m[img.valid].max() if img.valid.any() else 1.0
    gray = np.zeros(img.range_m.shape, dtype=np.uint8)
    gray[img.valid] = np.clip(
        255 - img.range_m[img.valid] / peak * 255, 0, 255
    ).astype(np.uint8)
    Image.fromarray(gray[::-1], mode="L").save(path)


@range_image_group.command("upsample")
@click.argument("tile", type=click.Path(dir_okay=False))
@click.option("--rows", "target_rows", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--reference", type=click.Path(dir_okay=False), default=None, help="Original-resolution tile to score errors against.")
def ri_upsample(tile, target_rows, out_path, reference):
    """Bilinearly interpolate a range image (BFRI tile) to more rows.

    With --reference, reports the mean absolute range error and the worst
    error over edge cells (range discontinuities > 5 m), the interpolation
    artifacts that make upsampled returns poor training data.
    """
    img = range_image.load_range_image(tile)
    up = range_image.upsample_bilinear(img, target_rows)
    range_image.save_range_image(up, out_path)
    _emit("rows", up.rows)
    _emit("cols", up.cols)
    _emit("out", out_path)
    if reference:
        ref = range_image.load_range_image(reference)
        mean_err, edge_err = _upsample_errors(up, ref)
        _emit("mean_abs_error_m", format_float(mean_err))
        _emit("edge_max_error_m", format_float(edge_err))


def _upsample_errors(up: range_image.RangeImage, ref: range_image.RangeImage):
    """Compare against a reference by nearest row angle; edge cells are
    reference cells whose vertical neighbor differs by more than 5 m."""
    row_map = np.searchsorted(ref.row_angles, up.row_angles)
    row_map = np.clip(row_map, 0, ref.rows - 1)
    prev = np.clip(row_map - 1, 0, ref.rows - 1)
    closer_prev = np.abs(ref.row_angles[prev] - up.row_angles) < np.abs(
        ref.row_angles[row_map] - up.row_angles
    )
    row_map[closer_prev] = prev[closer_prev]
    both = up.valid & ref.valid[row_map]
    err = np.abs(up.range_m - ref.range_m[row_map])
    mean_err = float(err[both].mean()) if both.any() else 0.0
    edge = np.zeros_like(ref.valid)
    for shift in (-1, 1):
        neighbor = np.clip(np.arange(ref.rows) + shift, 0, ref.rows - 1)
        jump = (
            np.abs(ref.range_m - ref.range_m[neighbor]) > 5.0
        ) & ref.valid & ref.valid[neighbor]
        edge |= jump
    edge_cells = both & edge[row_map]
    edge_err = float(err[edge_cells].max()) if edge_cells.any() else 0.0
    return mean_err, edge_err


@range_image_group.command("unproject")
@click.argument("tile", type=click.Path(dir_okay=False))
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
def ri_unproject(ctx, tile, out_path):
    """Convert a range-image tile back to a labeled point cloud.

    Each valid cell emits one point at its row's beam angle and its
    column's bin-center azimuth; beam labels are row indices. The output
    format follows the global --format flag.
    """
    img = range_image.load_range_image(tile)
    cloud = range_image.unproject(img)
    write_scan(cloud, out_path, ctx.obj["format"], img.rows)
    _emit("points", len(cloud))
    _emit("out", out_path)


def main() -> None:
    cli(prog_name="beamforge")


if __name__ == "__main__":
    main()
