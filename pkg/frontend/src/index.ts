/**
 * Bindings for the beamforge toolkit: beam clustering, pseudo low-beam
 * resampling, and the ROI-sampled BEV mimic loss, driven entirely through
 * the CLI and its versioned binary interchange formats so results are
 * bit-identical to direct CLI use. This layer marshals data; it contains
 * no numerical logic of its own.
 */

import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { cliArgv, parseKv, runCli } from "./cli";
import { readScan, writeScan } from "./scanFormats";
import { readFeatureTile, writeFeatureTile, writeRoiTile, validateFeatureMap } from "./tiles";
import { BeamModel, BoundaryError, FeatureMap, PointCloud, RoiSet } from "./types";

export { BeamModel, BoundaryError, FeatureMap, PointCloud, Roi, RoiSet, RoiTag } from "./types";
export { readScan, writeScan, detectScanFormat, encodeBeamLabeled, decodeBeamLabeled, encodeKitti, decodeKitti } from "./scanFormats";
export { readFeatureTile, writeFeatureTile, readRoiTile, writeRoiTile, encodeFeatureTile, decodeFeatureTile, encodeRoiTile, decodeRoiTile } from "./tiles";
export { CliError, cliArgv, parseKv, runCli } from "./cli";

function tempDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

export function parseBeamModelDocument(text: string): BeamModel {
  const fields = new Map<string, string>();
  const beams: Array<[number, number, number]> = [];
  for (const raw of text.split("\n")) {
    const line = raw.split("#", 1)[0].trim();
    if (!line) continue;
    const idx = line.indexOf("=");
    if (idx < 0) continue;
    const key = line.slice(0, idx).trim();
    const value = line.slice(idx + 1).trim();
    if (key === "beam") {
      const [i, deg, count] = value.split(/\s+/);
      beams.push([Number(i), Number(deg), Number(count)]);
    } else {
      fields.set(key, value);
    }
  }
  const beamCount = Number(fields.get("beam_count"));
  if (!Number.isInteger(beamCount) || beams.length !== beamCount) {
    throw new Error(`malformed beam model document (${beams.length}/${beamCount} beams)`);
  }
  const centersDeg = new Float64Array(beamCount);
  const centersRad = new Float64Array(beamCount);
  const perBeamCounts = new Uint32Array(beamCount);
  for (const [i, deg, count] of beams) {
    centersDeg[i] = deg;
    centersRad[i] = (deg * Math.PI) / 180.0;
    perBeamCounts[i] = count;
  }
  return {
    beamCount,
    pointCount: Number(fields.get("point_count") ?? 0),
    centersDeg,
    centersRad,
    perBeamCounts,
  };
}

export interface ClusterResult {
  model: BeamModel;
  /** Parsed key=value stdout (vfov_deg, points_per_beam, ...). */
  stats: Map<string, string>;
  /** Path of the written model document. */
  modelPath: string;
  /** Path of the beam-labeled scan, when requested. */
  labeledScanPath?: string;
}

/** Recover the beam structure of a scan file. */
export function clusterBeams(
  scanPath: string,
  beams: number,
  opts: { outModel?: string; outScan?: string } = {}
): ClusterResult {
  if (!Number.isInteger(beams) || beams < 1) {
    throw new BoundaryError(`beams must be a positive integer, got ${beams}`);
  }
  const work = opts.outModel ? undefined : tempDir("beamforge-cluster-");
  const modelPath = opts.outModel ?? path.join(work!, "model.beams");
  const args = ["cluster", scanPath, "--beams", String(beams), "--out-model", modelPath];
  if (opts.outScan) args.push("--out-scan", opts.outScan);
  const stdout = runCli(args);
  const model = parseBeamModelDocument(fs.readFileSync(modelPath, "utf-8"));
  return {
    model,
    stats: parseKv(stdout),
    modelPath,
    labeledScanPath: opts.outScan,
  };
}

export interface ResampleResult {
  equivalentBeams: number;
  keepRatio: number;
  outPath: string;
  cloud: PointCloud;
  stats: Map<string, string>;
}

/** Downsample a scan to a target sensor's density (pseudo low-beam data). */
export function resample(
  scanPath: string,
  sourceProfile: string,
  targetProfile: string,
  outPath?: string
): ResampleResult {
  const out = outPath ?? path.join(tempDir("beamforge-resample-"), "low.bfrg");
  const stdout = runCli([
    "resample",
    scanPath,
    "--source-profile",
    sourceProfile,
    "--target-profile",
    targetProfile,
    "--out",
    out,
  ]);
  const kv = parseKv(stdout);
  return {
    equivalentBeams: Number(kv.get("equivalent_beams")),
    keepRatio: Number(kv.get("keep_ratio")),
    outPath: out,
    cloud: readScan(out),
    stats: kv,
  };
}

export interface MimicLossResult {
  loss: number;
  rois: number;
  gradMaxAbs: number;
  /** Gradient with respect to the student map, when requested. */
  grad?: FeatureMap;
}

/** ROI-sampled feature mimic loss between a student and a teacher map. */
export function mimicLoss(
  student: FeatureMap,
  teacher: FeatureMap,
  opts: { rois?: RoiSet; seed?: number; withGrad?: boolean } = {}
): MimicLossResult {
  validateFeatureMap(student);
  validateFeatureMap(teacher);
  if (
    student.height !== teacher.height ||
    student.width !== teacher.width ||
    student.channels !== teacher.channels
  ) {
    throw new BoundaryError(
      `student ${student.height}x${student.width}x${student.channels} vs ` +
        `teacher ${teacher.height}x${teacher.width}x${teacher.channels}`
    );
  }
  const work = tempDir("beamforge-mimic-");
  try {
    const studentPath = path.join(work, "student.bfft");
    const teacherPath = path.join(work, "teacher.bfft");
    writeFeatureTile(student, studentPath);
    writeFeatureTile(teacher, teacherPath);
    const args = ["mimic-loss", "--student", studentPath, "--teacher", teacherPath];
    if (opts.rois) {
      const roisPath = path.join(work, "rois.bfrs");
      writeRoiTile(opts.rois, roisPath);
      args.push("--rois", roisPath);
    }
    const gradPath = path.join(work, "grad.bfft");
    if (opts.withGrad) args.push("--grad-out", gradPath);
    const seedArgs = opts.seed !== undefined ? ["--seed", String(opts.seed)] : [];
    const stdout = runCli([...seedArgs, ...args]);
    const kv = parseKv(stdout);
    return {
      loss: Number(kv.get("loss")),
      rois: Number(kv.get("rois")),
      gradMaxAbs: Number(kv.get("grad_max_abs")),
      grad: opts.withGrad ? readFeatureTile(gradPath) : undefined,
    };
  } finally {
    fs.rmSync(work, { recursive: true, force: true });
  }
}
