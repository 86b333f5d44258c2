/**
 * Binary scan formats.
 *
 * Beam-labeled scans ("BFRG"): 18-byte little-endian header
 *   magic "BFRG" | version u16 | point_count u64 | beam_count u16 | flags u16
 * followed by 18-byte records (x, y, z, intensity as float32 LE + beam u16).
 * Flag bit 0 marks the intensity column as meaningful.
 *
 * KITTI scans: headerless float32[4] records (x, y, z, intensity).
 */

import * as fs from "fs";

import { BoundaryError, PointCloud } from "./types";

export const BEAM_LABELED_MAGIC = "BFRG";
export const BEAM_LABELED_VERSION = 1;
const BFRG_HEADER_BYTES = 18;
const BFRG_RECORD_BYTES = 18;
const FLAG_HAS_INTENSITY = 0x0001;

export type ScanFormat = "bfrg" | "kitti";

function checkLengths(cloud: PointCloud): void {
  const n = cloud.count;
  for (const [name, arr] of [
    ["x", cloud.x],
    ["y", cloud.y],
    ["z", cloud.z],
  ] as const) {
    if (arr.length !== n) {
      throw new BoundaryError(`${name} has length ${arr.length}, expected ${n}`);
    }
  }
  if (cloud.intensity && cloud.intensity.length !== n) {
    throw new BoundaryError(`intensity has length ${cloud.intensity.length}, expected ${n}`);
  }
  if (cloud.beamLabels && cloud.beamLabels.length !== n) {
    throw new BoundaryError(`beamLabels has length ${cloud.beamLabels.length}, expected ${n}`);
  }
}

export function encodeBeamLabeled(cloud: PointCloud, beamCount?: number): Buffer {
  checkLengths(cloud);
  if (!cloud.beamLabels) {
    throw new BoundaryError("beam-labeled format requires beamLabels");
  }
  let beams = beamCount ?? cloud.beamCount;
  if (beams === undefined) {
    beams = 0;
    for (const label of cloud.beamLabels) beams = Math.max(beams, label + 1);
  }
  for (const label of cloud.beamLabels) {
    if (label >= beams) {
      throw new BoundaryError(`beam label ${label} outside ${beams} beams`);
    }
  }
  const buf = Buffer.alloc(BFRG_HEADER_BYTES + cloud.count * BFRG_RECORD_BYTES);
  buf.write(BEAM_LABELED_MAGIC, 0, "ascii");
  buf.writeUInt16LE(BEAM_LABELED_VERSION, 4);
  buf.writeBigUInt64LE(BigInt(cloud.count), 6);
  buf.writeUInt16LE(beams, 14);
  buf.writeUInt16LE(cloud.intensity ? FLAG_HAS_INTENSITY : 0, 16);
  for (let i = 0; i < cloud.count; i++) {
    const off = BFRG_HEADER_BYTES + i * BFRG_RECORD_BYTES;
    buf.writeFloatLE(cloud.x[i], off);
    buf.writeFloatLE(cloud.y[i], off + 4);
    buf.writeFloatLE(cloud.z[i], off + 8);
    buf.writeFloatLE(cloud.intensity ? cloud.intensity[i] : 0, off + 12);
    buf.writeUInt16LE(cloud.beamLabels[i], off + 16);
  }
  return buf;
}

export function decodeBeamLabeled(buf: Buffer): PointCloud {
  if (buf.length < BFRG_HEADER_BYTES) {
    throw new Error(`file is shorter than the ${BFRG_HEADER_BYTES}-byte header`);
  }
  if (buf.toString("ascii", 0, 4) !== BEAM_LABELED_MAGIC) {
    throw new Error(`bad magic ${buf.toString("ascii", 0, 4)}`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== BEAM_LABELED_VERSION) {
    throw new Error(`unsupported version ${version}`);
  }
  const count = Number(buf.readBigUInt64LE(6));
  const beamCount = buf.readUInt16LE(14);
  const flags = buf.readUInt16LE(16);
  if (buf.length !== BFRG_HEADER_BYTES + count * BFRG_RECORD_BYTES) {
    throw new Error(
      `payload is ${buf.length - BFRG_HEADER_BYTES} bytes, header promises ${count * BFRG_RECORD_BYTES}`
    );
  }
  const hasIntensity = (flags & FLAG_HAS_INTENSITY) !== 0;
  const cloud: PointCloud = {
    count,
    x: new Float32Array(count),
    y: new Float32Array(count),
    z: new Float32Array(count),
    intensity: hasIntensity ? new Float32Array(count) : undefined,
    beamLabels: new Uint16Array(count),
    beamCount,
  };
  for (let i = 0; i < count; i++) {
    const off = BFRG_HEADER_BYTES + i * BFRG_RECORD_BYTES;
    cloud.x[i] = buf.readFloatLE(off);
    cloud.y[i] = buf.readFloatLE(off + 4);
    cloud.z[i] = buf.readFloatLE(off + 8);
    if (cloud.intensity) cloud.intensity[i] = buf.readFloatLE(off + 12);
    cloud.beamLabels![i] = buf.readUInt16LE(off + 16);
  }
  return cloud;
}

export function encodeKitti(cloud: PointCloud): Buffer {
  checkLengths(cloud);
  const buf = Buffer.alloc(cloud.count * 16);
  for (let i = 0; i < cloud.count; i++) {
    buf.writeFloatLE(cloud.x[i], i * 16);
    buf.writeFloatLE(cloud.y[i], i * 16 + 4);
    buf.writeFloatLE(cloud.z[i], i * 16 + 8);
    buf.writeFloatLE(cloud.intensity ? cloud.intensity[i] : 0, i * 16 + 12);
  }
  return buf;
}

export function decodeKitti(buf: Buffer): PointCloud {
  if (buf.length % 16 !== 0) {
    throw new Error(`${buf.length} bytes is not a whole number of 16-byte records`);
  }
  const count = buf.length / 16;
  // zero-copy view when the backing buffer is 4-byte aligned
  const aligned = buf.byteOffset % 4 === 0;
  const raw = aligned
    ? new Float32Array(buf.buffer, buf.byteOffset, count * 4)
    : new Float32Array(Buffer.from(buf).buffer, 0, count * 4);
  const cloud: PointCloud = {
    count,
    x: new Float32Array(count),
    y: new Float32Array(count),
    z: new Float32Array(count),
    intensity: new Float32Array(count),
  };
  for (let i = 0; i < count; i++) {
    cloud.x[i] = raw[i * 4];
    cloud.y[i] = raw[i * 4 + 1];
    cloud.z[i] = raw[i * 4 + 2];
    cloud.intensity![i] = raw[i * 4 + 3];
  }
  return cloud;
}

export function detectScanFormat(path: string): ScanFormat {
  const fd = fs.openSync(path, "r");
  try {
    const head = Buffer.alloc(4);
    fs.readSync(fd, head, 0, 4, 0);
    if (head.toString("ascii") === BEAM_LABELED_MAGIC) return "bfrg";
  } finally {
    fs.closeSync(fd);
  }
  if (path.endsWith(".bfrg")) {
    throw new Error(`${path}: .bfrg file without ${BEAM_LABELED_MAGIC} magic`);
  }
  return "kitti";
}

export function readScan(path: string, format?: ScanFormat): PointCloud {
  const fmt = format ?? detectScanFormat(path);
  const buf = fs.readFileSync(path);
  return fmt === "bfrg" ? decodeBeamLabeled(buf) : decodeKitti(buf);
}

export function writeScan(
  cloud: PointCloud,
  path: string,
  format: ScanFormat = "bfrg",
  beamCount?: number
): void {
  const buf = format === "bfrg" ? encodeBeamLabeled(cloud, beamCount) : encodeKitti(cloud);
  fs.writeFileSync(path, buf);
}
