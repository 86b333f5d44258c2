/**
 * Tensor tile formats exchanged with the mimic-loss kernel.
 *
 * Feature tile ("BFFT"): 30-byte little-endian header
 *   magic | version u16 | H u32 | W u32 | C u32 | cell f32 | ox f32 | oy f32
 * followed by H*W*C float32 LE values, row-major.
 *
 * ROI tile ("BFRS"): 14-byte header
 *   magic | version u16 | pooled u16 | count u32 | flags u16
 * followed by 20-byte records (x0, y0, x1, y1 as float32 + tag u32,
 * 1 = positive). Flag bit 0 marks a balance shortfall.
 */

import * as fs from "fs";

import { BoundaryError, FeatureMap, Roi, RoiSet } from "./types";

export const FEATURE_TILE_MAGIC = "BFFT";
export const ROI_TILE_MAGIC = "BFRS";
export const TILE_VERSION = 1;
const FEATURE_HEADER_BYTES = 30;
const ROI_HEADER_BYTES = 14;
const ROI_RECORD_BYTES = 20;

export function validateFeatureMap(fmap: FeatureMap): void {
  const { height, width, channels, values } = fmap;
  if (height < 1 || width < 1 || channels < 1) {
    throw new BoundaryError(`invalid shape ${height}x${width}x${channels}`);
  }
  if (values.length !== height * width * channels) {
    throw new BoundaryError(
      `values has ${values.length} elements, shape needs ${height * width * channels}`
    );
  }
  for (const v of values) {
    if (!Number.isFinite(v)) throw new BoundaryError("values must be finite");
  }
}

export function encodeFeatureTile(fmap: FeatureMap): Buffer {
  validateFeatureMap(fmap);
  const header = Buffer.alloc(FEATURE_HEADER_BYTES);
  header.write(FEATURE_TILE_MAGIC, 0, "ascii");
  header.writeUInt16LE(TILE_VERSION, 4);
  header.writeUInt32LE(fmap.height, 6);
  header.writeUInt32LE(fmap.width, 10);
  header.writeUInt32LE(fmap.channels, 14);
  header.writeFloatLE(fmap.cellSize ?? 1.0, 18);
  header.writeFloatLE(fmap.origin?.[0] ?? 0.0, 22);
  header.writeFloatLE(fmap.origin?.[1] ?? 0.0, 26);
  // payload reuses the caller's buffer without copying the values
  const payload = Buffer.from(
    fmap.values.buffer,
    fmap.values.byteOffset,
    fmap.values.byteLength
  );
  return Buffer.concat([header, payload]);
}

export function decodeFeatureTile(buf: Buffer): FeatureMap {
  if (buf.length < FEATURE_HEADER_BYTES) {
    throw new Error("file is shorter than the tile header");
  }
  if (buf.toString("ascii", 0, 4) !== FEATURE_TILE_MAGIC) {
    throw new Error(`bad magic ${buf.toString("ascii", 0, 4)}`);
  }
  if (buf.readUInt16LE(4) !== TILE_VERSION) {
    throw new Error(`unsupported tile version ${buf.readUInt16LE(4)}`);
  }
  const height = buf.readUInt32LE(6);
  const width = buf.readUInt32LE(10);
  const channels = buf.readUInt32LE(14);
  const n = height * width * channels;
  if (buf.length !== FEATURE_HEADER_BYTES + 4 * n) {
    throw new Error("payload does not match header shape");
  }
  const values = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    values[i] = buf.readFloatLE(FEATURE_HEADER_BYTES + 4 * i);
  }
  return {
    height,
    width,
    channels,
    values,
    cellSize: buf.readFloatLE(18),
    origin: [buf.readFloatLE(22), buf.readFloatLE(26)],
  };
}

export function encodeRoiTile(rois: RoiSet): Buffer {
  if (rois.pooledSize < 1) throw new BoundaryError("pooledSize must be >= 1");
  const buf = Buffer.alloc(ROI_HEADER_BYTES + rois.rois.length * ROI_RECORD_BYTES);
  buf.write(ROI_TILE_MAGIC, 0, "ascii");
  buf.writeUInt16LE(TILE_VERSION, 4);
  buf.writeUInt16LE(rois.pooledSize, 6);
  buf.writeUInt32LE(rois.rois.length, 8);
  buf.writeUInt16LE(rois.balanceShortfall ? 1 : 0, 12);
  rois.rois.forEach((roi, i) => {
    if (roi.x1 < roi.x0 || roi.y1 < roi.y0) {
      throw new BoundaryError(`ROI ${i} has inverted extents`);
    }
    const off = ROI_HEADER_BYTES + i * ROI_RECORD_BYTES;
    buf.writeFloatLE(roi.x0, off);
    buf.writeFloatLE(roi.y0, off + 4);
    buf.writeFloatLE(roi.x1, off + 8);
    buf.writeFloatLE(roi.y1, off + 12);
    buf.writeUInt32LE(roi.tag === "positive" ? 1 : 0, off + 16);
  });
  return buf;
}

export function decodeRoiTile(buf: Buffer): RoiSet {
  if (buf.length < ROI_HEADER_BYTES) {
    throw new Error("file is shorter than the tile header");
  }
  if (buf.toString("ascii", 0, 4) !== ROI_TILE_MAGIC) {
    throw new Error(`bad magic ${buf.toString("ascii", 0, 4)}`);
  }
  const pooledSize = buf.readUInt16LE(6);
  const count = buf.readUInt32LE(8);
  const flags = buf.readUInt16LE(12);
  if (buf.length !== ROI_HEADER_BYTES + count * ROI_RECORD_BYTES) {
    throw new Error("payload does not match ROI count");
  }
  const rois: Roi[] = [];
  for (let i = 0; i < count; i++) {
    const off = ROI_HEADER_BYTES + i * ROI_RECORD_BYTES;
    rois.push({
      x0: buf.readFloatLE(off),
      y0: buf.readFloatLE(off + 4),
      x1: buf.readFloatLE(off + 8),
      y1: buf.readFloatLE(off + 12),
      tag: buf.readUInt32LE(off + 16) === 1 ? "positive" : "negative",
    });
  }
  return { rois, pooledSize, balanceShortfall: (flags & 1) !== 0 };
}

export function readFeatureTile(path: string): FeatureMap {
  return decodeFeatureTile(fs.readFileSync(path));
}

export function writeFeatureTile(fmap: FeatureMap, path: string): void {
  fs.writeFileSync(path, encodeFeatureTile(fmap));
}

export function readRoiTile(path: string): RoiSet {
  return decodeRoiTile(fs.readFileSync(path));
}

export function writeRoiTile(rois: RoiSet, path: string): void {
  fs.writeFileSync(path, encodeRoiTile(rois));
}
