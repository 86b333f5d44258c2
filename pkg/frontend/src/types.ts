/** Shared value types for the beamforge binding layer. */

/** Columnar point cloud; arrays are parallel and length `count`. */
export interface PointCloud {
  count: number;
  x: Float32Array;
  y: Float32Array;
  z: Float32Array;
  /** Present when the source carried a meaningful intensity column. */
  intensity?: Float32Array;
  /** Present for beam-labeled scans. */
  beamLabels?: Uint16Array;
  /** Beam count declared by the file header (beam-labeled scans only). */
  beamCount?: number;
}

/** Beam table recovered by clustering, as stored in the model document. */
export interface BeamModel {
  beamCount: number;
  pointCount: number;
  /** Beam center angles in degrees, ascending (exact document values). */
  centersDeg: Float64Array;
  /** Center angles converted to radians (centersDeg * PI / 180). */
  centersRad: Float64Array;
  perBeamCounts: Uint32Array;
}

/** Dense BEV feature grid: values is row-major H x W x C. */
export interface FeatureMap {
  height: number;
  width: number;
  channels: number;
  values: Float32Array;
  cellSize?: number;
  origin?: [number, number];
}

export type RoiTag = "positive" | "negative";

/** Axis-aligned rectangle in cell-center coordinates. */
export interface Roi {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  tag: RoiTag;
}

export interface RoiSet {
  rois: Roi[];
  pooledSize: number;
  balanceShortfall: boolean;
}

export class BoundaryError extends TypeError {
  constructor(message: string) {
    super(message);
    this.name = "BoundaryError";
  }
}
