/** The landmark record line format consumed by the clustering pipeline.
 *
 * One JSON object per line with exactly these fields, in this order:
 * `image_id`, `product_id`, `topology`, `width`, `height`, `detected`,
 * `keypoints`; each keypoint is `x`, `y`, (`z` for 3D topologies),
 * `visibility`. Coordinates are pixels; `detected: false` records carry an
 * empty keypoint array.
 */

import { TOPOLOGIES, type TopologyName } from "./topology.js";

export interface Keypoint {
  readonly x: number;
  readonly y: number;
  /** Required for 3D topologies, must be absent for 2D ones. */
  readonly z?: number;
  /** Confidence in [0, 1]. */
  readonly visibility: number;
}

export interface LandmarkRecord {
  readonly imageId: string;
  readonly productId: string;
  readonly topology: TopologyName;
  readonly width: number;
  readonly height: number;
  readonly detected: boolean;
  readonly keypoints: readonly Keypoint[];
}

export class RecordError extends Error {}

function checkFinite(value: number, what: string): void {
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new RecordError(`${what} must be a finite number, got ${value}`);
  }
}

/** Render one record as a canonical JSON line (no trailing newline). */
export function serializeRecord(record: LandmarkRecord): string {
  const topology = TOPOLOGIES[record.topology];
  if (!Number.isInteger(record.width) || record.width <= 0) {
    throw new RecordError(`width must be a positive integer, got ${record.width}`);
  }
  if (!Number.isInteger(record.height) || record.height <= 0) {
    throw new RecordError(`height must be a positive integer, got ${record.height}`);
  }
  if (record.detected && record.keypoints.length !== topology.keypointCount) {
    throw new RecordError(
      `${topology.name} records need ${topology.keypointCount} keypoints, got ${record.keypoints.length}`,
    );
  }
  if (!record.detected && record.keypoints.length !== 0) {
    throw new RecordError("undetected records must carry no keypoints");
  }

  const keypoints = record.keypoints.map((kp, i) => {
    checkFinite(kp.x, `keypoint ${i} x`);
    checkFinite(kp.y, `keypoint ${i} y`);
    if (typeof kp.visibility !== "number" || !(kp.visibility >= 0 && kp.visibility <= 1)) {
      throw new RecordError(`keypoint ${i} visibility must be in [0, 1], got ${kp.visibility}`);
    }
    if (topology.hasZ) {
      checkFinite(kp.z as number, `keypoint ${i} z`);
      return { x: kp.x, y: kp.y, z: kp.z, visibility: kp.visibility };
    }
    if (kp.z !== undefined) {
      throw new RecordError(`keypoint ${i} carries z but ${topology.name} is a 2D topology`);
    }
    return { x: kp.x, y: kp.y, visibility: kp.visibility };
  });

  return JSON.stringify({
    image_id: record.imageId,
    product_id: record.productId,
    topology: record.topology,
    width: record.width,
    height: record.height,
    detected: record.detected,
    keypoints,
  });
}
