/** Landmark topology families the downstream pipeline understands. */

export const POSE3D33 = "POSE3D33";
export const POSE2D17 = "POSE2D17";

export type TopologyName = typeof POSE3D33 | typeof POSE2D17;

export interface Topology {
  readonly name: TopologyName;
  /** Number of keypoints a detected record must carry. */
  readonly keypointCount: number;
  /** Whether every keypoint carries a z coordinate. */
  readonly hasZ: boolean;
}

export const TOPOLOGIES: Record<TopologyName, Topology> = {
  [POSE3D33]: { name: POSE3D33, keypointCount: 33, hasZ: true },
  [POSE2D17]: { name: POSE2D17, keypointCount: 17, hasZ: false },
};

export function isTopologyName(value: string): value is TopologyName {
  return value === POSE3D33 || value === POSE2D17;
}
