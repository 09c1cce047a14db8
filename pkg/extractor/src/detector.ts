/** Pose detector backends.
 *
 * The `runtime` backend dynamically loads a pretrained detector for the
 * requested topology family; a missing runtime is fatal, never silently
 * degraded. The `stub` backend is a deterministic stand-in for tests and dry
 * runs: it derives a plausible in-frame pose from a hash of the image bytes,
 * so the whole pipeline can be exercised without model weights.
 *
 * On multi-person images only the highest-confidence person is kept; the
 * caller is told via `personCount` so it can flag the record in its summary.
 */

import { createHash } from "node:crypto";

import type { Keypoint } from "./records.js";
import { POSE2D17, POSE3D33, TOPOLOGIES, type TopologyName } from "./topology.js";

export class DetectorError extends Error {}

export interface Detection {
  readonly detected: boolean;
  /** Empty when `detected` is false. */
  readonly keypoints: readonly Keypoint[];
  /** People found in the frame before reduction to the best one. */
  readonly personCount: number;
}

export interface PoseDetector {
  readonly topology: TopologyName;
  readonly backend: string;
  detect(imageBytes: Uint8Array, width: number, height: number): Promise<Detection>;
}

export type BackendName = "runtime" | "stub";

const RUNTIME_MODULES: Record<TopologyName, string> = {
  [POSE3D33]: "@mediapipe/tasks-vision",
  [POSE2D17]: "@tensorflow-models/pose-detection",
};

export async function loadDetector(
  topology: TopologyName,
  backend: BackendName = "runtime",
): Promise<PoseDetector> {
  if (backend === "stub") {
    return new StubDetector(topology);
  }
  const moduleName = RUNTIME_MODULES[topology];
  let runtime: unknown;
  try {
    runtime = await import(moduleName);
  } catch (error) {
    throw new DetectorError(
      `pose detector runtime for ${topology} is not installed ` +
        `(npm package '${moduleName}'): ${(error as Error).message}. ` +
        `Install it, or select the stub backend for a dry run.`,
    );
  }
  if (topology === POSE3D33) {
    return new MediapipeDetector(runtime);
  }
  return new MoveNetDetector(runtime);
}

/* ------------------------------------------------------------------------ */
/* Deterministic stub                                                        */
/* ------------------------------------------------------------------------ */

/** Pseudo-detector: outcome and coordinates are a pure function of the image
 * bytes. Roughly a quarter of inputs report no person, a sixteenth report a
 * second person, and all emitted keypoints land strictly inside the frame. */
export class StubDetector implements PoseDetector {
  readonly backend = "stub";

  constructor(readonly topology: TopologyName) {}

  async detect(imageBytes: Uint8Array, width: number, height: number): Promise<Detection> {
    const digest = createHash("sha256").update(imageBytes).digest();
    if (digest[0]! % 4 === 0) {
      return { detected: false, keypoints: [], personCount: 0 };
    }
    const personCount = digest[1]! % 16 === 0 ? 2 : 1;
    const family = TOPOLOGIES[this.topology];
    const byte = (i: number) => digest[i % digest.length]! / 255;
    const keypoints: Keypoint[] = [];
    for (let i = 0; i < family.keypointCount; i++) {
      const x = (0.1 + 0.8 * byte(2 + 3 * i)) * width;
      const y = (0.1 + 0.8 * byte(3 + 3 * i)) * height;
      const visibility = 0.5 + 0.5 * byte(4 + 3 * i);
      if (family.hasZ) {
        const z = (byte(5 + 3 * i) - 0.5) * 0.5;
        keypoints.push({ x, y, z, visibility });
      } else {
        keypoints.push({ x, y, visibility });
      }
    }
    return { detected: true, keypoints, personCount };
  }
}

/* ------------------------------------------------------------------------ */
/* Real runtime adapters                                                     */
/* ------------------------------------------------------------------------ */

interface NormalizedLandmark {
  x: number;
  y: number;
  z?: number;
  visibility?: number;
}

/** 33-landmark 3D family. Landmarks arrive normalized to the frame; z is
 * passed through in whatever convention the runtime emits. */
class MediapipeDetector implements PoseDetector {
  readonly topology = POSE3D33;
  readonly backend = "mediapipe";

  constructor(private readonly runtime: unknown) {}

  async detect(imageBytes: Uint8Array, width: number, height: number): Promise<Detection> {
    const landmarker = await this.landmarker();
    const result = landmarker.detect(imageBytes) as {
      landmarks?: NormalizedLandmark[][];
    };
    const people = result.landmarks ?? [];
    if (people.length === 0) {
      return { detected: false, keypoints: [], personCount: 0 };
    }
    const best = pickMostVisible(people);
    const keypoints = best.map((lm) => ({
      x: lm.x * width,
      y: lm.y * height,
      z: lm.z ?? 0,
      visibility: clamp01(lm.visibility ?? 1),
    }));
    return { detected: true, keypoints, personCount: people.length };
  }

  private async landmarker(): Promise<{ detect(input: unknown): unknown }> {
    const mod = this.runtime as {
      FilesetResolver?: { forVisionTasks(path: string): Promise<unknown> };
      PoseLandmarker?: {
        createFromOptions(fileset: unknown, options: unknown): Promise<unknown>;
      };
    };
    if (!mod.FilesetResolver || !mod.PoseLandmarker) {
      throw new DetectorError("mediapipe runtime is present but lacks PoseLandmarker");
    }
    const fileset = await mod.FilesetResolver.forVisionTasks("node_modules/@mediapipe/tasks-vision/wasm");
    return (await mod.PoseLandmarker.createFromOptions(fileset, {
      runningMode: "IMAGE",
      numPoses: 4,
    })) as { detect(input: unknown): unknown };
  }
}

/** 17-keypoint 2D family. The runtime reports pixel coordinates directly. */
class MoveNetDetector implements PoseDetector {
  readonly topology = POSE2D17;
  readonly backend = "movenet";
  private detector: { estimatePoses(input: unknown, opts: unknown): Promise<unknown[]> } | null =
    null;

  constructor(private readonly runtime: unknown) {}

  async detect(imageBytes: Uint8Array, _width: number, _height: number): Promise<Detection> {
    const detector = await this.load();
    const poses = (await detector.estimatePoses(imageBytes, { maxPoses: 4 })) as {
      score?: number;
      keypoints: { x: number; y: number; score?: number }[];
    }[];
    if (poses.length === 0) {
      return { detected: false, keypoints: [], personCount: 0 };
    }
    poses.sort((a, b) => (b.score ?? 0) - (a.score ?? 0));
    const best = poses[0]!;
    const keypoints = best.keypoints.map((kp) => ({
      x: kp.x,
      y: kp.y,
      visibility: clamp01(kp.score ?? 1),
    }));
    return { detected: true, keypoints, personCount: poses.length };
  }

  private async load(): Promise<{ estimatePoses(input: unknown, opts: unknown): Promise<unknown[]> }> {
    if (this.detector) return this.detector;
    const mod = this.runtime as {
      SupportedModels?: { MoveNet: unknown };
      createDetector?(model: unknown, config: unknown): Promise<unknown>;
    };
    if (!mod.SupportedModels || !mod.createDetector) {
      throw new DetectorError("pose-detection runtime is present but lacks MoveNet support");
    }
    this.detector = (await mod.createDetector(mod.SupportedModels.MoveNet, {})) as {
      estimatePoses(input: unknown, opts: unknown): Promise<unknown[]>;
    };
    return this.detector;
  }
}

function pickMostVisible(people: NormalizedLandmark[][]): NormalizedLandmark[] {
  let best = people[0]!;
  let bestScore = -1;
  for (const person of people) {
    const score = person.reduce((acc, lm) => acc + (lm.visibility ?? 0), 0);
    if (score > bestScore) {
      bestScore = score;
      best = person;
    }
  }
  return best;
}

function clamp01(value: number): number {
  return Math.min(1, Math.max(0, value));
}
