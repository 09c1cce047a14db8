import { describe, expect, it } from "vitest";

import { DetectorError, StubDetector, loadDetector, type Detection, type PoseDetector } from "../src/detector.js";
import { serializeRecord } from "../src/records.js";
import { POSE2D17, POSE3D33, TOPOLOGIES, type TopologyName } from "../src/topology.js";

/** Scan deterministic candidate buffers until `predicate` matches. */
async function findBytes(
  detector: PoseDetector,
  predicate: (d: Detection) => boolean,
): Promise<Buffer> {
  for (let i = 0; i < 5000; i++) {
    const bytes = Buffer.from(`probe-${i}`);
    if (predicate(await detector.detect(bytes, 640, 480))) return bytes;
  }
  throw new Error("no candidate buffer matched the predicate");
}

describe("loadDetector", () => {
  it("returns the stub detector when asked", async () => {
    const detector = await loadDetector(POSE3D33, "stub");
    expect(detector).toBeInstanceOf(StubDetector);
    expect(detector.backend).toBe("stub");
    expect(detector.topology).toBe(POSE3D33);
  });

  it.each([
    [POSE3D33, "@mediapipe/tasks-vision"],
    [POSE2D17, "@tensorflow-models/pose-detection"],
  ] as [TopologyName, string][])(
    "fails fast for %s when the runtime package is absent",
    async (topology, moduleName) => {
      const attempt = loadDetector(topology, "runtime");
      await expect(attempt).rejects.toThrow(DetectorError);
      await expect(attempt).rejects.toThrow(moduleName);
      await expect(attempt).rejects.toThrow(/stub backend/);
    },
  );

  it("defaults to the runtime backend", async () => {
    await expect(loadDetector(POSE3D33)).rejects.toThrow(DetectorError);
  });
});

describe("StubDetector", () => {
  it("is deterministic: same bytes, same detection, across instances", async () => {
    const bytes = Buffer.from("the very same image bytes");
    const first = await new StubDetector(POSE3D33).detect(bytes, 800, 600);
    const second = await new StubDetector(POSE3D33).detect(bytes, 800, 600);
    expect(JSON.stringify(second)).toBe(JSON.stringify(first));
  });

  it("produces different poses for different bytes", async () => {
    const detector = new StubDetector(POSE3D33);
    const detections: Detection[] = [];
    for (let i = 0; i < 5000 && detections.length < 2; i++) {
      const d = await detector.detect(Buffer.from(`distinct-${i}`), 640, 480);
      if (d.detected) detections.push(d);
    }
    expect(detections).toHaveLength(2);
    expect(JSON.stringify(detections[0]!.keypoints)).not.toBe(
      JSON.stringify(detections[1]!.keypoints),
    );
  });

  it("covers detection, no-person, and multi-person outcomes over many inputs", async () => {
    const detector = new StubDetector(POSE3D33);
    let detected = 0;
    let none = 0;
    let multi = 0;
    for (let i = 0; i < 2000 && (detected === 0 || none === 0 || multi === 0); i++) {
      const d = await detector.detect(Buffer.from(`coverage-${i}`), 320, 240);
      if (!d.detected) {
        none += 1;
        expect(d.personCount).toBe(0);
        expect(d.keypoints).toEqual([]);
      } else if (d.personCount > 1) {
        multi += 1;
        expect(d.personCount).toBe(2);
      } else {
        detected += 1;
      }
    }
    expect(detected).toBeGreaterThan(0);
    expect(none).toBeGreaterThan(0);
    expect(multi).toBeGreaterThan(0);
  });

  it.each([
    [POSE3D33, 33],
    [POSE2D17, 17],
  ] as [TopologyName, number][])(
    "emits %s keypoints strictly inside the frame",
    async (topology, count) => {
      const detector = new StubDetector(topology);
      const hasZ = TOPOLOGIES[topology].hasZ;
      let seen = 0;
      for (let i = 0; i < 200; i++) {
        const d = await detector.detect(Buffer.from(`frame-${i}`), 640, 480);
        if (!d.detected) continue;
        seen += 1;
        expect(d.keypoints).toHaveLength(count);
        for (const kp of d.keypoints) {
          expect(kp.x).toBeGreaterThan(0);
          expect(kp.x).toBeLessThan(640);
          expect(kp.y).toBeGreaterThan(0);
          expect(kp.y).toBeLessThan(480);
          expect(kp.visibility).toBeGreaterThanOrEqual(0.5);
          expect(kp.visibility).toBeLessThanOrEqual(1);
          if (hasZ) {
            expect(Math.abs(kp.z!)).toBeLessThanOrEqual(0.25);
          } else {
            expect(kp.z).toBeUndefined();
          }
        }
      }
      expect(seen).toBeGreaterThan(50);
    },
  );

  it.each([[POSE3D33], [POSE2D17]] as [TopologyName][])(
    "emits detections that serialize as valid %s records",
    async (topology) => {
      const detector = new StubDetector(topology);
      const bytes = await findBytes(detector, (d) => d.detected);
      const detection = await detector.detect(bytes, 512, 512);
      const line = serializeRecord({
        imageId: "img",
        productId: "P",
        topology,
        width: 512,
        height: 512,
        detected: detection.detected,
        keypoints: detection.keypoints,
      });
      expect(JSON.parse(line)).toMatchObject({ detected: true, topology });
    },
  );
});
