/** The extraction flow: manifest in, one landmark record line per image out.
 *
 * Guarantees, regardless of per-image failures:
 *  - exactly one output line per manifest entry, in manifest order;
 *  - unreadable or undecodable images yield `detected: false` records with
 *    1x1 placeholder dimensions plus a diagnostic;
 *  - detector "no person" outcomes yield `detected: false` with real
 *    dimensions;
 *  - multi-person frames keep the best person and are flagged;
 *  - the summary (counts and diagnostic order) is a pure function of the
 *    inputs — concurrency never reorders it.
 */

import { readFile } from "node:fs/promises";
import path from "node:path";

import type { PoseDetector } from "./detector.js";
import { decodeDimensions } from "./images.js";
import type { ManifestEntry } from "./manifest.js";
import { serializeRecord, type LandmarkRecord } from "./records.js";
import { mapOrdered } from "./pool.js";

export interface ExtractionJob {
  /** Directory that relative manifest paths resolve against. */
  readonly imagesDir: string;
  readonly manifest: readonly ManifestEntry[];
  readonly detector: PoseDetector;
  /** Images processed concurrently; output order is unaffected. Default 4. */
  readonly concurrency?: number;
}

export interface ExtractionSummary {
  records: number;
  detected: number;
  undetected: number;
  undecodable: number;
  multiPerson: string[];
  diagnostics: string[];
}

interface ImageOutcome {
  readonly record: LandmarkRecord;
  readonly line: string;
  readonly kind: "detected" | "undetected" | "undecodable";
  readonly multiPerson: boolean;
  readonly diagnostics: readonly string[];
}

async function extractOne(job: ExtractionJob, entry: ManifestEntry): Promise<ImageOutcome> {
  const base = {
    imageId: entry.imageId,
    productId: entry.productId,
    topology: job.detector.topology,
  } as const;
  const diagnostics: string[] = [];

  let bytes: Uint8Array | null = null;
  try {
    bytes = await readFile(path.resolve(job.imagesDir, entry.path));
  } catch (error) {
    diagnostics.push(`${entry.imageId}: cannot read '${entry.path}': ${(error as Error).message}`);
  }
  const dims = bytes === null ? null : decodeDimensions(bytes);
  if (bytes !== null && dims === null) {
    diagnostics.push(`${entry.imageId}: undecodable image '${entry.path}'`);
  }
  if (bytes === null || dims === null) {
    const record: LandmarkRecord = {
      ...base,
      width: 1,
      height: 1,
      detected: false,
      keypoints: [],
    };
    return {
      record,
      line: serializeRecord(record),
      kind: "undecodable",
      multiPerson: false,
      diagnostics,
    };
  }

  const detection = await job.detector.detect(bytes, dims.width, dims.height);
  if (detection.personCount > 1) {
    diagnostics.push(
      `${entry.imageId}: ${detection.personCount} people in frame; kept the most confident one`,
    );
  }
  const record: LandmarkRecord = {
    ...base,
    width: dims.width,
    height: dims.height,
    detected: detection.detected,
    keypoints: detection.detected ? detection.keypoints : [],
  };
  return {
    record,
    line: serializeRecord(record),
    kind: detection.detected ? "detected" : "undetected",
    multiPerson: detection.personCount > 1,
    diagnostics,
  };
}

/** Run the job, passing each output line to `writeLine` in manifest order. */
export async function runExtraction(
  job: ExtractionJob,
  writeLine: (line: string) => void | Promise<void>,
): Promise<ExtractionSummary> {
  const summary: ExtractionSummary = {
    records: 0,
    detected: 0,
    undetected: 0,
    undecodable: 0,
    multiPerson: [],
    diagnostics: [],
  };
  const concurrency = job.concurrency ?? 4;
  const outcomes = mapOrdered(job.manifest, concurrency, (entry) => extractOne(job, entry));
  let index = 0;
  for await (const outcome of outcomes) {
    summary.records += 1;
    summary[outcome.kind] += 1;
    if (outcome.multiPerson) {
      summary.multiPerson.push(job.manifest[index]!.imageId);
    }
    summary.diagnostics.push(...outcome.diagnostics);
    await writeLine(outcome.line);
    index += 1;
  }
  return summary;
}
