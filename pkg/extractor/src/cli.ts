#!/usr/bin/env node
/** CLI: run a pose detector over a manifest of product images and write the
 * landmark record file the clustering pipeline consumes.
 *
 *   pose-extract --images DIR --manifest FILE --detector POSE3D33|POSE2D17 --out FILE
 *
 * Environment:
 *   POSE_EXTRACTOR_BACKEND      "runtime" (default) or "stub" (deterministic
 *                               test detector, no model weights needed)
 *   POSE_EXTRACTOR_CONCURRENCY  images processed in parallel (default 4)
 *
 * Exit codes: 0 success, 1 extraction failure, 2 usage error. The output file
 * is written to a temp sibling and renamed, so failures leave no partial
 * artifact. A JSON summary goes to stdout; diagnostics go to stderr.
 */

import { mkdtempSync, rmSync } from "node:fs";
import { open, readFile, rename } from "node:fs/promises";
import path from "node:path";
import { pathToFileURL } from "node:url";
import { parseArgs } from "node:util";

import { DetectorError, loadDetector, type BackendName } from "./detector.js";
import { runExtraction } from "./extract.js";
import { parseManifest } from "./manifest.js";
import { isTopologyName } from "./topology.js";

class UsageError extends Error {}

interface CliOptions {
  images: string;
  manifest: string;
  detector: "POSE3D33" | "POSE2D17";
  out: string;
  backend: BackendName;
  concurrency: number;
}

function parseCliOptions(argv: string[], env: NodeJS.ProcessEnv): CliOptions {
  let values: { images?: string; manifest?: string; detector?: string; out?: string };
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        images: { type: "string" },
        manifest: { type: "string" },
        detector: { type: "string" },
        out: { type: "string" },
      },
      strict: true,
      allowPositionals: false,
    }));
  } catch (error) {
    throw new UsageError((error as Error).message);
  }
  for (const flag of ["images", "manifest", "detector", "out"] as const) {
    if (!values[flag]) {
      throw new UsageError(`missing required flag --${flag}`);
    }
  }
  const detector = values.detector!;
  if (!isTopologyName(detector)) {
    throw new UsageError(`--detector must be POSE3D33 or POSE2D17, got '${detector}'`);
  }
  const backend = env["POSE_EXTRACTOR_BACKEND"] ?? "runtime";
  if (backend !== "runtime" && backend !== "stub") {
    throw new UsageError(`POSE_EXTRACTOR_BACKEND must be 'runtime' or 'stub', got '${backend}'`);
  }
  const rawConcurrency = env["POSE_EXTRACTOR_CONCURRENCY"] ?? "4";
  const concurrency = Number(rawConcurrency);
  if (!Number.isInteger(concurrency) || concurrency < 1) {
    throw new UsageError(
      `POSE_EXTRACTOR_CONCURRENCY must be a positive integer, got '${rawConcurrency}'`,
    );
  }
  return {
    images: values.images!,
    manifest: values.manifest!,
    detector,
    out: values.out!,
    backend,
    concurrency,
  };
}

export async function main(
  argv: string[] = process.argv.slice(2),
  env: NodeJS.ProcessEnv = process.env,
): Promise<number> {
  let options: CliOptions;
  try {
    options = parseCliOptions(argv, env);
  } catch (error) {
    process.stderr.write(`usage: ${(error as Error).message}\n`);
    process.stderr.write(
      "usage: pose-extract --images DIR --manifest FILE --detector POSE3D33|POSE2D17 --out FILE\n",
    );
    return 2;
  }

  try {
    const manifestText = await readFile(options.manifest, "utf-8");
    const { entries, diagnostics } = parseManifest(manifestText);
    for (const diag of diagnostics) {
      process.stderr.write(`manifest line ${diag.line}: ${diag.message}\n`);
    }
    if (diagnostics.length > 0) {
      throw new Error(
        `${diagnostics.length} malformed manifest line(s) in ${options.manifest}`,
      );
    }
    if (entries.length === 0) {
      throw new Error(`manifest ${options.manifest} lists no images`);
    }

    const detector = await loadDetector(options.detector, options.backend);

    // temp file beside the destination so the final rename is atomic
    const outDir = path.dirname(path.resolve(options.out));
    const tmpDir = mkdtempSync(path.join(outDir, ".pose-extract-"));
    const tmpPath = path.join(tmpDir, "out.jsonl");
    let summary;
    try {
      const handle = await open(tmpPath, "w");
      try {
        summary = await runExtraction(
          {
            imagesDir: options.images,
            manifest: entries,
            detector,
            concurrency: options.concurrency,
          },
          (line) => handle.write(line + "\n").then(() => undefined),
        );
      } finally {
        await handle.close();
      }
      await rename(tmpPath, options.out);
    } finally {
      rmSync(tmpDir, { recursive: true, force: true });
    }

    for (const diagnostic of summary.diagnostics) {
      process.stderr.write(`${diagnostic}\n`);
    }
    process.stdout.write(
      JSON.stringify({
        out: options.out,
        records: summary.records,
        detected: summary.detected,
        undetected: summary.undetected,
        undecodable: summary.undecodable,
        multi_person: summary.multiPerson,
        backend: detector.backend,
      }) + "\n",
    );
    return 0;
  } catch (error) {
    if (error instanceof DetectorError) {
      process.stderr.write(`fatal: ${error.message}\n`);
    } else {
      process.stderr.write(`error: ${(error as Error).message}\n`);
    }
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href;
if (invokedDirectly) {
  main().then((code) => {
    process.exitCode = code;
  });
}
