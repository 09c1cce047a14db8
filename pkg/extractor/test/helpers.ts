/** Shared test plumbing: temp image directories and stdio capture for
 * in-process CLI runs. */

import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import os from "node:os";
import path from "node:path";

const createdDirs: string[] = [];

/** Fresh temp directory, optionally pre-populated with files. Removed by
 * `cleanupTempDirs` (call it from afterAll). */
export function tempDir(files: Record<string, Buffer | string> = {}): string {
  const dir = mkdtempSync(path.join(os.tmpdir(), "pose-extract-test-"));
  createdDirs.push(dir);
  for (const [name, content] of Object.entries(files)) {
    writeFileSync(path.join(dir, name), content);
  }
  return dir;
}

export function cleanupTempDirs(): void {
  while (createdDirs.length > 0) {
    rmSync(createdDirs.pop()!, { recursive: true, force: true });
  }
}

export interface CapturedRun<T> {
  readonly result: T;
  readonly stdout: string;
  readonly stderr: string;
}

/** Run `fn` with process.stdout/stderr writes captured as strings. */
export async function withCapturedIo<T>(fn: () => Promise<T>): Promise<CapturedRun<T>> {
  const originalOut = process.stdout.write;
  const originalErr = process.stderr.write;
  let stdout = "";
  let stderr = "";
  process.stdout.write = ((chunk: string | Uint8Array) => {
    stdout += chunk.toString();
    return true;
  }) as typeof process.stdout.write;
  process.stderr.write = ((chunk: string | Uint8Array) => {
    stderr += chunk.toString();
    return true;
  }) as typeof process.stderr.write;
  try {
    const result = await fn();
    return { result, stdout, stderr };
  } finally {
    process.stdout.write = originalOut;
    process.stderr.write = originalErr;
  }
}

/** One manifest line in the format the extractor consumes. */
export function manifestLine(imageId: string, productId: string, filePath: string): string {
  return JSON.stringify({ image_id: imageId, product_id: productId, path: filePath });
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
