/** Extraction manifest: one line per image, `image_id`, `product_id`, `path`. */

export interface ManifestEntry {
  readonly imageId: string;
  readonly productId: string;
  readonly path: string;
}

export interface ManifestDiagnostic {
  /** 1-based line number in the manifest file. */
  readonly line: number;
  readonly message: string;
}

export interface ManifestParseResult {
  readonly entries: ManifestEntry[];
  readonly diagnostics: ManifestDiagnostic[];
}

function entryFromObject(obj: unknown): ManifestEntry {
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new Error("manifest line must be an object");
  }
  const record = obj as Record<string, unknown>;
  const known = new Set(["image_id", "product_id", "path"]);
  const unknown = Object.keys(record).filter((k) => !known.has(k));
  if (unknown.length > 0) {
    throw new Error(`unknown field(s): ${unknown.sort().join(", ")}`);
  }
  for (const field of ["image_id", "product_id", "path"]) {
    const value = record[field];
    if (typeof value !== "string" || value.length === 0) {
      throw new Error(`field '${field}' must be a non-empty string`);
    }
  }
  return {
    imageId: record["image_id"] as string,
    productId: record["product_id"] as string,
    path: record["path"] as string,
  };
}

/** Parse manifest text. Bad lines become diagnostics; good lines keep file order. */
export function parseManifest(text: string): ManifestParseResult {
  const entries: ManifestEntry[] = [];
  const diagnostics: ManifestDiagnostic[] = [];
  const seen = new Set<string>();
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = (lines[i] ?? "").trim();
    if (line === "") continue;
    let entry: ManifestEntry;
    try {
      entry = entryFromObject(JSON.parse(line));
    } catch (error) {
      diagnostics.push({ line: i + 1, message: (error as Error).message });
      continue;
    }
    if (seen.has(entry.imageId)) {
      diagnostics.push({ line: i + 1, message: `duplicate image_id '${entry.imageId}'` });
      continue;
    }
    seen.add(entry.imageId);
    entries.push(entry);
  }
  return { entries, diagnostics };
}
