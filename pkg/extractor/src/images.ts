/** Image dimension probing. The adapter never decodes pixels; detectors get
 * the raw bytes, so all it needs from the container is width and height. */

import { imageSize } from "image-size";

export interface ImageDimensions {
  readonly width: number;
  readonly height: number;
}

/** Read pixel dimensions from encoded image bytes, or null if the bytes are
 * not a recognizable image (unknown container, truncated header, garbage). */
export function decodeDimensions(bytes: Uint8Array): ImageDimensions | null {
  let width: number | undefined;
  let height: number | undefined;
  try {
    ({ width, height } = imageSize(bytes));
  } catch {
    return null;
  }
  if (
    typeof width !== "number" ||
    typeof height !== "number" ||
    !Number.isInteger(width) ||
    !Number.isInteger(height) ||
    width <= 0 ||
    height <= 0
  ) {
    return null;
  }
  return { width, height };
}
