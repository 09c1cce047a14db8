/** Test images built from scratch: tiny but structurally valid PNG and JPEG
 * containers whose dimensions are controlled by the caller. */

import { deflateSync, crc32 } from "node:zlib";

function u32be(value: number): Buffer {
  const buf = Buffer.alloc(4);
  buf.writeUInt32BE(value >>> 0);
  return buf;
}

function pngChunk(type: string, payload: Buffer): Buffer {
  const typed = Buffer.concat([Buffer.from(type, "ascii"), payload]);
  return Buffer.concat([u32be(payload.length), typed, u32be(crc32(typed))]);
}

/** A complete 8-bit grayscale PNG of the given dimensions. `fill` varies the
 * pixel bytes so different fills give different file bytes. */
export function makePng(width: number, height: number, fill = 0x7f): Buffer {
  const signature = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
  const ihdr = Buffer.concat([
    u32be(width),
    u32be(height),
    Buffer.from([8, 0, 0, 0, 0]), // bit depth 8, grayscale, default coding
  ]);
  const scanlines = Buffer.alloc(height * (1 + width), fill);
  for (let row = 0; row < height; row++) {
    scanlines[row * (1 + width)] = 0; // per-row filter byte: none
  }
  return Buffer.concat([
    signature,
    pngChunk("IHDR", ihdr),
    pngChunk("IDAT", deflateSync(scanlines)),
    pngChunk("IEND", Buffer.alloc(0)),
  ]);
}

function jpegSegment(marker: number, payload: Buffer): Buffer {
  const head = Buffer.from([0xff, marker, 0, 0]);
  head.writeUInt16BE(payload.length + 2, 2);
  return Buffer.concat([head, payload]);
}

/** A minimal JPEG: JFIF header plus a baseline frame header carrying the
 * dimensions. Enough container structure for any header-reading probe. */
export function makeJpeg(width: number, height: number): Buffer {
  const soi = Buffer.from([0xff, 0xd8]);
  const jfif = jpegSegment(
    0xe0,
    Buffer.concat([
      Buffer.from("JFIF\0", "ascii"),
      Buffer.from([1, 1, 0, 0, 1, 0, 1, 0, 0]),
    ]),
  );
  const sof0Payload = Buffer.alloc(9);
  sof0Payload[0] = 8; // sample precision
  sof0Payload.writeUInt16BE(height, 1);
  sof0Payload.writeUInt16BE(width, 3);
  sof0Payload[5] = 1; // one component
  sof0Payload[6] = 1;
  sof0Payload[7] = 0x11;
  sof0Payload[8] = 0;
  const sof0 = jpegSegment(0xc0, sof0Payload);
  const eoi = Buffer.from([0xff, 0xd9]);
  return Buffer.concat([soi, jfif, sof0, eoi]);
}
