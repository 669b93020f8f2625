import { describe, expect, it } from "vitest";
import * as zlib from "node:zlib";

import {
  adler32,
  base64ToBytes,
  bytesToBase64,
  crc32,
  decodeGrayPng,
  encodeGrayPng,
  zlibStore,
} from "../src/png.js";

const inflate = (data: Uint8Array): Uint8Array => new Uint8Array(zlib.inflateSync(data));

function randomPixels(count: number, seed: number): Uint8Array {
  const out = new Uint8Array(count);
  let state = seed >>> 0;
  for (let i = 0; i < count; i++) {
    state = (Math.imul(state, 1664525) + 1013904223) >>> 0;
    out[i] = state & 0xff;
  }
  return out;
}

describe("checksums", () => {
  it("crc32 matches the published check value", () => {
    const bytes = new TextEncoder().encode("123456789");
    expect(crc32(bytes)).toBe(0xcbf43926);
    expect(crc32(new Uint8Array(0))).toBe(0);
  });

  it("crc32 matches node's implementation on random data", () => {
    const data = randomPixels(4096, 11);
    expect(crc32(data)).toBe(Number(zlib.crc32(data)));
  });

  it("adler32 matches the published check value", () => {
    const bytes = new TextEncoder().encode("Wikipedia");
    expect(adler32(bytes)).toBe(0x11e60398);
    expect(adler32(new Uint8Array(0))).toBe(1);
  });
});

describe("zlibStore", () => {
  it("inflates back to the original bytes", () => {
    const raw = randomPixels(1000, 3);
    expect(inflate(zlibStore(raw))).toEqual(raw);
  });

  it("splits payloads larger than one stored block", () => {
    const raw = randomPixels(70000, 5);
    const wrapped = zlibStore(raw);
    // header + 2 block headers (5 bytes each) + payload + adler trailer
    expect(wrapped.length).toBe(2 + 5 * 2 + raw.length + 4);
    expect(inflate(wrapped)).toEqual(raw);
  });
});

describe("encodeGrayPng", () => {
  it("round trips pixels through a real inflate", () => {
    const pixels = randomPixels(48 * 32, 7);
    const decoded = decodeGrayPng(encodeGrayPng(pixels, 48, 32), inflate);
    expect(decoded.width).toBe(48);
    expect(decoded.height).toBe(32);
    expect(decoded.pixels).toEqual(pixels);
  });

  it("is byte deterministic", () => {
    const pixels = randomPixels(64 * 64, 9);
    expect(encodeGrayPng(pixels, 64, 64)).toEqual(encodeGrayPng(pixels, 64, 64));
  });

  it("handles images whose raw stream exceeds one deflate block", () => {
    const pixels = randomPixels(300 * 300, 13);
    const decoded = decodeGrayPng(encodeGrayPng(pixels, 300, 300), inflate);
    expect(decoded.pixels).toEqual(pixels);
  });

  it("rejects pixel buffers that do not match the dimensions", () => {
    expect(() => encodeGrayPng(new Uint8Array(10), 4, 4)).toThrow(RangeError);
  });
});

describe("decodeGrayPng", () => {
  function chunk(type: string, data: Uint8Array): Uint8Array {
    const out = new Uint8Array(12 + data.length);
    const view = new DataView(out.buffer);
    view.setUint32(0, data.length);
    for (let i = 0; i < 4; i++) out[4 + i] = type.charCodeAt(i);
    out.set(data, 8);
    const crc = zlib.crc32(out.subarray(4, 8 + data.length));
    view.setUint32(8 + data.length, Number(crc));
    return out;
  }

  /** Build a PNG with real per-row filters so the unfilter paths are hit. */
  function filteredPng(pixels: Uint8Array, width: number, height: number, filters: number[]): Uint8Array {
    const raw = new Uint8Array(height * (width + 1));
    for (let y = 0; y < height; y++) {
      const filter = filters[y % filters.length];
      raw[y * (width + 1)] = filter;
      for (let x = 0; x < width; x++) {
        const here = pixels[y * width + x];
        const left = x > 0 ? pixels[y * width + x - 1] : 0;
        const up = y > 0 ? pixels[(y - 1) * width + x] : 0;
        const upLeft = x > 0 && y > 0 ? pixels[(y - 1) * width + x - 1] : 0;
        let predictor = 0;
        if (filter === 1) predictor = left;
        else if (filter === 2) predictor = up;
        else if (filter === 3) predictor = (left + up) >> 1;
        else if (filter === 4) {
          const p = left + up - upLeft;
          const pa = Math.abs(p - left);
          const pb = Math.abs(p - up);
          const pc = Math.abs(p - upLeft);
          predictor = pa <= pb && pa <= pc ? left : pb <= pc ? up : upLeft;
        }
        raw[y * (width + 1) + 1 + x] = (here - predictor) & 0xff;
      }
    }
    const ihdr = new Uint8Array(13);
    const view = new DataView(ihdr.buffer);
    view.setUint32(0, width);
    view.setUint32(4, height);
    ihdr[8] = 8; // bit depth
    const signature = new Uint8Array([137, 80, 78, 71, 13, 10, 26, 10]);
    const idat = chunk("IDAT", new Uint8Array(zlib.deflateSync(raw)));
    const parts = [signature, chunk("IHDR", ihdr), idat, chunk("IEND", new Uint8Array(0))];
    const out = new Uint8Array(parts.reduce((n, p) => n + p.length, 0));
    let offset = 0;
    for (const part of parts) {
      out.set(part, offset);
      offset += part.length;
    }
    return out;
  }

  it("undoes all five scanline filters", () => {
    const pixels = randomPixels(24 * 10, 21);
    const png = filteredPng(pixels, 24, 10, [0, 1, 2, 3, 4]);
    expect(decodeGrayPng(png, inflate).pixels).toEqual(pixels);
  });

  it("rejects non-PNG input", () => {
    expect(() => decodeGrayPng(randomPixels(64, 1), inflate)).toThrow(RangeError);
  });
});

describe("base64", () => {
  it("matches Buffer encoding on random bytes", () => {
    for (const [n, seed] of [[0, 1], [1, 2], [2, 3], [257, 4], [1000, 5]] as const) {
      const bytes = randomPixels(n, seed);
      const encoded = bytesToBase64(bytes);
      expect(encoded).toBe(Buffer.from(bytes).toString("base64"));
      expect(base64ToBytes(encoded)).toEqual(bytes);
    }
  });

  it("rejects characters outside the alphabet", () => {
    expect(() => base64ToBytes("ab!d")).toThrow(RangeError);
  });
});
