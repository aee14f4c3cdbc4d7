/**
 * Minimal 8-bit grayscale PNG codec for binary masks.
 *
 * Compression is injected (node:zlib in tests and tooling, a
 * CompressionStream adapter in browsers) so the module itself stays
 * environment-free. Encoding always emits filter 0 scanlines, and the
 * decoder supports exactly the subset our encoder produces plus the
 * common filters the service may return.
 */

export type Deflate = (data: Uint8Array) => Uint8Array;
export type Inflate = (data: Uint8Array) => Uint8Array;

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE: number[] = (() => {
  const table = new Array<number>(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let crc = 0xffffffff;
  for (const b of bytes) {
    crc = (CRC_TABLE[(crc ^ b) & 0xff] as number) ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

function u32(value: number): Uint8Array {
  return new Uint8Array([(value >>> 24) & 0xff, (value >>> 16) & 0xff,
                         (value >>> 8) & 0xff, value & 0xff]);
}

function chunk(type: string, body: Uint8Array): Uint8Array {
  const typeBytes = new TextEncoder().encode(type);
  const payload = new Uint8Array(typeBytes.length + body.length);
  payload.set(typeBytes);
  payload.set(body, typeBytes.length);
  const out = new Uint8Array(4 + payload.length + 4);
  out.set(u32(body.length));
  out.set(payload, 4);
  out.set(u32(crc32(payload)), 4 + payload.length);
  return out;
}

/** Encode one 8-bit gray channel; data is row-major, length width*height. */
export function encodeGrayPng(width: number, height: number, data: Uint8Array,
                              deflate: Deflate): Uint8Array {
  if (data.length !== width * height) {
    throw new Error(`pixel buffer ${data.length} != ${width}x${height}`);
  }
  const ihdr = new Uint8Array(13);
  ihdr.set(u32(width));
  ihdr.set(u32(height), 4);
  ihdr[8] = 8;  // bit depth
  ihdr[9] = 0;  // grayscale
  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0; // filter: none
    raw.set(data.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  const idat = deflate(raw);
  const parts = [new Uint8Array(SIGNATURE), chunk("IHDR", ihdr),
                 chunk("IDAT", idat), chunk("IEND", new Uint8Array(0))];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const part of parts) {
    out.set(part, offset);
    offset += part.length;
  }
  return out;
}

export interface GrayImage {
  width: number;
  height: number;
  data: Uint8Array;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a), pb = Math.abs(p - b), pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

/** Decode an 8-bit grayscale, non-interlaced PNG (filters 0-4). */
export function decodeGrayPng(bytes: Uint8Array, inflate: Inflate): GrayImage {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG");
  }
  let offset = 8;
  let width = 0, height = 0, bitDepth = 0, colorType = 0, interlace = 0;
  const idatParts: Uint8Array[] = [];
  while (offset < bytes.length) {
    const length = ((bytes[offset]! << 24) | (bytes[offset + 1]! << 16)
      | (bytes[offset + 2]! << 8) | bytes[offset + 3]!) >>> 0;
    const type = new TextDecoder().decode(bytes.subarray(offset + 4, offset + 8));
    const body = bytes.subarray(offset + 8, offset + 8 + length);
    if (type === "IHDR") {
      width = ((body[0]! << 24) | (body[1]! << 16) | (body[2]! << 8) | body[3]!) >>> 0;
      height = ((body[4]! << 24) | (body[5]! << 16) | (body[6]! << 8) | body[7]!) >>> 0;
      bitDepth = body[8]!;
      colorType = body[9]!;
      interlace = body[12]!;
    } else if (type === "IDAT") {
      idatParts.push(new Uint8Array(body));
    } else if (type === "IEND") {
      break;
    }
    offset += 8 + length + 4;
  }
  if (bitDepth !== 8 || colorType !== 0 || interlace !== 0) {
    throw new Error(`unsupported PNG layout (depth ${bitDepth}, color ${colorType})`);
  }
  const compressed = new Uint8Array(idatParts.reduce((n, p) => n + p.length, 0));
  let at = 0;
  for (const part of idatParts) {
    compressed.set(part, at);
    at += part.length;
  }
  const raw = inflate(compressed);
  const data = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (width + 1)]!;
    for (let x = 0; x < width; x++) {
      const value = raw[y * (width + 1) + 1 + x]!;
      const left = x > 0 ? data[y * width + x - 1]! : 0;
      const up = y > 0 ? data[(y - 1) * width + x]! : 0;
      const upLeft = x > 0 && y > 0 ? data[(y - 1) * width + x - 1]! : 0;
      let decoded: number;
      switch (filter) {
        case 0: decoded = value; break;
        case 1: decoded = value + left; break;
        case 2: decoded = value + up; break;
        case 3: decoded = value + Math.floor((left + up) / 2); break;
        case 4: decoded = value + paeth(left, up, upLeft); break;
        default: throw new Error(`unsupported PNG filter ${filter}`);
      }
      data[y * width + x] = decoded & 0xff;
    }
  }
  return { width, height, data };
}

export function bytesToBase64(bytes: Uint8Array): string {
  const CHARS = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const b0 = bytes[i]!;
    const b1 = i + 1 < bytes.length ? bytes[i + 1]! : 0;
    const b2 = i + 2 < bytes.length ? bytes[i + 2]! : 0;
    out += CHARS[b0 >> 2]! + CHARS[((b0 & 3) << 4) | (b1 >> 4)]!;
    out += i + 1 < bytes.length ? CHARS[((b1 & 15) << 2) | (b2 >> 6)]! : "=";
    out += i + 2 < bytes.length ? CHARS[b2 & 63]! : "=";
  }
  return out;
}

export function base64ToBytes(b64: string): Uint8Array {
  const CHARS = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  const clean = b64.replace(/=+$/, "");
  const out: number[] = [];
  let buffer = 0, bits = 0;
  for (const ch of clean) {
    const value = CHARS.indexOf(ch);
    if (value < 0) throw new Error(`invalid base64 character ${ch}`);
    buffer = (buffer << 6) | value;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push((buffer >> bits) & 0xff);
    }
  }
  return new Uint8Array(out);
}
