/**
 * Raster mask model for the editor.
 *
 * Masks live at exact image resolution as 0/1 bytes; drawing tools are a
 * filled rectangle and a round brush, both with erase variants. Exported
 * PNGs are binary 0/255 grayscale, byte-compatible with the service's
 * mask format.
 */

import { Deflate, Inflate, decodeGrayPng, encodeGrayPng } from "./png.js";

export const N_MAX = 5;
export const PALETTE = ["red", "green", "blue", "yellow", "purple"] as const;
export type PaletteColor = (typeof PALETTE)[number];

export const PALETTE_RGB: Record<PaletteColor, [number, number, number]> = {
  red: [255, 0, 0],
  green: [0, 255, 0],
  blue: [0, 0, 255],
  yellow: [255, 255, 0],
  purple: [128, 0, 128],
};

export type MaskTool = "rect" | "brush";

export class CanvasMask {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8Array; // 0/1 per pixel, row-major
  tool: MaskTool;

  constructor(width: number, height: number, tool: MaskTool = "rect") {
    if (width <= 0 || height <= 0) throw new Error("mask needs positive dimensions");
    this.width = width;
    this.height = height;
    this.data = new Uint8Array(width * height);
    this.tool = tool;
  }

  private clampX(x: number): number {
    return Math.max(0, Math.min(this.width, Math.round(x)));
  }

  private clampY(y: number): number {
    return Math.max(0, Math.min(this.height, Math.round(y)));
  }

  /** Fill (or erase) the half-open rectangle [x0,x1) x [y0,y1). */
  drawRect(x0: number, y0: number, x1: number, y1: number, erase = false): void {
    const [ax, bx] = [this.clampX(Math.min(x0, x1)), this.clampX(Math.max(x0, x1))];
    const [ay, by] = [this.clampY(Math.min(y0, y1)), this.clampY(Math.max(y0, y1))];
    const value = erase ? 0 : 1;
    for (let y = ay; y < by; y++) {
      this.data.fill(value, y * this.width + ax, y * this.width + bx);
    }
    this.tool = "rect";
  }

  /** Stamp a filled circle, the brush primitive. */
  brushStamp(cx: number, cy: number, radius: number, erase = false): void {
    const value = erase ? 0 : 1;
    const r2 = radius * radius;
    const y0 = this.clampY(cy - radius), y1 = this.clampY(cy + radius + 1);
    const x0 = this.clampX(cx - radius), x1 = this.clampX(cx + radius + 1);
    for (let y = y0; y < y1; y++) {
      for (let x = x0; x < x1; x++) {
        const dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= r2) this.data[y * this.width + x] = value;
      }
    }
    this.tool = "brush";
  }

  clear(): void {
    this.data.fill(0);
  }

  area(): number {
    let n = 0;
    for (const v of this.data) n += v;
    return n;
  }

  isEmpty(): boolean {
    return this.area() === 0;
  }

  /** Binary 0/255 grayscale PNG at exact image resolution. */
  toPngBytes(deflate: Deflate): Uint8Array {
    const gray = new Uint8Array(this.data.length);
    for (let i = 0; i < this.data.length; i++) gray[i] = this.data[i]! ? 255 : 0;
    return encodeGrayPng(this.width, this.height, gray, deflate);
  }

  static fromPngBytes(bytes: Uint8Array, inflate: Inflate,
                      tool: MaskTool = "rect"): CanvasMask {
    const image = decodeGrayPng(bytes, inflate);
    const mask = new CanvasMask(image.width, image.height, tool);
    for (let i = 0; i < image.data.length; i++) {
      mask.data[i] = image.data[i]! >= 128 ? 1 : 0;
    }
    return mask;
  }
}
