/**
 * Tiny software rasterizer: an RGB pixel buffer with rectangles, lines,
 * markers and bitmap text.  Coordinates are pixels, origin top-left.
 */

import { ADVANCE, GLYPH_H, GLYPH_W, glyph, textWidth } from "./font.js";
import { encodePng } from "./png.js";

export type Color = readonly [number, number, number];

export const WHITE: Color = [255, 255, 255];
export const BLACK: Color = [20, 20, 20];
export const GREY: Color = [150, 150, 150];
export const LIGHT_GREY: Color = [225, 225, 225];

export class Raster {
  readonly width: number;
  readonly height: number;
  readonly pixels: Uint8Array;

  constructor(width: number, height: number, background: Color = WHITE) {
    this.width = width;
    this.height = height;
    this.pixels = new Uint8Array(width * height * 3);
    this.fillRect(0, 0, width, height, background);
  }

  set(x: number, y: number, c: Color): void {
    x = Math.round(x);
    y = Math.round(y);
    if (x < 0 || y < 0 || x >= this.width || y >= this.height) return;
    const i = (y * this.width + x) * 3;
    this.pixels[i] = c[0];
    this.pixels[i + 1] = c[1];
    this.pixels[i + 2] = c[2];
  }

  fillRect(x: number, y: number, w: number, h: number, c: Color): void {
    const x0 = Math.max(0, Math.round(x));
    const y0 = Math.max(0, Math.round(y));
    const x1 = Math.min(this.width, Math.round(x + w));
    const y1 = Math.min(this.height, Math.round(y + h));
    for (let yy = y0; yy < y1; yy++) {
      for (let xx = x0; xx < x1; xx++) {
        const i = (yy * this.width + xx) * 3;
        this.pixels[i] = c[0];
        this.pixels[i + 1] = c[1];
        this.pixels[i + 2] = c[2];
      }
    }
  }

  /** Bresenham segment with an optional square pen for thickness. */
  line(x0: number, y0: number, x1: number, y1: number, c: Color, thick = 1): void {
    let xa = Math.round(x0);
    let ya = Math.round(y0);
    const xb = Math.round(x1);
    const yb = Math.round(y1);
    const dx = Math.abs(xb - xa);
    const dy = -Math.abs(yb - ya);
    const sx = xa < xb ? 1 : -1;
    const sy = ya < yb ? 1 : -1;
    let err = dx + dy;
    const r = Math.floor(thick / 2);
    for (;;) {
      if (thick === 1) {
        this.set(xa, ya, c);
      } else {
        this.fillRect(xa - r, ya - r, thick, thick, c);
      }
      if (xa === xb && ya === yb) break;
      const e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        xa += sx;
      }
      if (e2 <= dx) {
        err += dx;
        ya += sy;
      }
    }
  }

  dashedLine(x0: number, y0: number, x1: number, y1: number, c: Color, on = 5, off = 4): void {
    const len = Math.hypot(x1 - x0, y1 - y0);
    if (len === 0) return;
    const steps = Math.ceil(len);
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      const phase = (t * len) % (on + off);
      if (phase <= on) {
        this.set(x0 + t * (x1 - x0), y0 + t * (y1 - y0), c);
      }
    }
  }

  marker(x: number, y: number, c: Color, size = 5): void {
    const r = Math.floor(size / 2);
    this.fillRect(x - r, y - r, size, size, c);
  }

  text(x: number, y: number, s: string, c: Color, scale = 1): void {
    let cx = Math.round(x);
    for (const ch of s) {
      const g = glyph(ch);
      for (let row = 0; row < GLYPH_H; row++) {
        for (let col = 0; col < GLYPH_W; col++) {
          if (g[row][col] === "#") {
            this.fillRect(cx + col * scale, y + row * scale, scale, scale, c);
          }
        }
      }
      cx += ADVANCE * scale;
    }
  }

  textRight(x: number, y: number, s: string, c: Color, scale = 1): void {
    this.text(x - textWidth(s, scale), y, s, c, scale);
  }

  textCenter(x: number, y: number, s: string, c: Color, scale = 1): void {
    this.text(x - textWidth(s, scale) / 2, y, s, c, scale);
  }

  /** Vertical text running bottom-up (for y-axis labels). */
  textVertical(x: number, y: number, s: string, c: Color, scale = 1): void {
    let cy = Math.round(y);
    for (const ch of s) {
      const g = glyph(ch);
      for (let row = 0; row < GLYPH_H; row++) {
        for (let col = 0; col < GLYPH_W; col++) {
          if (g[row][col] === "#") {
            // rotate 90 degrees counter-clockwise
            this.fillRect(x + row * scale, cy - col * scale, scale, scale, c);
          }
        }
      }
      cy -= ADVANCE * scale;
    }
  }

  png(): Buffer {
    return encodePng(this.width, this.height, this.pixels);
  }
}

export { textWidth };
