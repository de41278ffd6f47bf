/**
 * Figure builders: log-log rate panels with guide lines and slope
 * annotations, space-time trajectory heatmaps, and diffusion-factor
 * heatmaps.  Everything is drawn into the software rasterizer with the
 * embedded font, so a fixed input renders to fixed bytes.
 */

import { RateRow, SigmaRow, TrajectoryRow } from "./csv.js";
import { fitLoglog } from "./fit.js";
import { BLACK, Color, GREY, LIGHT_GREY, Raster, WHITE } from "./raster.js";

const SERIES_COLORS: Color[] = [
  [31, 119, 180],
  [214, 39, 40],
  [44, 160, 44],
  [148, 103, 189],
  [255, 127, 14],
  [23, 190, 207],
];

const PANEL_W = 420;
const PANEL_H = 330;
const MARGIN = { left: 64, right: 18, top: 34, bottom: 46 };

interface PanelGroup {
  key: string;
  gamma: number;
  rows: RateRow[];
}

function groupPanels(rows: RateRow[]): PanelGroup[] {
  const groups = new Map<string, PanelGroup>();
  for (const r of rows) {
    const key = `${r.experiment} gamma=${r.gamma} q=${r.q}`;
    let g = groups.get(key);
    if (!g) {
      g = { key, gamma: r.gamma, rows: [] };
      groups.set(key, g);
    }
    g.rows.push(r);
  }
  return [...groups.values()];
}

function niceTicks(lo: number, hi: number, maxTicks = 6): number[] {
  const span = hi - lo;
  if (span <= 0) return [lo];
  const step = Math.max(1, Math.ceil(span / maxTicks));
  const ticks: number[] = [];
  for (let v = Math.ceil(lo); v <= Math.floor(hi); v += step) ticks.push(v);
  return ticks;
}

export interface RatePanelAnnotation {
  key: string;
  slope: number;
  slopeSe: number;
}

export interface RenderResult {
  raster: Raster;
  annotations: RatePanelAnnotation[];
}

/** Log-log rate figure: one panel per (experiment, gamma, q) group. */
export function renderRateFigure(rows: RateRow[], guideSlopes?: number[]): RenderResult {
  const panels = groupPanels(rows);
  const cols = Math.min(2, panels.length);
  const rowsOfPanels = Math.ceil(panels.length / cols);
  const raster = new Raster(cols * PANEL_W, rowsOfPanels * PANEL_H);
  const annotations: RatePanelAnnotation[] = [];

  panels.forEach((panel, idx) => {
    const px = (idx % cols) * PANEL_W;
    const py = Math.floor(idx / cols) * PANEL_H;
    const data = [...panel.rows].sort((a, b) => b.epsilon - a.epsilon);
    const usable = data.filter((r) => r.error > 0);
    const lx = usable.map((r) => Math.log2(r.epsilon));
    const ly = usable.map((r) => Math.log2(r.error));
    const loSe = usable.map((r) => Math.log2(Math.max(r.error - r.stderr, r.error * 1e-3)));
    const hiSe = usable.map((r) => Math.log2(r.error + r.stderr));

    const guides = guideSlopes && guideSlopes.length > 0 ? guideSlopes : [0.5, 0.5 - panel.gamma];
    let fit = { slope: NaN, slopeSe: NaN };
    if (usable.length >= 2) {
      const f = fitLoglog(usable.map((r) => r.epsilon), usable.map((r) => r.error));
      fit = { slope: f.slope, slopeSe: f.slopeSe };
    }
    annotations.push({ key: panel.key, slope: fit.slope, slopeSe: fit.slopeSe });

    // data ranges padded; guides are anchored at the largest-eps point
    const xMin = Math.min(...lx) - 0.5;
    const xMax = Math.max(...lx) + 0.5;
    let yMin = Math.min(...loSe);
    let yMax = Math.max(...hiSe);
    for (const s of guides) {
      const yEnd = ly[0] + s * (xMin + 0.5 - lx[0]);
      yMin = Math.min(yMin, yEnd);
      yMax = Math.max(yMax, yEnd);
    }
    const pad = 0.08 * (yMax - yMin || 1);
    yMin -= pad;
    yMax += pad;

    const plotX = px + MARGIN.left;
    const plotY = py + MARGIN.top;
    const plotW = PANEL_W - MARGIN.left - MARGIN.right;
    const plotH = PANEL_H - MARGIN.top - MARGIN.bottom;
    const sx = (v: number) => plotX + ((v - xMin) / (xMax - xMin)) * plotW;
    const sy = (v: number) => plotY + plotH - ((v - yMin) / (yMax - yMin)) * plotH;

    // frame and grid
    for (const t of niceTicks(xMin, xMax)) {
      raster.line(sx(t), plotY, sx(t), plotY + plotH, LIGHT_GREY);
      raster.textCenter(sx(t), plotY + plotH + 6, `2^${t}`, BLACK);
    }
    for (const t of niceTicks(yMin, yMax)) {
      raster.line(plotX, sy(t), plotX + plotW, sy(t), LIGHT_GREY);
      raster.textRight(plotX - 4, sy(t) - 3, `2^${t}`, BLACK);
    }
    raster.line(plotX, plotY, plotX, plotY + plotH, BLACK);
    raster.line(plotX, plotY + plotH, plotX + plotW, plotY + plotH, BLACK);

    // guide lines through the largest-eps data point
    guides.forEach((s, gi) => {
      const x0 = lx[0];
      const y0 = ly[0];
      raster.dashedLine(sx(x0), sy(y0), sx(xMin + 0.2), sy(y0 + s * (xMin + 0.2 - x0)), GREY);
      raster.text(sx(xMin + 0.25), sy(y0 + s * (xMin + 0.25 - x0)) - 10 - 9 * gi,
        `slope ${s.toFixed(2)}`, GREY);
    });

    // error bars, connecting line, markers
    const color = SERIES_COLORS[idx % SERIES_COLORS.length];
    for (let i = 0; i < usable.length; i++) {
      raster.line(sx(lx[i]), sy(loSe[i]), sx(lx[i]), sy(hiSe[i]), color);
      raster.line(sx(lx[i]) - 3, sy(loSe[i]), sx(lx[i]) + 3, sy(loSe[i]), color);
      raster.line(sx(lx[i]) - 3, sy(hiSe[i]), sx(lx[i]) + 3, sy(hiSe[i]), color);
    }
    for (let i = 1; i < usable.length; i++) {
      raster.line(sx(lx[i - 1]), sy(ly[i - 1]), sx(lx[i]), sy(ly[i]), color);
    }
    for (let i = 0; i < usable.length; i++) {
      raster.marker(sx(lx[i]), sy(ly[i]), color);
    }

    raster.text(px + MARGIN.left, py + 10, panel.key, BLACK);
    const label = Number.isFinite(fit.slope)
      ? `slope=${fit.slope.toFixed(3)} +-${(fit.slopeSe ?? 0).toFixed(3)}`
      : "slope undefined";
    raster.text(px + MARGIN.left, py + 20, label, BLACK);
    raster.textCenter(px + PANEL_W / 2, py + PANEL_H - 12, "log2 epsilon", BLACK);
    raster.textVertical(px + 6, py + PANEL_H / 2 + 30, "log2 error", BLACK);
  });

  return { raster, annotations };
}

function divergingColor(t: number): Color {
  // t in [-1, 1]: blue -> white -> red
  const clamp = Math.max(-1, Math.min(1, t));
  if (clamp < 0) {
    const u = 1 + clamp;
    return [Math.round(40 + 215 * u), Math.round(90 + 165 * u), 255];
  }
  const u = 1 - clamp;
  return [255, Math.round(60 + 195 * u), Math.round(50 + 205 * u)];
}

/** Space-time heatmap of one trajectory series (mode index vs time). */
export function renderTrajectoryFigure(rows: TrajectoryRow[], series = "slow"): RenderResult {
  const filtered = rows.filter((r) => r.series === series);
  if (filtered.length === 0) {
    throw new Error(`no rows for series ${JSON.stringify(series)}`);
  }
  const times = [...new Set(filtered.map((r) => r.time))].sort((a, b) => a - b);
  const modes = [...new Set(filtered.map((r) => r.mode))].sort((a, b) => a - b);
  const value = new Map<string, number>();
  let vmax = 0;
  for (const r of filtered) {
    value.set(`${r.time}|${r.mode}`, r.value);
    vmax = Math.max(vmax, Math.abs(r.value));
  }
  vmax = vmax || 1;

  const cellW = Math.max(4, Math.floor(720 / times.length));
  const cellH = Math.max(10, Math.floor(360 / modes.length));
  const plotW = cellW * times.length;
  const plotH = cellH * modes.length;
  const left = 70;
  const top = 30;
  const raster = new Raster(left + plotW + 20, top + plotH + 50);

  times.forEach((t, ti) => {
    modes.forEach((m, mi) => {
      const v = value.get(`${t}|${m}`) ?? 0;
      raster.fillRect(left + ti * cellW, top + mi * cellH, cellW, cellH,
        divergingColor(v / vmax));
    });
  });
  modes.forEach((m, mi) => {
    raster.textRight(left - 6, top + mi * cellH + cellH / 2 - 3, `k=${m}`, BLACK);
  });
  raster.text(left, 10, `series=${series}  (max |value| ${vmax.toPrecision(3)})`, BLACK);
  raster.textCenter(left + plotW / 2, top + plotH + 10, "time ->", BLACK);
  raster.text(left, top + plotH + 24,
    `t in [${times[0].toPrecision(3)}, ${times[times.length - 1].toPrecision(3)}]`, BLACK);
  return { raster, annotations: [] };
}

/** Heatmap of the estimated diffusion factor. */
export function renderSigmaFigure(rows: SigmaRow[]): RenderResult {
  const n = Math.max(...rows.map((r) => Math.max(r.i, r.j)));
  const mat: number[][] = Array.from({ length: n }, () => Array(n).fill(0));
  let vmax = 0;
  for (const r of rows) {
    mat[r.i - 1][r.j - 1] = r.sigma;
    vmax = Math.max(vmax, Math.abs(r.sigma));
  }
  vmax = vmax || 1;

  const cell = Math.max(16, Math.floor(360 / n));
  const left = 50;
  const top = 30;
  const raster = new Raster(left + cell * n + 20, top + cell * n + 40);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      raster.fillRect(left + j * cell, top + i * cell, cell - 1, cell - 1,
        divergingColor(mat[i][j] / vmax));
    }
    raster.textRight(left - 5, top + i * cell + cell / 2 - 3, `${i + 1}`, BLACK);
    raster.textCenter(left + i * cell + cell / 2, top + cell * n + 6, `${i + 1}`, BLACK);
  }
  raster.text(left, 10, `diffusion factor, max |entry| ${vmax.toPrecision(4)}`, BLACK);
  return { raster, annotations: [] };
}
