/**
 * Chart construction: benchmark cells -> thread-scaling line chart, and
 * profile breakdowns -> per-phase bar panels. Layout is drawn against the
 * Surface interface so every chart renders to SVG or PNG identically.
 */

import { BenchCell, Profile } from "./data.js";
import { Surface } from "./surface.js";

export const PALETTE = [
  "#4269d0", "#efb118", "#ff725c", "#6cc5b0",
  "#3ca951", "#ff8ab7", "#a463f2", "#97bbf5",
];

const AXIS = "#333333";
const GRID = "#dddddd";

function niceMax(v: number): number {
  if (v <= 0) return 1;
  const mag = 10 ** Math.floor(Math.log10(v));
  for (const m of [1, 2, 2.5, 5, 10]) {
    if (v <= m * mag) return m * mag;
  }
  return 10 * mag;
}

function fmt(v: number): string {
  if (v >= 100) return v.toFixed(0);
  if (v >= 1) return +v.toFixed(1) + "";
  return +v.toPrecision(2) + "";
}

export interface SeriesPoint {
  x: number;
  y: number | null; // null renders as a gap
}

export interface LineSeries {
  label: string;
  points: SeriesPoint[];
}

export function benchSeries(cells: BenchCell[]): { series: LineSeries[]; threads: number[] } {
  const threads = [...new Set(cells.map((c) => c.threads))].sort((a, b) => a - b);
  const byKey = new Map<string, Map<number, number | null>>();
  for (const c of cells) {
    const key = `${c.scheduler}/${c.dtype}`;
    if (!byKey.has(key)) byKey.set(key, new Map());
    byKey.get(key)!.set(c.threads, c.meanDecodeTps);
  }
  const series = [...byKey.entries()].sort(([a], [b]) => a.localeCompare(b)).map(
    ([label, values]) => ({
      label,
      points: threads.map((t) => ({ x: t, y: values.has(t) ? values.get(t)! : null })),
    }),
  );
  return { series, threads };
}

export function drawThreadScaling(surf: Surface, series: LineSeries[], threads: number[], title: string): void {
  const m = { left: 64, right: 170, top: 46, bottom: 46 };
  const plotW = surf.width - m.left - m.right;
  const plotH = surf.height - m.top - m.bottom;
  surf.text(surf.width / 2, 24, title, AXIS, 15, "middle");

  const yPeak = Math.max(0, ...series.flatMap((s) => s.points.map((p) => p.y ?? 0)));
  const yMax = niceMax(yPeak * 1.05);
  const xMin = threads.length ? Math.min(...threads) : 0;
  const xMax = threads.length ? Math.max(...threads) : 1;
  const xTo = (t: number) =>
    m.left + (xMax === xMin ? plotW / 2 : ((t - xMin) / (xMax - xMin)) * plotW);
  const yTo = (v: number) => m.top + plotH - (v / yMax) * plotH;

  // gridlines + y ticks
  for (let i = 0; i <= 5; i++) {
    const v = (yMax / 5) * i;
    const y = yTo(v);
    surf.line(m.left, y, m.left + plotW, y, GRID);
    surf.text(m.left - 8, y + 4, fmt(v), AXIS, 11, "end");
  }
  // axes
  surf.line(m.left, m.top, m.left, m.top + plotH, AXIS);
  surf.line(m.left, m.top + plotH, m.left + plotW, m.top + plotH, AXIS);
  for (const t of threads) {
    const x = xTo(t);
    surf.line(x, m.top + plotH, x, m.top + plotH + 4, AXIS);
    surf.text(x, m.top + plotH + 18, String(t), AXIS, 11, "middle");
  }
  surf.text(m.left + plotW / 2, surf.height - 10, "threads", AXIS, 12, "middle");
  surf.text(14, m.top - 10, "decode tk/s", AXIS, 12, "start");

  series.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length];
    let run: Array<[number, number]> = [];
    const flush = () => {
      if (run.length > 1) surf.polyline(run, color, 2);
      run = [];
    };
    for (const p of s.points) {
      if (p.y === null) {
        flush(); // timeout/oom cells become gaps
      } else {
        const xy: [number, number] = [xTo(p.x), yTo(p.y)];
        run.push(xy);
        surf.circle(xy[0], xy[1], 3, color);
      }
    }
    flush();
    const ly = m.top + 8 + i * 18;
    surf.rect(m.left + plotW + 16, ly, 12, 12, color);
    surf.text(m.left + plotW + 34, ly + 10, s.label, AXIS, 11);
  });
}

// ---------------------------------------------------------------------------
// bar panels (op breakdown, matmul breakdown)
// ---------------------------------------------------------------------------

export interface BarPanel {
  title: string;
  categories: string[];
  values: number[];
  unit: string;
  color: string;
}

export function opPanels(profile: Profile): BarPanel[] {
  return profile.phases.map((phase, i) => ({
    title: `${phase.phase} op time share`,
    categories: phase.ops.map((o) => o.op),
    values: phase.ops.map((o) => o.share * 100),
    unit: "%",
    color: PALETTE[i % PALETTE.length],
  }));
}

const TAG_ORDER = ["Qcur", "Kcur", "Vcur", "kqv_out", "ffn_gate", "ffn_up", "ffn_down"];

export function matmulPanels(profile: Profile): BarPanel[] {
  return profile.matmul.map((phase, i) => {
    const tags = TAG_ORDER.filter((t) => t in phase.tags);
    return {
      title: `${phase.phase} matmul time by tag`,
      categories: tags,
      values: tags.map((t) => phase.tags[t] / 1e6),
      unit: "ms",
      color: PALETTE[(i + 2) % PALETTE.length],
    };
  });
}

export function drawBarPanels(surf: Surface, panels: BarPanel[], title: string): void {
  surf.text(surf.width / 2, 24, title, AXIS, 15, "middle");
  const top = 40;
  const panelH = (surf.height - top) / Math.max(panels.length, 1);
  panels.forEach((panel, pi) => {
    const m = { left: 64, right: 24, top: top + pi * panelH + 28, bottom: 34 };
    const plotW = surf.width - m.left - m.right;
    const plotH = panelH - 28 - m.bottom;
    surf.text(m.left, m.top - 8, panel.title, AXIS, 13);

    const vMax = niceMax(Math.max(0, ...panel.values) * 1.05);
    const yTo = (v: number) => m.top + plotH - (v / vMax) * plotH;
    for (let i = 0; i <= 4; i++) {
      const v = (vMax / 4) * i;
      surf.line(m.left, yTo(v), m.left + plotW, yTo(v), GRID);
      surf.text(m.left - 8, yTo(v) + 4, fmt(v), AXIS, 10, "end");
    }
    surf.line(m.left, m.top, m.left, m.top + plotH, AXIS);
    surf.line(m.left, m.top + plotH, m.left + plotW, m.top + plotH, AXIS);
    surf.text(14, m.top - 8, panel.unit, AXIS, 10);

    const n = panel.categories.length;
    const slot = plotW / Math.max(n, 1);
    const barW = Math.min(48, slot * 0.6);
    panel.values.forEach((v, i) => {
      const cx = m.left + slot * (i + 0.5);
      surf.rect(cx - barW / 2, yTo(v), barW, m.top + plotH - yTo(v), panel.color);
      surf.text(cx, yTo(v) - 4, fmt(v), AXIS, 10, "middle");
      surf.text(cx, m.top + plotH + 16, panel.categories[i], AXIS, 10, "middle");
    });
  });
}
