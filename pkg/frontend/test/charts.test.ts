import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync, existsSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { inflateSync } from "node:zlib";

import { describe, expect, it, vi } from "vitest";

import { benchSeries, matmulPanels, opPanels } from "../src/charts.js";
import { groupCells, parseBenchCsv, SchemaError } from "../src/data.js";
import { encodePng, RasterSurface, SvgSurface } from "../src/surface.js";
import { runCli } from "../src/plot.js";

const HEADER = "preset,scheduler,threads,dtype,run,prefill_tps,decode_tps,peak_rss_bytes,status";

const OK_CSV = [
  HEADER,
  "toy,seq,1,f16,1,20.0,100.0,1000,ok",
  "toy,seq,1,f16,2,21.0,110.0,1000,ok",
  "toy,seq,2,f16,1,22.0,140.0,1000,ok",
  "toy,seq,2,f16,2,23.0,150.0,1000,ok",
  "toy,graph,1,q4,1,24.0,180.0,1000,ok",
  "toy,graph,2,q4,1,,,1000,timeout",
  "toy,graph,4,q4,1,26.0,260.0,1000,ok",
].join("\n");

const TIMEOUT_CSV = [
  HEADER,
  "toy,seq,1,f16,1,,,1000,timeout",
  "toy,seq,2,f16,1,,,1000,timeout",
].join("\n");

const PROFILE = {
  phases: [
    {
      phase: "prefill",
      total_ns: 1000,
      ops: [
        { op: "MulMat", ns: 876, calls: 30, share: 0.876 },
        { op: "RmsNorm", ns: 84, calls: 9, share: 0.084 },
        { op: "Rope", ns: 40, calls: 8, share: 0.04 },
      ],
    },
    {
      phase: "decode",
      total_ns: 500,
      ops: [
        { op: "MulMat", ns: 381, calls: 30, share: 0.762 },
        { op: "SoftmaxCausal", ns: 119, calls: 4, share: 0.238 },
      ],
    },
  ],
  matmul: [
    { phase: "prefill", tags: { Qcur: 1e6, Kcur: 5e5, Vcur: 5e5, kqv_out: 1e6, ffn_gate: 3e6, ffn_up: 3e6, ffn_down: 3e6 } },
    { phase: "decode", tags: { Qcur: 2e5, Kcur: 1e5, Vcur: 1e5, kqv_out: 2e5, ffn_gate: 9e5, ffn_up: 9e5, ffn_down: 9e5 } },
  ],
};

function tmp(): string {
  return mkdtempSync(join(tmpdir(), "wavellm-charts-"));
}

function pngDims(buf: Buffer): { width: number; height: number } {
  expect(buf.subarray(0, 8)).toEqual(Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]));
  expect(buf.subarray(12, 16).toString("ascii")).toBe("IHDR");
  return { width: buf.readUInt32BE(16), height: buf.readUInt32BE(20) };
}

describe("bench csv parsing", () => {
  it("groups cells and keeps failed cells as gaps", () => {
    const cells = groupCells(parseBenchCsv(OK_CSV));
    const seq1 = cells.find((c) => c.scheduler === "seq" && c.threads === 1)!;
    expect(seq1.meanDecodeTps).toBeCloseTo(105.0);
    const gap = cells.find((c) => c.scheduler === "graph" && c.threads === 2)!;
    expect(gap.meanDecodeTps).toBeNull();
  });

  it("names missing columns", () => {
    const broken = OK_CSV.replace("decode_tps", "decode");
    expect(() => parseBenchCsv(broken)).toThrowError(/decode_tps/);
    expect(() => parseBenchCsv(broken)).toThrowError(SchemaError);
  });

  it("builds one series per scheduler/dtype with gap points", () => {
    const { series, threads } = benchSeries(groupCells(parseBenchCsv(OK_CSV)));
    expect(threads).toEqual([1, 2, 4]);
    expect(series.map((s) => s.label)).toEqual(["graph/q4", "seq/f16"]);
    const graph = series[0];
    expect(graph.points.map((p) => p.y)).toEqual([180.0, null, 260.0]);
  });
});

describe("surfaces", () => {
  it("encodes a valid png with the declared dimensions", () => {
    const raster = new RasterSurface(64, 32);
    raster.rect(4, 4, 10, 10, "#ff0000");
    raster.text(6, 24, "A1%", "#000000");
    const buf = raster.finish();
    expect(pngDims(buf)).toEqual({ width: 64, height: 32 });
    const rowBytes = 64 * 4 + 1;
    const idatLen = buf.readUInt32BE(33);
    const idat = buf.subarray(41, 41 + idatLen);
    expect(inflateSync(idat).length).toBe(rowBytes * 32);
  });

  it("produces well-formed svg", () => {
    const svg = new SvgSurface(100, 50);
    svg.polyline([[0, 0], [10, 10]], "#00ff00");
    svg.text(5, 20, "x < y & z", "#000");
    const text = svg.finish().toString("utf8");
    expect(text).toMatch(/^<svg /);
    expect(text.trim().endsWith("</svg>")).toBe(true);
    expect(text).toContain("&lt;");
    expect(text).not.toContain("x < y");
  });
});

describe("breakdown models", () => {
  it("op shares displayed sum to 100% per phase", () => {
    const panels = opPanels(PROFILE as never);
    for (const panel of panels) {
      const total = panel.values.reduce((a, b) => a + b, 0);
      expect(Math.abs(total - 100)).toBeLessThan(0.1);
    }
  });

  it("matmul panels keep the seven tags in canonical order", () => {
    const panels = matmulPanels(PROFILE as never);
    expect(panels[0].categories).toEqual(
      ["Qcur", "Kcur", "Vcur", "kqv_out", "ffn_gate", "ffn_up", "ffn_down"],
    );
  });
});

describe("cli", () => {
  it("renders png and svg from a results csv", () => {
    const dir = tmp();
    const csv = join(dir, "results.csv");
    writeFileSync(csv, OK_CSV);
    const png = join(dir, "fig.png");
    expect(runCli(["backend", "--csv", csv, "--out", png])).toBe(0);
    const dims = pngDims(readFileSync(png));
    expect(dims).toEqual({ width: 860, height: 520 });
    const svgPath = join(dir, "fig.svg");
    expect(runCli(["backend", "--csv", csv, "--out", svgPath])).toBe(0);
    expect(readFileSync(svgPath, "utf8")).toContain("<polyline");
  });

  it("renders empty axes from a timeout-only csv and exits 0", () => {
    const dir = tmp();
    const csv = join(dir, "t.csv");
    writeFileSync(csv, TIMEOUT_CSV);
    const out = join(dir, "fig.svg");
    expect(runCli(["backend", "--csv", csv, "--out", out])).toBe(0);
    const text = readFileSync(out, "utf8");
    expect(text).toContain("<svg");
    expect(text).not.toContain("<polyline"); // no drawable points
  });

  it("exits 1 naming the missing column", () => {
    const dir = tmp();
    const csv = join(dir, "broken.csv");
    writeFileSync(csv, OK_CSV.replace("prefill_tps", "prefill"));
    const errors = vi.spyOn(console, "error").mockImplementation(() => {});
    try {
      expect(runCli(["backend", "--csv", csv, "--out", join(dir, "x.png")])).toBe(1);
      expect(errors.mock.calls.flat().join(" ")).toContain("prefill_tps");
    } finally {
      errors.mockRestore();
    }
  });

  it("writes exactly two breakdown files", () => {
    const dir = tmp();
    const profile = join(dir, "profile.json");
    writeFileSync(profile, JSON.stringify(PROFILE));
    const prefix = join(dir, "figs") + "/";
    expect(runCli(["breakdown", "--profile", profile, "--out-prefix", prefix])).toBe(0);
    expect(existsSync(join(dir, "figs", "ops.png"))).toBe(true);
    expect(existsSync(join(dir, "figs", "matmul.png"))).toBe(true);
  });

  it("warns and renders prefill-only when decode is absent", () => {
    const dir = tmp();
    const partial = {
      phases: [PROFILE.phases[0]],
      matmul: [PROFILE.matmul[0]],
    };
    const profile = join(dir, "profile.json");
    writeFileSync(profile, JSON.stringify(partial));
    const warns = vi.spyOn(console, "warn").mockImplementation(() => {});
    try {
      expect(runCli(["breakdown", "--profile", profile, "--out-prefix", join(dir, "p-"),
                     "--format", "svg"])).toBe(0);
      expect(warns.mock.calls.flat().join(" ")).toMatch(/no decode phase/);
    } finally {
      warns.mockRestore();
    }
    const ops = readFileSync(join(dir, "p-ops.svg"), "utf8");
    expect(ops).toContain("prefill");
    expect(ops).not.toContain("decode op");
  });

  it("exits 1 on malformed json", () => {
    const dir = tmp();
    const profile = join(dir, "profile.json");
    writeFileSync(profile, "{not json");
    const errors = vi.spyOn(console, "error").mockImplementation(() => {});
    try {
      expect(runCli(["breakdown", "--profile", profile, "--out-prefix", join(dir, "x-")])).toBe(1);
    } finally {
      errors.mockRestore();
    }
  });

  it("exits 2 on usage errors", () => {
    const errors = vi.spyOn(console, "error").mockImplementation(() => {});
    try {
      expect(runCli([])).toBe(2);
      expect(runCli(["backend"])).toBe(2);
      expect(runCli(["backend", "--csv", "x.csv", "--out", "y.gif", "--format", "gif"])).toBe(2);
      expect(runCli(["explode"])).toBe(2);
    } finally {
      errors.mockRestore();
    }
  });

  it("runs as a built executable", () => {
    const dir = tmp();
    const csv = join(dir, "results.csv");
    writeFileSync(csv, OK_CSV);
    const out = join(dir, "cli.png");
    execFileSync("node", ["dist/plot.js", "backend", "--csv", csv, "--out", out]);
    expect(existsSync(out)).toBe(true);
  });
});
