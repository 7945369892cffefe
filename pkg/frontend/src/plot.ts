/**
 * CLI: render wavellm benchmark results and profiles into chart images.
 *
 *   plot.js backend   --csv results.csv --out fig.png [--format png|svg]
 *                     [--width N] [--height N]
 *   plot.js breakdown --profile profile.json --out-prefix figs/
 *                     [--format png|svg]
 *
 * Exit codes: 0 ok, 1 schema or I/O failure (with a column diagnostic),
 * 2 usage error.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";

import {
  benchSeries,
  drawBarPanels,
  drawThreadScaling,
  matmulPanels,
  opPanels,
} from "./charts.js";
import { groupCells, loadBenchCsv, loadProfileJson, SchemaError } from "./data.js";
import { makeSurface } from "./surface.js";

const USAGE = `usage:
  plot.js backend   --csv results.csv --out fig.png [--format png|svg] [--width N] [--height N]
  plot.js breakdown --profile profile.json --out-prefix figs/ [--format png|svg]`;

type Flags = Record<string, string>;

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) throw new UsageError(`unexpected argument ${arg}`);
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new UsageError(`flag ${arg} needs a value`);
    }
    flags[arg.slice(2)] = value;
    i++;
  }
  return flags;
}

class UsageError extends Error {}

function pickFormat(flags: Flags, outPath?: string): "png" | "svg" {
  const explicit = flags["format"];
  if (explicit) {
    if (explicit !== "png" && explicit !== "svg") {
      throw new UsageError(`unknown format ${explicit}; use png or svg`);
    }
    return explicit;
  }
  if (outPath && outPath.toLowerCase().endsWith(".svg")) return "svg";
  return "png";
}

function writeOut(path: string, data: Buffer): void {
  const dir = dirname(path);
  if (dir && dir !== ".") mkdirSync(dir, { recursive: true });
  writeFileSync(path, data);
}

function cmdBackend(flags: Flags): number {
  const csvPath = flags["csv"];
  const outPath = flags["out"];
  if (!csvPath || !outPath) throw new UsageError("backend needs --csv and --out");
  const format = pickFormat(flags, outPath);
  const width = Number(flags["width"] ?? 860);
  const height = Number(flags["height"] ?? 520);
  const rows = loadBenchCsv(csvPath);
  const { series, threads } = benchSeries(groupCells(rows));
  const preset = rows[0]?.preset ?? "";
  const surf = makeSurface(format, width, height);
  drawThreadScaling(surf, series, threads, `decode throughput: ${preset || "no data"}`);
  writeOut(outPath, surf.finish());
  console.log(`wrote ${outPath}`);
  return 0;
}

function cmdBreakdown(flags: Flags): number {
  const profilePath = flags["profile"];
  const prefix = flags["out-prefix"];
  if (!profilePath || !prefix) throw new UsageError("breakdown needs --profile and --out-prefix");
  const format = pickFormat(flags);
  const profile = loadProfileJson(profilePath);
  if (!profile.phases.some((p) => p.phase === "decode")) {
    console.warn("warning: profile has no decode phase; rendering prefill only");
  }

  const ops = makeSurface(format, 860, 240 + 260 * profile.phases.length);
  drawBarPanels(ops, opPanels(profile), "time share per op kind");
  const opsPath = `${prefix}ops.${format}`;
  writeOut(opsPath, ops.finish());

  const mm = makeSurface(format, 860, 240 + 260 * Math.max(profile.matmul.length, 1));
  drawBarPanels(mm, matmulPanels(profile), "weight matmul time by tag");
  const mmPath = `${prefix}matmul.${format}`;
  writeOut(mmPath, mm.finish());
  console.log(`wrote ${opsPath} and ${mmPath}`);
  return 0;
}

export function runCli(argv: string[]): number {
  try {
    const [command, ...rest] = argv;
    if (command === "backend") return cmdBackend(parseFlags(rest));
    if (command === "breakdown") return cmdBreakdown(parseFlags(rest));
    throw new UsageError(command ? `unknown command ${command}` : "no command given");
  } catch (err) {
    if (err instanceof UsageError) {
      console.error(`error: ${err.message}\n${USAGE}`);
      return 2;
    }
    if (err instanceof SchemaError) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    if ((err as NodeJS.ErrnoException).code === "ENOENT") {
      console.error(`error: ${(err as Error).message}`);
      return 1;
    }
    throw err;
  }
}

const isMain =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split("/").pop()!);
if (isMain) {
  process.exit(runCli(process.argv.slice(2)));
}
