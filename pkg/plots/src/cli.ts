#!/usr/bin/env node
/**
 * mspde-plot: batch figure generation from the simulator's CSV outputs.
 *
 *   mspde-plot --in out/rates.csv --kind rate --out fig.png [--guides 0.5,0.25]
 *   mspde-plot --in out/trajectories.csv --kind trajectory --series slow --out traj.png
 *   mspde-plot --in out/sigma.csv --kind sigma-heatmap --out sigma.png
 *
 * Pure consumer of files: the Python library is never imported.  Identical
 * input renders to identical bytes (embedded font, no timestamps).
 * Alongside every figure a `<out>.json` sidecar records the annotated
 * slopes so downstream checks can compare against slopes.json numerically.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { parseRatesCsv, parseSigmaCsv, parseTrajectoriesCsv, SchemaError } from "./csv.js";
import { renderRateFigure, renderSigmaFigure, renderTrajectoryFigure, RenderResult } from "./charts.js";

export interface FigureSpec {
  input: string;
  kind: "rate" | "trajectory" | "sigma-heatmap";
  output: string;
  guideSlopes?: number[];
  series?: string;
}

export function render(spec: FigureSpec): RenderResult {
  const text = readFileSync(spec.input, "utf8");
  let result: RenderResult;
  if (spec.kind === "rate") {
    result = renderRateFigure(parseRatesCsv(spec.input, text).rows, spec.guideSlopes);
  } else if (spec.kind === "trajectory") {
    result = renderTrajectoryFigure(parseTrajectoriesCsv(spec.input, text).rows, spec.series ?? "slow");
  } else if (spec.kind === "sigma-heatmap") {
    result = renderSigmaFigure(parseSigmaCsv(spec.input, text).rows);
  } else {
    throw new Error(`unknown figure kind ${JSON.stringify(spec.kind)}`);
  }
  writeFileSync(spec.output, result.raster.png());
  writeFileSync(
    spec.output + ".json",
    JSON.stringify({ input: spec.input, kind: spec.kind, annotations: result.annotations }, null, 2) + "\n",
  );
  return result;
}

export function main(argv: string[]): number {
  let values;
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        in: { type: "string" },
        kind: { type: "string" },
        out: { type: "string" },
        guides: { type: "string" },
        series: { type: "string" },
      },
    }));
  } catch (err) {
    console.error(`argument error: ${(err as Error).message}`);
    return 2;
  }
  if (!values.in || !values.out || !values.kind) {
    console.error("usage: mspde-plot --in <csv> --kind rate|trajectory|sigma-heatmap --out fig.png");
    return 2;
  }
  if (!["rate", "trajectory", "sigma-heatmap"].includes(values.kind)) {
    console.error(`unknown kind ${JSON.stringify(values.kind)}`);
    return 2;
  }
  try {
    const result = render({
      input: values.in,
      kind: values.kind as FigureSpec["kind"],
      output: values.out,
      guideSlopes: values.guides
        ? values.guides.split(",").map((s) => Number(s.trim()))
        : undefined,
      series: values.series,
    });
    for (const a of result.annotations) {
      console.log(`${a.key}: slope=${a.slope.toFixed(3)} +- ${a.slopeSe.toFixed(3)}`);
    }
    console.log(`wrote ${values.out}`);
    return 0;
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`schema error: ${err.message}`);
    } else {
      console.error(`error: ${(err as Error).message}`);
    }
    return 1;
  }
}

const isMain = process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");
if (isMain) {
  process.exit(main(process.argv.slice(2)));
}
