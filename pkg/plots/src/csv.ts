/**
 * Readers for the simulator's output files.
 *
 * Every file starts with a `# mspde <version> config=<hash> ...` comment
 * line followed by the column header; schema violations raise with the
 * offending line number.
 */

export class SchemaError extends Error {
  constructor(file: string, line: number, message: string) {
    super(`${file}:${line}: ${message}`);
    this.name = "SchemaError";
  }
}

export interface RateRow {
  experiment: string;
  epsilon: number;
  gamma: number;
  q: number;
  error: number;
  stderr: number;
  n: number;
  paths: number;
  seed: number;
}

export interface TrajectoryRow {
  time: number;
  mode: number;
  value: number;
  series: string;
}

export interface SigmaRow {
  i: number;
  j: number;
  sigma: number;
  stderr: number;
}

export interface ParsedFile<Row> {
  meta: string;
  rows: Row[];
}

const RATE_COLUMNS = ["experiment", "epsilon", "gamma", "q", "error", "stderr", "n", "paths", "seed"];
const TRAJECTORY_COLUMNS = ["time", "mode", "value", "series"];
const SIGMA_COLUMNS = ["i", "j", "sigma", "stderr"];

function splitContent(file: string, text: string): { meta: string; header: string[]; body: [number, string][] } {
  const lines = text.split(/\r?\n/);
  let idx = 0;
  let meta = "";
  if (lines[idx]?.startsWith("#")) {
    meta = lines[idx];
    idx++;
  }
  const headerLine = lines[idx];
  if (headerLine === undefined || headerLine.trim() === "") {
    throw new SchemaError(file, idx + 1, "missing column header");
  }
  const header = headerLine.split(",").map((s) => s.trim());
  const body: [number, string][] = [];
  for (let i = idx + 1; i < lines.length; i++) {
    if (lines[i].trim() !== "") body.push([i + 1, lines[i]]);
  }
  return { meta, header, body };
}

function num(file: string, line: number, field: string, raw: string): number {
  const v = Number(raw);
  if (raw.trim() === "" || Number.isNaN(v)) {
    throw new SchemaError(file, line, `field ${field}: not a number: ${JSON.stringify(raw)}`);
  }
  return v;
}

function checkColumns(file: string, header: string[], expected: string[]): void {
  if (header.length !== expected.length || expected.some((c, i) => header[i] !== c)) {
    throw new SchemaError(file, 2, `expected columns ${expected.join(",")}, got ${header.join(",")}`);
  }
}

export function parseRatesCsv(file: string, text: string): ParsedFile<RateRow> {
  const { meta, header, body } = splitContent(file, text);
  checkColumns(file, header, RATE_COLUMNS);
  const rows = body.map(([lineno, line]) => {
    const parts = line.split(",");
    if (parts.length !== RATE_COLUMNS.length) {
      throw new SchemaError(file, lineno, `expected ${RATE_COLUMNS.length} fields, got ${parts.length}`);
    }
    return {
      experiment: parts[0],
      epsilon: num(file, lineno, "epsilon", parts[1]),
      gamma: num(file, lineno, "gamma", parts[2]),
      q: num(file, lineno, "q", parts[3]),
      error: num(file, lineno, "error", parts[4]),
      stderr: num(file, lineno, "stderr", parts[5]),
      n: num(file, lineno, "n", parts[6]),
      paths: num(file, lineno, "paths", parts[7]),
      seed: num(file, lineno, "seed", parts[8]),
    };
  });
  if (rows.length === 0) {
    throw new SchemaError(file, 3, "no data rows");
  }
  return { meta, rows };
}

export function parseTrajectoriesCsv(file: string, text: string): ParsedFile<TrajectoryRow> {
  const { meta, header, body } = splitContent(file, text);
  checkColumns(file, header, TRAJECTORY_COLUMNS);
  const rows = body.map(([lineno, line]) => {
    const parts = line.split(",");
    if (parts.length !== TRAJECTORY_COLUMNS.length) {
      throw new SchemaError(file, lineno, `expected ${TRAJECTORY_COLUMNS.length} fields, got ${parts.length}`);
    }
    return {
      time: num(file, lineno, "time", parts[0]),
      mode: num(file, lineno, "mode", parts[1]),
      value: num(file, lineno, "value", parts[2]),
      series: parts[3].trim(),
    };
  });
  if (rows.length === 0) {
    throw new SchemaError(file, 3, "no data rows");
  }
  return { meta, rows };
}

export function parseSigmaCsv(file: string, text: string): ParsedFile<SigmaRow> {
  const { meta, header, body } = splitContent(file, text);
  checkColumns(file, header, SIGMA_COLUMNS);
  const rows = body.map(([lineno, line]) => {
    const parts = line.split(",");
    if (parts.length !== SIGMA_COLUMNS.length) {
      throw new SchemaError(file, lineno, `expected ${SIGMA_COLUMNS.length} fields, got ${parts.length}`);
    }
    return {
      i: num(file, lineno, "i", parts[0]),
      j: num(file, lineno, "j", parts[1]),
      sigma: num(file, lineno, "sigma", parts[2]),
      stderr: num(file, lineno, "stderr", parts[3]),
    };
  });
  if (rows.length === 0) {
    throw new SchemaError(file, 3, "no data rows");
  }
  return { meta, rows };
}
