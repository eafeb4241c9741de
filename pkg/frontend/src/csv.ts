import { readFileSync } from "fs";
import Papa from "papaparse";
import { InputSchema, Row } from "./schemas";

export class SchemaMismatchError extends Error {
  constructor(path: string, schema: InputSchema, actual: string[]) {
    const expected = schema.columns;
    const missing = expected.filter((c) => !actual.includes(c));
    const extra = actual.filter((c) => !expected.includes(c));
    const lines = [
      `${path} does not match the ${schema.role} schema`,
      `  expected columns: ${expected.join(", ")}`,
      `  found columns:    ${actual.join(", ")}`,
    ];
    if (missing.length) lines.push(`  missing: ${missing.join(", ")}`);
    if (extra.length) lines.push(`  unexpected: ${extra.join(", ")}`);
    super(lines.join("\n"));
    this.name = "SchemaMismatchError";
  }
}

export class EmptyTableError extends Error {
  constructor(path: string) {
    super(`${path} has a header but no data rows`);
    this.name = "EmptyTableError";
  }
}

/** Load a CSV and validate its header against the schema (exact order). */
export function loadTable(path: string, schema: InputSchema): Row[] {
  const text = readFileSync(path, "utf8");
  const parsed = Papa.parse<Row>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  const actual = parsed.meta.fields ?? [];
  const matches =
    actual.length === schema.columns.length &&
    schema.columns.every((c, i) => actual[i] === c);
  if (!matches) {
    throw new SchemaMismatchError(path, schema, actual);
  }
  if (!parsed.data.length) {
    throw new EmptyTableError(path);
  }
  return parsed.data;
}

export function num(row: Row, key: string): number {
  const v = row[key];
  return v === "" || v === undefined ? NaN : Number(v);
}

export function uniq(rows: Row[], key: string): string[] {
  return [...new Set(rows.map((r) => r[key]))];
}
