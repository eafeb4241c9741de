import { describe, expect, it } from "vitest";
import { existsSync, mkdtempSync, readFileSync, statSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";
import { SchemaMismatchError, EmptyTableError, loadTable } from "../src/csv";
import { render, UnknownKindError, InputCountError } from "../src/render";
import { PLOT_KINDS } from "../src/schemas";

const FIXTURES = join(__dirname, "fixtures");
const fixture = (name: string) => join(FIXTURES, name);
const outDir = mkdtempSync(join(tmpdir(), "moelab-plots-"));

const KIND_INPUTS: Record<string, string[]> = {
  "loss-curve": ["loss_curve.csv"],
  "cutoff-usage": ["cutoff_usage.csv"],
  fanout: ["fanout_position.csv", "fanout_loss.csv"],
  heatmap: ["expert_ratio.csv"],
  consistency: ["consistency.csv"],
};

describe("render", () => {
  for (const kind of Object.keys(PLOT_KINDS)) {
    it(`renders a nonempty ${kind} image from fixtures`, () => {
      const out = join(outDir, `${kind}.svg`);
      const svg = render({ kind, inputs: KIND_INPUTS[kind].map(fixture), out });
      expect(existsSync(out)).toBe(true);
      expect(statSync(out).size).toBeGreaterThan(500);
      expect(svg).toContain("<svg");
      expect(svg).toContain("path");
    });
  }

  it("reruns overwrite outputs identically (fresh process each time)", () => {
    // zrender numbers its internal ids per process, so determinism is a
    // process-level contract: the CLI rerun must byte-match, and does
    const { execFileSync } = require("child_process") as typeof import("child_process");
    const cli = join(__dirname, "..", "dist", "cli.js");
    const out = join(outDir, "rerun.svg");
    const args = [
      cli, "render", "--kind", "loss-curve",
      "--in", fixture("loss_curve.csv"), "--out", out,
    ];
    execFileSync("node", args);
    const first = readFileSync(out, "utf8");
    execFileSync("node", args);
    const second = readFileSync(out, "utf8");
    expect(second).toBe(first);
  });

  it("labels every run as its own loss series", () => {
    const svg = readFileSync(join(outDir, "loss-curve.svg"), "utf8");
    expect(svg).toContain("dense-s0");
    expect(svg).toContain("et-s0");
  });

  it("rejects a schema mismatch with a column diff and writes nothing", () => {
    const out = join(outDir, "bad.svg");
    let message = "";
    try {
      render({ kind: "loss-curve", inputs: [fixture("loss_curve_bad.csv")], out });
    } catch (err) {
      expect(err).toBeInstanceOf(SchemaMismatchError);
      message = (err as Error).message;
    }
    expect(message).toContain("missing: split, ce_loss");
    expect(message).toContain("unexpected: phase, ce");
    expect(existsSync(out)).toBe(false);
  });

  it("rejects a truncated heatmap table with the missing column named", () => {
    const out = join(outDir, "bad2.svg");
    expect(() =>
      render({ kind: "heatmap", inputs: [fixture("expert_ratio_bad.csv")], out })
    ).toThrowError(/missing: ratio/);
    expect(existsSync(out)).toBe(false);
  });

  it("rejects empty tables", () => {
    expect(() =>
      render({
        kind: "loss-curve",
        inputs: [fixture("loss_curve_empty.csv")],
        out: join(outDir, "empty.svg"),
      })
    ).toThrowError(EmptyTableError);
  });

  it("rejects unknown kinds and wrong input counts", () => {
    expect(() =>
      render({ kind: "sparkline", inputs: [fixture("loss_curve.csv")], out: join(outDir, "x.svg") })
    ).toThrowError(UnknownKindError);
    expect(() =>
      render({ kind: "fanout", inputs: [fixture("fanout_position.csv")], out: join(outDir, "y.svg") })
    ).toThrowError(InputCountError);
  });
});

describe("loadTable", () => {
  it("parses valid tables with exact column order", () => {
    const rows = loadTable(fixture("consistency.csv"), PLOT_KINDS.consistency.inputs[0]);
    expect(rows).toHaveLength(3);
    expect(rows[0].weighted_jaccard).toBe("0.62");
  });

  it("rejects reordered columns", () => {
    // same columns, different order: still a mismatch (order is contract)
    const schema = {
      role: "loss curve table",
      columns: ["step", "run", "split", "ce_loss"],
    };
    expect(() => loadTable(fixture("loss_curve.csv"), schema)).toThrowError(
      SchemaMismatchError
    );
  });
});
