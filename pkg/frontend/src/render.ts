import { writeFileSync, mkdirSync } from "fs";
import { dirname } from "path";
import * as echarts from "echarts";
import type { EChartsOption } from "echarts";
import { loadTable } from "./csv";
import { consistency, cutoffUsage, expertHeatmap, fanout, lossCurve } from "./charts";
import { PLOT_KINDS } from "./schemas";

export interface RenderRequest {
  kind: string;
  inputs: string[];
  out: string;
  title?: string;
  width?: number;
  height?: number;
}

export class UnknownKindError extends Error {
  constructor(kind: string) {
    super(`unknown plot kind "${kind}"; available: ${Object.keys(PLOT_KINDS).join(", ")}`);
    this.name = "UnknownKindError";
  }
}

export class InputCountError extends Error {
  constructor(kind: string, expected: number, got: number) {
    super(`kind "${kind}" needs ${expected} input CSV(s), got ${got}`);
    this.name = "InputCountError";
  }
}

function buildOption(req: RenderRequest): EChartsOption {
  const kind = PLOT_KINDS[req.kind];
  if (!kind) throw new UnknownKindError(req.kind);
  if (req.inputs.length !== kind.inputs.length) {
    throw new InputCountError(req.kind, kind.inputs.length, req.inputs.length);
  }
  const tables = req.inputs.map((path, i) => loadTable(path, kind.inputs[i]));
  const title = req.title ?? "";
  switch (req.kind) {
    case "loss-curve":
      return lossCurve(tables[0], title);
    case "cutoff-usage":
      return cutoffUsage(tables[0], title);
    case "fanout":
      return fanout(tables[0], tables[1], title);
    case "heatmap":
      return expertHeatmap(tables[0], title);
    case "consistency":
      return consistency(tables[0], title);
    default:
      throw new UnknownKindError(req.kind);
  }
}

/** Render one figure to an SVG file; inputs are validated before anything
 * is written, so a schema mismatch never leaves a partial image behind. */
export function render(req: RenderRequest): string {
  const option = buildOption(req);
  const chart = echarts.init(null, null, {
    renderer: "svg",
    ssr: true,
    width: req.width ?? 960,
    height: req.height ?? 560,
  });
  try {
    chart.setOption(option);
    const svg = chart.renderToSVGString();
    mkdirSync(dirname(req.out), { recursive: true });
    writeFileSync(req.out, svg);
    return svg;
  } finally {
    chart.dispose();
  }
}
