import type { EChartsOption, SeriesOption } from "echarts";
import { num, uniq } from "./csv";
import { Row } from "./schemas";

const BASE: EChartsOption = {
  animation: false,
  backgroundColor: "#ffffff",
  textStyle: { fontFamily: "sans-serif" },
};

/** Evaluation loss curves, one series per run. */
export function lossCurve(rows: Row[], title: string): EChartsOption {
  const evalRows = rows.filter((r) => r.split === "eval");
  const source = evalRows.length ? evalRows : rows;
  const runs = uniq(source, "run");
  const series: SeriesOption[] = runs.map((run) => ({
    name: run,
    type: "line",
    showSymbol: false,
    data: source
      .filter((r) => r.run === run)
      .map((r) => [num(r, "step"), num(r, "ce_loss")]),
  }));
  return {
    ...BASE,
    title: { text: title || "Evaluation loss" },
    legend: { top: 28 },
    grid: { top: 70, left: 60, right: 24, bottom: 45 },
    xAxis: { type: "value", name: "step" },
    yAxis: { type: "value", name: "CE loss (nats)", scale: true },
    series,
  };
}

/** Two stacked panels: per-expert cutoff trajectories and expert usage. */
export function cutoffUsage(rows: Row[], title: string): EChartsOption {
  const run = uniq(rows, "run")[0];
  const mine = rows.filter((r) => r.run === run);
  const experts = uniq(mine, "expert").sort((a, b) => Number(a) - Number(b));
  const cutoffSeries: SeriesOption[] = [];
  const usageSeries: SeriesOption[] = [];
  for (const expert of experts) {
    const sub = mine.filter((r) => r.expert === expert);
    cutoffSeries.push({
      name: `expert ${expert}`,
      type: "line",
      showSymbol: false,
      xAxisIndex: 0,
      yAxisIndex: 0,
      data: sub
        .filter((r) => !Number.isNaN(num(r, "cutoff")))
        .map((r) => [num(r, "step"), num(r, "cutoff")]),
    });
    usageSeries.push({
      name: `expert ${expert}`,
      type: "line",
      showSymbol: false,
      xAxisIndex: 1,
      yAxisIndex: 1,
      data: sub.map((r) => [num(r, "step"), num(r, "usage")]),
    });
  }
  return {
    ...BASE,
    title: { text: title || `Cutoff vs usage (${run})` },
    grid: [
      { top: 60, left: 60, right: 24, height: "32%" },
      { top: "58%", left: 60, right: 24, height: "32%" },
    ],
    xAxis: [
      { type: "value", gridIndex: 0, name: "step" },
      { type: "value", gridIndex: 1, name: "step" },
    ],
    yAxis: [
      { type: "value", gridIndex: 0, name: "cutoff", scale: true },
      { type: "value", gridIndex: 1, name: "load (f)", scale: true },
    ],
    series: [...cutoffSeries, ...usageSeries],
  };
}

/** Fanout by position (left) and by loss bin (right, layers faint + global). */
export function fanout(posRows: Row[], lossRows: Row[], title: string): EChartsOption {
  const runs = uniq(posRows, "run");
  const posSeries: SeriesOption[] = runs.map((run) => ({
    name: run,
    type: "line",
    showSymbol: false,
    xAxisIndex: 0,
    yAxisIndex: 0,
    data: posRows
      .filter((r) => r.run === run)
      .map((r) => [num(r, "position"), num(r, "mean_fanout")]),
  }));
  const run = uniq(lossRows, "run")[0];
  const mine = lossRows.filter((r) => r.run === run);
  const layers = uniq(mine, "layer").filter((l) => l !== "global");
  const lossSeries: SeriesOption[] = layers.map((layer) => ({
    name: `layer ${layer}`,
    type: "line",
    showSymbol: false,
    xAxisIndex: 1,
    yAxisIndex: 1,
    lineStyle: { type: "dashed", width: 1, opacity: 0.45, color: "#888" },
    data: mine
      .filter((r) => r.layer === layer)
      .map((r) => [num(r, "mean_loss"), num(r, "mean_fanout")]),
  }));
  lossSeries.push({
    name: "global",
    type: "line",
    showSymbol: false,
    xAxisIndex: 1,
    yAxisIndex: 1,
    lineStyle: { width: 2.5, color: "#d62728" },
    itemStyle: { color: "#d62728" },
    data: mine
      .filter((r) => r.layer === "global")
      .map((r) => [num(r, "mean_loss"), num(r, "mean_fanout")]),
  });
  return {
    ...BASE,
    title: { text: title || "Activation dynamics" },
    legend: { top: 28 },
    grid: [
      { top: 70, left: 60, width: "38%", bottom: 45 },
      { top: 70, left: "56%", right: 24, bottom: 45 },
    ],
    xAxis: [
      { type: "value", gridIndex: 0, name: "position" },
      { type: "value", gridIndex: 1, name: "token loss (bin mean)" },
    ],
    yAxis: [
      { type: "value", gridIndex: 0, name: "mean fanout" },
      { type: "value", gridIndex: 1, name: "mean fanout" },
    ],
    series: [...posSeries, ...lossSeries],
  };
}

/** Expert-token-ratio heatmaps, one panel per domain (layers x experts). */
export function expertHeatmap(rows: Row[], title: string): EChartsOption {
  const run = uniq(rows, "run")[0];
  const mine = rows.filter((r) => r.run === run);
  const domains = uniq(mine, "domain").sort();
  const experts = uniq(mine, "expert")
    .map(Number)
    .sort((a, b) => a - b);
  const layers = uniq(mine, "layer")
    .map(Number)
    .sort((a, b) => a - b);
  const maxRatio = Math.max(...mine.map((r) => num(r, "ratio")), 1e-9);

  const grids: any[] = [];
  const xAxes: any[] = [];
  const yAxes: any[] = [];
  const series: SeriesOption[] = [];
  const panelWidth = Math.floor(86 / domains.length);
  domains.forEach((domain, i) => {
    grids.push({
      top: 70,
      left: `${6 + i * (panelWidth + 3)}%`,
      width: `${panelWidth}%`,
      bottom: 60,
    });
    xAxes.push({
      type: "category",
      gridIndex: i,
      name: i === 0 ? "expert" : domain,
      data: experts.map(String),
    });
    yAxes.push({
      type: "category",
      gridIndex: i,
      name: i === 0 ? "layer" : "",
      data: layers.map(String),
    });
    series.push({
      name: domain,
      type: "heatmap",
      xAxisIndex: i,
      yAxisIndex: i,
      data: mine
        .filter((r) => r.domain === domain)
        .map((r) => [
          experts.indexOf(Number(r.expert)),
          layers.indexOf(Number(r.layer)),
          num(r, "ratio"),
        ]),
      label: { show: false },
    });
  });
  return {
    ...BASE,
    title: { text: title || `Expert token ratio (${run}): ${domains.join(" / ")}` },
    grid: grids,
    xAxis: xAxes,
    yAxis: yAxes,
    visualMap: {
      min: 0,
      max: maxRatio,
      calculable: false,
      orient: "horizontal",
      left: "center",
      bottom: 8,
      inRange: { color: ["#f7fbff", "#6baed6", "#08306b"] },
    },
    series,
  };
}

/** Checkpoint-pair consistency strip (weighted Jaccard matrix). */
export function consistency(rows: Row[], title: string): EChartsOption {
  const labels = [...new Set(rows.flatMap((r) => [r.trace_a, r.trace_b]))];
  const index = new Map(labels.map((l, i) => [l, i]));
  const cells: [number, number, number][] = [];
  for (const r of rows) {
    const a = index.get(r.trace_a)!;
    const b = index.get(r.trace_b)!;
    const v = num(r, "weighted_jaccard");
    cells.push([a, b, v]);
    if (a !== b) cells.push([b, a, v]);
  }
  for (const l of labels) {
    const i = index.get(l)!;
    cells.push([i, i, 1.0]);
  }
  return {
    ...BASE,
    title: { text: title || "Routing consistency (weighted Jaccard)" },
    grid: { top: 70, left: 140, right: 80, bottom: 80 },
    xAxis: { type: "category", data: labels, axisLabel: { rotate: 35 } },
    yAxis: { type: "category", data: labels },
    visualMap: {
      min: 0,
      max: 1,
      orient: "vertical",
      right: 8,
      top: "center",
      inRange: { color: ["#fff5f0", "#fb6a4a", "#67000d"] },
    },
    series: [
      {
        type: "heatmap",
        data: cells,
        label: { show: labels.length <= 8, formatter: (p: any) => p.value[2].toFixed(2) },
      },
    ],
  };
}
