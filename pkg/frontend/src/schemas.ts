/**
 * CSV schemas for each plot kind, mirroring the tables the lab's `report`
 * command writes. Column order is part of the contract: a mismatch is a
 * hard error with a diff, never a guess.
 */

export interface InputSchema {
  /** file role, used in error messages ("loss curve table") */
  role: string;
  columns: string[];
}

export interface PlotKind {
  name: string;
  inputs: InputSchema[];
}

export const PLOT_KINDS: Record<string, PlotKind> = {
  "loss-curve": {
    name: "loss-curve",
    inputs: [{ role: "loss curve table", columns: ["run", "step", "split", "ce_loss"] }],
  },
  "cutoff-usage": {
    name: "cutoff-usage",
    inputs: [
      {
        role: "cutoff/usage table",
        columns: ["run", "step", "expert", "cutoff", "usage", "saturation", "starvation"],
      },
    ],
  },
  fanout: {
    name: "fanout",
    inputs: [
      { role: "fanout-by-position table", columns: ["run", "position", "mean_fanout", "n_tokens"] },
      {
        role: "fanout-by-loss table",
        columns: ["run", "layer", "bin", "mean_loss", "mean_fanout", "n_tokens"],
      },
    ],
  },
  heatmap: {
    name: "heatmap",
    inputs: [
      { role: "expert token ratio table", columns: ["run", "domain", "layer", "expert", "ratio"] },
    ],
  },
  consistency: {
    name: "consistency",
    inputs: [
      {
        role: "consistency table",
        columns: [
          "trace_a",
          "trace_b",
          "weighted_jaccard",
          "weighted_dice",
          "jaccard",
          "dice",
          "joint_jsd",
          "total_variation",
        ],
      },
    ],
  },
};

export type Row = Record<string, string>;
