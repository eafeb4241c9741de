"""Aggregate run outputs into the CSV tables the plot frontend consumes.

One call per run directory (or several, for cross-run loss curves). Every
table has a fixed header documented here; the renderer validates against
these schemas and nothing else couples the two components.
"""

from __future__ import annotations

import csv
import itertools
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .metrics import (
    expert_token_ratio,
    fanout_stats,
    token_divergence,
    token_overlap,
    weighted_dice,
    weighted_jaccard,
)
from .persist import read_log, read_trace

__all__ = [
    "LOSS_CURVE_COLUMNS",
    "CUTOFF_USAGE_COLUMNS",
    "FANOUT_POSITION_COLUMNS",
    "FANOUT_LOSS_COLUMNS",
    "EXPERT_RATIO_COLUMNS",
    "CONSISTENCY_COLUMNS",
    "compare_traces_row",
    "write_report",
]

LOSS_CURVE_COLUMNS = ["run", "step", "split", "ce_loss"]
CUTOFF_USAGE_COLUMNS = ["run", "step", "expert", "cutoff", "usage", "saturation", "starvation"]
FANOUT_POSITION_COLUMNS = ["run", "position", "mean_fanout", "n_tokens"]
FANOUT_LOSS_COLUMNS = ["run", "layer", "bin", "mean_loss", "mean_fanout", "n_tokens"]
EXPERT_RATIO_COLUMNS = ["run", "domain", "layer", "expert", "ratio"]
CONSISTENCY_COLUMNS = [
    "trace_a",
    "trace_b",
    "weighted_jaccard",
    "weighted_dice",
    "jaccard",
    "dice",
    "joint_jsd",
    "total_variation",
]


def compare_traces_row(a, b) -> dict:
    """All pairwise consistency metrics for two loaded traces."""
    wj = weighted_jaccard(a, b)
    wd = weighted_dice(a, b)
    j, d = token_overlap(a, b)
    jsd, tv = token_divergence(a, b)
    return {
        "trace_a": a.label,
        "trace_b": b.label,
        "weighted_jaccard": wj,
        "weighted_dice": wd,
        "jaccard": j,
        "dice": d,
        "joint_jsd": jsd,
        "total_variation": tv,
    }


def _write_csv(path: Path, columns: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)


def _fmt(x) -> str:
    x = float(x)
    return "" if np.isnan(x) else f"{x:.8g}"


def write_report(run_dirs: list, out_dir, loss_bins: int = 8) -> dict:
    """Build the standard report tables from one or more run directories.

    Returns {table name: path}. Expects each run dir to hold log.csv and a
    traces/ directory as written by the trainer.
    """
    out = Path(out_dir)
    run_dirs = [Path(r) for r in run_dirs]
    for r in run_dirs:
        if not (r / "log.csv").exists():
            raise InvalidInputError(f"{r} has no log.csv")

    loss_rows = []
    cutoff_rows = []
    for r in run_dirs:
        for row in read_log(r / "log.csv"):
            loss_rows.append([r.name, row["step"], row["split"], _fmt(row["ce_loss"])])
            if row["split"] != "train":
                continue
            experts = sorted(
                int(k[2:]) for k in row if k.startswith("f_") and k[2:].isdigit()
            )
            for e in experts:
                cutoff_rows.append(
                    [
                        r.name,
                        row["step"],
                        e,
                        _fmt(row.get(f"c_{e}", float("nan"))),
                        _fmt(row.get(f"f_{e}", float("nan"))),
                        _fmt(row["saturation"]),
                        _fmt(row["starvation"]),
                    ]
                )

    fanout_pos_rows = []
    fanout_loss_rows = []
    ratio_rows = []
    latest_traces = {}
    for r in run_dirs:
        trace_files = sorted((r / "traces").glob("*.jsonl"))
        if not trace_files:
            continue
        trace = read_trace(trace_files[-1])
        latest_traces[r.name] = trace
        pos, bins = fanout_stats(trace, loss_bins)
        for p, mf, n in zip(pos.positions, pos.mean_fanout, pos.counts):
            fanout_pos_rows.append([r.name, int(p), _fmt(mf), int(n)])
        for b in range(len(bins.counts)):
            fanout_loss_rows.append(
                [r.name, "global", b, _fmt(bins.mean_loss[b]), _fmt(bins.global_mean_fanout[b]), int(bins.counts[b])]
            )
            for layer in range(trace.n_layers):
                fanout_loss_rows.append(
                    [
                        r.name,
                        str(layer),
                        b,
                        _fmt(bins.mean_loss[b]),
                        _fmt(bins.per_layer_mean_fanout[layer, b]),
                        int(bins.counts[b]),
                    ]
                )
        for domain in sorted(set(trace.domains)):
            ratios = expert_token_ratio(trace, domain)
            for layer in range(trace.n_layers):
                for e in range(trace.n_experts):
                    ratio_rows.append([r.name, domain, layer, e, _fmt(ratios[layer, e])])

    consistency_rows = []
    for r in run_dirs:
        trace_files = sorted((r / "traces").glob("*.jsonl"))
        traces = [read_trace(t) for t in trace_files]
        for a, b in itertools.combinations(traces, 2):
            row = compare_traces_row(a, b)
            consistency_rows.append([row[c] if isinstance(row[c], str) else _fmt(row[c]) for c in CONSISTENCY_COLUMNS])
    names = sorted(latest_traces)
    for a, b in itertools.combinations(names, 2):
        ta, tb = latest_traces[a], latest_traces[b]
        if ta.stream_hash == tb.stream_hash and ta.n_tokens == tb.n_tokens:
            row = compare_traces_row(ta, tb)
            consistency_rows.append([row[c] if isinstance(row[c], str) else _fmt(row[c]) for c in CONSISTENCY_COLUMNS])

    paths = {}
    tables = [
        ("loss_curve", LOSS_CURVE_COLUMNS, loss_rows),
        ("cutoff_usage", CUTOFF_USAGE_COLUMNS, cutoff_rows),
        ("fanout_position", FANOUT_POSITION_COLUMNS, fanout_pos_rows),
        ("fanout_loss", FANOUT_LOSS_COLUMNS, fanout_loss_rows),
        ("expert_ratio", EXPERT_RATIO_COLUMNS, ratio_rows),
        ("consistency", CONSISTENCY_COLUMNS, consistency_rows),
    ]
    for name, columns, rows in tables:
        path = out / f"{name}.csv"
        _write_csv(path, columns, rows)
        paths[name] = path
    return paths
