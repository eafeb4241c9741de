"""Command-line entry points for the routing laboratory.

Subcommands:
  train            full training run from a JSON config
  route-sim        synthetic Gaussian-logit routing streams to CSV
  codec            dyadic cutoff encoding demos and leakage bound tables
  compare-traces   all consistency metrics for two trace files
  report           aggregate run directories into plot-ready CSV tables

Exit codes: 0 success, 1 validation/runtime failure, 2 usage errors.
Set MOELAB_LOG=debug|info|warning to control logging.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .codec import (
    DyadicCutoff,
    decode_pattern,
    encode_interval,
    leakage_bits_eq7,
    leakage_bits_lower,
    pick_cutoff,
)
from .errors import MoELabError
from .report import CONSISTENCY_COLUMNS, compare_traces_row, write_report

log = logging.getLogger("moelab")


def _setup_logging():
    level = os.environ.get("MOELAB_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moelab",
        description="Desk-scale MoE routing laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a full training job")
    p_train.add_argument("config", help="JSON run config")
    p_train.add_argument("--corpus", required=True, help="byte corpus file")
    p_train.add_argument("--out", required=True, help="run directory")
    p_train.add_argument("--split", type=float, default=0.1, help="eval fraction")
    p_train.add_argument("--seed", type=int, default=None, help="override plan seed")

    p_sim = sub.add_parser("route-sim", help="synthetic routing stream to CSV")
    p_sim.add_argument("config", help="JSON run config (sim section)")
    p_sim.add_argument("--out", required=True, help="output CSV path")
    p_sim.add_argument("--seed", type=int, default=None)

    p_codec = sub.add_parser("codec", help="cutoff codec demos and bounds")
    codec_sub = p_codec.add_subparsers(dest="codec_command", required=True)

    p_bounds = codec_sub.add_parser("bounds", help="leakage bound table")
    p_bounds.add_argument("--G", type=int, default=1, help="experts per token")
    p_bounds.add_argument("--E", type=int, default=8, help="expansion (1/sparsity)")
    p_bounds.add_argument("--layers", type=int, default=1)
    p_bounds.add_argument("--pools", type=int, nargs="*", default=None,
                          help="pool sizes N (default: multiples of E)")
    p_bounds.add_argument("--csv", default=None, help="also write the table as CSV")

    p_encode = codec_sub.add_parser("encode", help="encode a selection pattern")
    p_encode.add_argument("pattern", help="bit string, e.g. 1010")
    p_encode.add_argument("--csv", default=None)

    p_round = codec_sub.add_parser("roundtrip", help="random round-trip demo")
    p_round.add_argument("--length", type=int, default=16, help="pattern length")
    p_round.add_argument("--count", type=int, default=5)
    p_round.add_argument("--seed", type=int, default=0)
    p_round.add_argument("--csv", default=None)

    p_cmp = sub.add_parser("compare-traces", help="consistency metrics for two traces")
    p_cmp.add_argument("trace_a")
    p_cmp.add_argument("trace_b")
    p_cmp.add_argument("--out", default=None, help="write the row as CSV")

    p_rep = sub.add_parser("report", help="aggregate runs into plot CSVs")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--out", required=True)
    p_rep.add_argument("--loss-bins", type=int, default=8)
    return parser


def _cmd_train(args) -> int:
    from .config import load_run_config
    from .data import load_corpus
    from .trainer import train

    run_cfg = load_run_config(args.config, seed=args.seed)
    split = load_corpus(args.corpus, args.split)
    result = train(
        run_cfg.train,
        run_cfg.model,
        split.train,
        split.eval,
        run_dir=Path(args.out),
        stream_hash=split.eval_hash,
    )
    print(f"final eval ce {result.final_eval_loss:.4f}")
    print(f"log: {result.log_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_route_sim(args) -> int:
    from .config import load_run_config
    from .simulate import route_sim, write_sim_csv

    run_cfg = load_run_config(args.config, seed=args.seed)
    records = route_sim(run_cfg.sim)
    path = write_sim_csv(records, args.out)
    usage = np.mean([r.usage for r in records])
    print(f"{len(records)} records -> {path} (mean usage {usage:.4f})")
    return 0


def _print_table(headers: list[str], rows: list[list], csv_path=None) -> None:
    widths = [
        max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
        for i, h in enumerate(headers)
    ]
    print("  ".join(str(h).ljust(w) for h, w in zip(headers, widths)))
    for row in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(headers)
            writer.writerows(rows)
        print(f"csv: {csv_path}")


def _cmd_codec_bounds(args) -> int:
    pools = args.pools or [args.E * m for m in (16, 64, 256)]
    rows = []
    for n in pools:
        bound, closed = leakage_bits_eq7(n, args.G, args.E, args.layers)
        rows.append(
            [n, args.G, args.E, args.layers, f"{bound:.3f}", f"{closed:.3f}"]
        )
    headers = ["pool", "G", "E", "layers", "bits_per_token", "lower_bound"]
    _print_table(headers, rows, args.csv)
    closed = rows[0][5]
    print(f"closed-form lower bound: {closed} bits per token")
    return 0


def _cmd_codec_encode(args) -> int:
    bits = [int(ch) for ch in args.pattern if ch in "01"]
    if len(bits) != len(args.pattern):
        raise MoELabError("pattern must be a string of 0s and 1s")
    interval = encode_interval(bits)
    cutoff = pick_cutoff(interval)
    decoded, back = decode_pattern(cutoff, len(bits))
    rows = [[
        args.pattern,
        str(interval.lower),
        str(interval.upper),
        str(cutoff),
        "".join(map(str, decoded)),
        "ok" if decoded == bits else "MISMATCH",
    ]]
    _print_table(
        ["pattern", "lower", "upper", "cutoff", "decoded", "roundtrip"], rows, args.csv
    )
    return 0 if decoded == bits else 1


def _cmd_codec_roundtrip(args) -> int:
    rng = np.random.default_rng(args.seed)
    rows = []
    failures = 0
    for _ in range(args.count):
        bits = rng.integers(0, 2, size=args.length).tolist()
        cutoff = pick_cutoff(encode_interval(bits))
        decoded, _ = decode_pattern(cutoff, args.length)
        ok = decoded == bits
        failures += not ok
        rows.append(
            ["".join(map(str, bits)), str(cutoff), "ok" if ok else "MISMATCH"]
        )
    _print_table(["pattern", "cutoff", "roundtrip"], rows, args.csv)
    bound = leakage_bits_lower(args.length, args.length // 2)
    print(f"log2 C({args.length}, {args.length // 2}) = {bound:.3f} bits")
    return 1 if failures else 0


def _cmd_compare_traces(args) -> int:
    from .persist import read_trace

    a = read_trace(args.trace_a)
    b = read_trace(args.trace_b)
    row = compare_traces_row(a, b)
    rows = [[
        row["trace_a"],
        row["trace_b"],
        *(f"{row[c]:.6f}" for c in CONSISTENCY_COLUMNS[2:]),
    ]]
    _print_table(CONSISTENCY_COLUMNS, rows, args.out)
    return 0


def _cmd_report(args) -> int:
    paths = write_report(args.run_dirs, args.out, loss_bins=args.loss_bins)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "route-sim": _cmd_route_sim,
        "compare-traces": _cmd_compare_traces,
        "report": _cmd_report,
    }
    try:
        if args.command == "codec":
            codec_handlers = {
                "bounds": _cmd_codec_bounds,
                "encode": _cmd_codec_encode,
                "roundtrip": _cmd_codec_roundtrip,
            }
            return codec_handlers[args.codec_command](args)
        return handlers[args.command](args)
    except MoELabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
