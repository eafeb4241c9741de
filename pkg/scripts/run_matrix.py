#!/usr/bin/env python3
"""Run the full routing-mode comparison matrix and persist summaries.

Standalone version of the acceptance training fixture, for calibration and
diagnosis: writes one JSON with every run's final CE, tail usage, and
capacity rates.

  python3 scripts/run_matrix.py --out /tmp/matrix.json [--steps 3000]
"""

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from helpers import run_training_job  # noqa: E402
from moelab.data import synthetic_corpus  # noqa: E402

MODES = ("dense", "tc", "tc_aux", "tc_lossfree", "ec", "et")


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    parser.add_argument("--steps", type=int, default=3000)
    parser.add_argument("--warmup", type=int, default=600)
    parser.add_argument("--beta", type=float, default=0.995)
    parser.add_argument("--seeds", type=int, nargs="*", default=[0, 1, 2])
    parser.add_argument("--corpus-seed", type=int, default=42)
    parser.add_argument("--words-per-domain", type=int, default=6000)
    parser.add_argument("--n-domains", type=int, default=4)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--modes", nargs="*", default=list(MODES))
    args = parser.parse_args()

    corpus_path = (
        Path("/tmp")
        / f"moelab_matrix_corpus_{args.corpus_seed}_{args.words_per_domain}_{args.n_domains}.txt"
    )
    if not corpus_path.exists():
        corpus_path.write_bytes(
            synthetic_corpus(
                1_300_000,
                seed=args.corpus_seed,
                words_per_domain=args.words_per_domain,
                n_domains=args.n_domains,
            )
        )

    jobs = []
    for mode in args.modes:
        for seed in args.seeds:
            plan = {
                "total_steps": args.steps,
                "eval_every": 1000,
                "et_warmup_steps": args.warmup,
                "ema_beta": args.beta,
                "seed": seed,
            }
            if args.alpha is not None:
                plan["alpha"] = args.alpha
            jobs.append(
                {
                    "model": {"routing_mode": mode, "dtype": "float32"},
                    "plan": plan,
                    "corpus_path": str(corpus_path),
                    "split_fraction": 0.1,
                    "warmup_cut": args.warmup,
                }
            )
    start = time.monotonic()
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        results = []
        for r in pool.map(run_training_job, jobs):
            r["f_tail"] = [float(x) for x in r["f_tail"]]
            print(
                f"{r['mode']:12s} s{r['seed']}  ce {r['final_ce']:.4f}  "
                f"f_tail [{min(r['f_tail']):.3f},{max(r['f_tail']):.3f}]  "
                f"sat {r['saturation_post_warmup']:.3f}  "
                f"starve {r['starvation_post_warmup']:.3f}",
                flush=True,
            )
            results.append(r)
    elapsed = time.monotonic() - start
    payload = {"elapsed_s": elapsed, "beta": args.beta, "warmup": args.warmup, "runs": results}
    Path(args.out).write_text(json.dumps(payload, indent=1))
    print(f"wall {elapsed / 60:.1f} min -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
