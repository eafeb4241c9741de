"""Synthetic score-stream routing simulation.

Feeds Gaussian router logits (optionally with per-expert mean offsets)
through any routing mode and records, per step and expert, the EMA cutoff,
the cutoff actually applied this pool, its deviation, and the realized
usage. This reproduces the cutoff-stability-versus-usage tradeoff series:
expert choice pins usage while its effective cutoff wanders; threshold
routing pins the cutoff while usage fluctuates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .balance import BiasState, bias_update, enforce_capacity, load_stats
from .errors import InvalidConfigError
from .routing import RoutingConfig, ec_route, et_route, tc_route
from .thresholds import ThresholdState, route_with_schedule

__all__ = ["SimConfig", "SimRecord", "route_sim", "write_sim_csv", "SIM_COLUMNS"]

SIM_COLUMNS = [
    "step",
    "expert",
    "ema_cutoff",
    "applied_cutoff",
    "cutoff_deviation",
    "usage",
    "kept_usage",
    "bias",
]


@dataclass(frozen=True)
class SimConfig:
    mode: str = "et"                 # tc | tc_lossfree | ec | et
    n_experts: int = 8
    granularity: int = 1
    expansion: int = 8
    pool_tokens: int = 1024
    steps: int = 200
    ema_beta: float = 0.99
    warmup_steps: int = 20
    capacity_factor: float = 0.5
    bias_update_rate: float = 0.005
    bias_mode: str = "sign"
    score_std: float = 1.0
    expert_offsets: tuple = ()       # per-expert mean shifts for skewed streams
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("tc", "tc_lossfree", "ec", "et"):
            raise InvalidConfigError(f"unsupported simulation mode {self.mode!r}")
        if self.n_experts != self.granularity * self.expansion:
            raise InvalidConfigError("n_experts must equal granularity * expansion")
        if self.pool_tokens < self.expansion:
            raise InvalidConfigError("pool_tokens must be at least expansion")
        if self.expert_offsets and len(self.expert_offsets) != self.n_experts:
            raise InvalidConfigError("expert_offsets length must match n_experts")


@dataclass
class SimRecord:
    step: int
    expert: int
    ema_cutoff: float
    applied_cutoff: float
    cutoff_deviation: float
    usage: float
    kept_usage: float
    bias: float


def _batch_kth(scores: np.ndarray, k: int) -> np.ndarray:
    n = scores.shape[0]
    return np.partition(scores, n - k, axis=0)[n - k, :]


def route_sim(cfg: SimConfig) -> list[SimRecord]:
    """Run the synthetic stream; returns one record per (step, expert)."""
    rng = np.random.default_rng(cfg.seed)
    offsets = (
        np.asarray(cfg.expert_offsets, dtype=np.float64)
        if cfg.expert_offsets
        else np.zeros(cfg.n_experts)
    )
    routing = RoutingConfig(
        granularity=cfg.granularity,
        expansion=cfg.expansion,
        capacity_factor=cfg.capacity_factor,
    )
    thresholds = ThresholdState.fresh(cfg.n_experts, cfg.ema_beta, cfg.warmup_steps)
    bias = BiasState.zeros(cfg.n_experts, cfg.bias_update_rate, cfg.bias_mode)
    k = cfg.pool_tokens // cfg.expansion

    records: list[SimRecord] = []
    for step in range(cfg.steps):
        scores = rng.normal(scale=cfg.score_std, size=(cfg.pool_tokens, cfg.n_experts))
        scores += offsets
        batch_cutoff = _batch_kth(scores, k)

        if cfg.mode == "tc":
            assignment = tc_route(scores, cfg.granularity)
            applied = np.full(cfg.n_experts, np.nan)
            ema = np.full(cfg.n_experts, np.nan)
        elif cfg.mode == "tc_lossfree":
            assignment = tc_route(scores, cfg.granularity, bias=bias.b)
            applied = np.full(cfg.n_experts, np.nan)
            ema = bias.b.copy()  # the controller state stands in for a cutoff
        else:
            in_warmup = thresholds.step < thresholds.warmup_steps
            ema_before = thresholds.c.copy() if thresholds.initialized else batch_cutoff
            if cfg.mode == "ec":
                # expert choice every step; the EMA still tracks the cutoffs
                # so the deviation series is measurable
                from .thresholds import ema_update

                assignment = ec_route(scores, cfg.expansion)
                thresholds = ema_update(thresholds, scores, cfg.expansion)
                applied = batch_cutoff
            else:
                assignment, thresholds = route_with_schedule(
                    thresholds, scores, routing, training=True
                )
                applied = batch_cutoff if in_warmup else ema_before
            ema = ema_before

        stats = load_stats(assignment, cfg.expansion)
        report = enforce_capacity(assignment, scores, cfg.expansion, cfg.capacity_factor)
        if cfg.mode == "tc_lossfree":
            bias = bias_update(bias, stats)

        for e in range(cfg.n_experts):
            records.append(
                SimRecord(
                    step=step,
                    expert=e,
                    ema_cutoff=float(ema[e]),
                    applied_cutoff=float(applied[e]),
                    cutoff_deviation=float(applied[e] - ema[e]),
                    usage=float(stats.usage[e]),
                    kept_usage=float(report.kept_counts[e] / cfg.pool_tokens),
                    bias=float(bias.b[e]) if cfg.mode == "tc_lossfree" else np.nan,
                )
            )
    return records


def write_sim_csv(records: list[SimRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SIM_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.step,
                    r.expert,
                    _num(r.ema_cutoff),
                    _num(r.applied_cutoff),
                    _num(r.cutoff_deviation),
                    _num(r.usage),
                    _num(r.kept_usage),
                    _num(r.bias),
                ]
            )
    return path


def _num(x: float) -> str:
    return "" if np.isnan(x) else f"{x:.8g}"
