"""AdamW training loop for the micro model, with per-group learning rates,
linear-decay schedule, balance controllers, CSV logging, and trace dumps.

Parameter groups follow the embed : matrix : head ratio 10 : 1 : 0.2 on the
configured matrix-group peak, optionally scaled by the width factor
(d_model / reference)^-1/2. Only the embed and head groups warm up; matrix
groups start at peak. Every group decays linearly to min_lr_fraction of its
peak by the final step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .balance import BiasState, bias_update
from .errors import InvalidConfigError, TrainingAbortError
from .model import ModelConfig, ForwardResult, init_weights, model_forward
from .thresholds import ThresholdState

__all__ = [
    "OptimizerState",
    "TrainPlan",
    "TrainResult",
    "lr_at",
    "adamw_step",
    "train",
    "param_group",
    "make_controllers",
    "evaluate",
]

log = logging.getLogger("moelab.trainer")

LR_GROUPS = ("matrix", "embed", "head")


@dataclass
class OptimizerState:
    """Per-parameter first/second moments plus step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def fresh(cls, params: dict[str, Tensor], beta1=0.9, beta2=0.95) -> "OptimizerState":
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise InvalidConfigError("betas must be in (0, 1)")
        return cls(
            m={k: np.zeros_like(t.values) for k, t in params.items()},
            v={k: np.zeros_like(t.values) for k, t in params.items()},
            beta1=beta1,
            beta2=beta2,
        )


@dataclass(frozen=True)
class TrainPlan:
    total_steps: int = 3000
    batch_tokens: int = 1024
    eval_every: int = 250
    eval_tokens: int = 4096
    peak_lr: float = 3e-3            # matrix-group peak, pre width scaling
    min_lr_fraction: float = 0.1
    adamw_warmup_steps: int = 250    # embed/head groups only; matrices start at peak
    embed_lr_ratio: float = 10.0
    head_lr_ratio: float = 0.2
    mup_lambda: float = 1.0          # width scale, applied as configured
    alpha: float = 0.001             # aux-loss coefficient (tc_aux mode)
    bias_update_rate: float = 0.005  # loss-free controller u
    bias_mode: str = "sign"
    # effective EMA pool N/(1-beta) ~ 5% of the run's tokens, the same
    # fraction the reference setup's 0.999 gives at its scale; a desk run
    # is 3k steps, so the EMA must track with a proportionally shorter lag
    ema_beta: float = 0.995
    et_warmup_steps: int = 600   # same fifth-of-the-run fraction as the reference setup
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise InvalidConfigError("total_steps must be >= 1")
        if not (0.0 < self.min_lr_fraction <= 1.0):
            raise InvalidConfigError("min_lr_fraction must be in (0, 1]")
        if self.adamw_warmup_steps < 0 or self.et_warmup_steps < 0:
            raise InvalidConfigError("warmup steps must be >= 0")


def width_lambda(d_model: int, reference: int = 768) -> float:
    """Learning-rate width scale (d_model / reference)^-1/2."""
    return math.sqrt(reference / d_model)


def param_group(name: str) -> str:
    if name == "embed":
        return "embed"
    if name == "head":
        return "head"
    return "matrix"


def lr_at(plan: TrainPlan, step: int, group: str = "matrix") -> float:
    """Group learning rate at a step: optional linear warmup, linear decay
    to min_lr_fraction * peak at total_steps."""
    if group not in LR_GROUPS:
        raise InvalidConfigError(f"unknown LR group {group!r}")
    ratio = {"matrix": 1.0, "embed": plan.embed_lr_ratio, "head": plan.head_lr_ratio}[group]
    peak = plan.peak_lr * ratio * plan.mup_lambda
    warmup = plan.adamw_warmup_steps if group in ("embed", "head") else 0
    step = min(step, plan.total_steps)
    if warmup > 0 and step < warmup:
        return peak * step / warmup
    span = max(plan.total_steps - warmup, 1)
    frac = (step - warmup) / span
    return peak * (1.0 - (1.0 - plan.min_lr_fraction) * frac)


def adamw_step(
    state: OptimizerState,
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    lr_for: dict[str, float],
) -> OptimizerState:
    """One bias-corrected Adam update (zero weight decay) across groups.

    lr_for maps group name to the step's learning rate. Raises on any
    non-finite gradient rather than silently poisoning the moments.
    """
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingAbortError(f"non-finite gradient in {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        lr = lr_for[param_group(name)]
        tensor.values = tensor.values - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    state.step = t
    return state


def make_controllers(config: ModelConfig, plan: TrainPlan) -> dict:
    """Fresh per-layer controller states for the configured routing mode."""
    controllers: dict = {}
    for layer in config.moe_layers():
        if config.routing_mode == "et":
            controllers[layer] = ThresholdState.fresh(
                config.n_routed_experts, plan.ema_beta, plan.et_warmup_steps
            )
        elif config.routing_mode == "ec":
            # expert choice on every training pool; thresholds exist so the
            # same cutoff-EMA provides the causal inference protocol
            controllers[layer] = ThresholdState.fresh(
                config.n_routed_experts, plan.ema_beta, plan.total_steps + 1
            )
        elif config.routing_mode == "tc_lossfree":
            controllers[layer] = BiasState.zeros(
                config.n_routed_experts, plan.bias_update_rate, plan.bias_mode
            )
    return controllers


@dataclass
class TrainResult:
    log_rows: list
    final_eval_loss: float
    checkpoint_path: Path | None
    log_path: Path | None
    trace_paths: list
    controllers: dict
    params: dict
    optimizer: OptimizerState
    aborted: bool = False


def _sample_batch(rng, stream: np.ndarray, n_seq: int, seq_len: int):
    starts = rng.integers(0, len(stream) - seq_len - 1, size=n_seq)
    tokens = np.stack([stream[s : s + seq_len] for s in starts]).astype(np.int64)
    targets = np.stack([stream[s + 1 : s + seq_len + 1] for s in starts]).astype(np.int64)
    return tokens, targets


def eval_windows(stream: np.ndarray, n_tokens: int, seq_len: int):
    """Deterministic non-overlapping eval windows from the stream head."""
    n_seq = max(1, min(n_tokens // seq_len, (len(stream) - 1) // seq_len))
    tokens = np.stack(
        [stream[i * seq_len : i * seq_len + seq_len] for i in range(n_seq)]
    ).astype(np.int64)
    targets = np.stack(
        [stream[i * seq_len + 1 : i * seq_len + seq_len + 1] for i in range(n_seq)]
    ).astype(np.int64)
    return tokens, targets


def evaluate(
    params: dict,
    config: ModelConfig,
    controllers: dict,
    tokens: np.ndarray,
    targets: np.ndarray,
    batch_seq: int = 8,
) -> tuple[float, list[ForwardResult]]:
    """Inference-mode eval: mean CE over the windows plus per-batch results."""
    losses = []
    results = []
    for i in range(0, len(tokens), batch_seq):
        res = model_forward(
            params,
            config,
            tokens[i : i + batch_seq],
            targets[i : i + batch_seq],
            training=False,
            controllers=controllers,
        )
        losses.append(res.loss_per_token.ravel())
        results.append(res)
    return float(np.concatenate(losses).mean()), results


def total_loss(result: ForwardResult, alpha: float):
    loss = result.mean_loss
    if alpha > 0:
        for term in result.balance_terms:
            loss = ad.add(loss, ad.scale(term, alpha))
    return loss


def _mean_over_layers(values_by_layer: dict, n_experts: int) -> np.ndarray:
    if not values_by_layer:
        return np.full(n_experts, np.nan)
    return np.mean([np.asarray(v, dtype=np.float64) for v in values_by_layer.values()], axis=0)


def train(
    plan: TrainPlan,
    config: ModelConfig,
    train_stream: np.ndarray,
    eval_stream: np.ndarray,
    run_dir: Path | None = None,
    stream_hash: str = "",
) -> TrainResult:
    """Full training run; returns the log and final state.

    Writes log.csv, eval trace dumps, and checkpoints under run_dir when
    given. Deterministic for a fixed (plan, config, corpus).
    """
    from . import persist  # deferred: persist imports trace/model types

    if len(train_stream) < config.seq_len + 2:
        raise InvalidConfigError("training stream is too short for one window")
    rng = np.random.default_rng(plan.seed)
    params = init_weights(config, plan.seed)
    optimizer = OptimizerState.fresh(params)
    controllers = make_controllers(config, plan)
    n_seq = max(1, plan.batch_tokens // config.seq_len)
    alpha = plan.alpha if config.routing_mode == "tc_aux" else 0.0
    ge = config.n_routed_experts

    ev_tokens, ev_targets = eval_windows(eval_stream, plan.eval_tokens, config.seq_len)
    log_rows: list[dict] = []
    trace_paths: list[Path] = []
    writer = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        writer = persist.LogWriter(run_dir / "log.csv", ge)

    lr_for = {}
    aborted = False
    last_good: Path | None = None
    last_eval: tuple[int, float] | None = None

    def record(step, split, ce, aux, f, c, sat, starve, lr):
        row = {
            "step": step,
            "split": split,
            "ce_loss": ce,
            "aux_loss": aux,
            "f": f,
            "c": c,
            "saturation": sat,
            "starvation": starve,
            "lr": lr,
        }
        log_rows.append(row)
        if writer is not None:
            writer.write(row)

    def run_eval(step):
        nonlocal last_eval
        ce, results = evaluate(params, config, controllers, ev_tokens, ev_targets)
        f = _mean_over_layers(
            {
                l: np.mean([r.stats[l].f for r in results if l in r.stats], axis=0)
                for l in config.moe_layers()
                if any(l in r.stats for r in results)
            },
            ge,
        )
        c = _threshold_snapshot(controllers, ge)
        record(step, "eval", ce, 0.0, f, c, np.nan, np.nan, lr_at(plan, step))
        if run_dir is not None:
            path = run_dir / "traces" / f"step_{step:06d}.jsonl"
            persist.write_trace(
                path, results, config, ev_tokens, stream_hash=stream_hash,
                label=f"{config.routing_mode}-s{plan.seed}-step{step}",
            )
            trace_paths.append(path)
        last_eval = (step, ce)
        return ce

    try:
        for step in range(plan.total_steps):
            tokens, targets = _sample_batch(rng, train_stream, n_seq, config.seq_len)
            result = model_forward(
                params, config, tokens, targets, training=True, controllers=controllers
            )
            loss = total_loss(result, alpha)
            ce_value = float(result.mean_loss.values)
            if not math.isfinite(ce_value):
                raise TrainingAbortError(f"non-finite loss at step {step}")
            loss.backward()
            grads = {k: t.grad for k, t in params.items()}
            for group in LR_GROUPS:
                lr_for[group] = lr_at(plan, step, group)
            adamw_step(optimizer, params, grads, lr_for)
            for t in params.values():
                t.grad = None

            # controller updates: EMA states come back from the forward,
            # bias states move against the observed load
            for layer, state in result.thresholds.items():
                controllers[layer] = state
            if config.routing_mode == "tc_lossfree":
                for layer in config.moe_layers():
                    if layer in result.stats:
                        controllers[layer] = bias_update(
                            controllers[layer], result.stats[layer]
                        )

            aux_value = float(sum(alpha * t.values for t in result.balance_terms)) if alpha else 0.0
            f = _mean_over_layers({l: s.f for l, s in result.stats.items()}, ge)
            c = _threshold_snapshot(controllers, ge)
            sat = (
                float(np.mean([r.saturation_rate for r in result.capacity.values()]))
                if result.capacity
                else np.nan
            )
            starve = (
                float(np.mean([r.starvation_rate for r in result.capacity.values()]))
                if result.capacity
                else np.nan
            )
            record(step, "train", ce_value, aux_value, f, c, sat, starve, lr_for["matrix"])

            if plan.eval_every and (step + 1) % plan.eval_every == 0:
                run_eval(step + 1)
                if run_dir is not None:
                    last_good = run_dir / "checkpoint_last_good.npz"
                    persist.save_checkpoint(
                        last_good, params, config, plan, optimizer, controllers,
                        step=step + 1, stream_hash=stream_hash,
                    )
            if step % 200 == 0:
                log.info("step %d ce %.4f", step, ce_value)
    except TrainingAbortError:
        aborted = True
        if writer is not None:
            writer.close()
        if last_good is None and run_dir is not None:
            last_good = run_dir / "checkpoint_last_good.npz"
            persist.save_checkpoint(
                last_good, params, config, plan, optimizer, controllers,
                step=optimizer.step, stream_hash=stream_hash,
            )
        raise

    if last_eval is not None and last_eval[0] == plan.total_steps:
        final_ce = last_eval[1]
    else:
        final_ce = run_eval(plan.total_steps)
    checkpoint_path = None
    if run_dir is not None:
        checkpoint_path = run_dir / "checkpoint_final.npz"
        persist.save_checkpoint(
            checkpoint_path, params, config, plan, optimizer, controllers,
            step=plan.total_steps, stream_hash=stream_hash,
        )
        writer.close()
    return TrainResult(
        log_rows=log_rows,
        final_eval_loss=final_ce,
        checkpoint_path=checkpoint_path,
        log_path=None if run_dir is None else Path(run_dir) / "log.csv",
        trace_paths=trace_paths,
        controllers=controllers,
        params=params,
        optimizer=optimizer,
        aborted=aborted,
    )


def _threshold_snapshot(controllers: dict, n_experts: int) -> np.ndarray:
    states = [
        s for s in controllers.values() if isinstance(s, ThresholdState) and s.initialized
    ]
    if not states:
        return np.full(n_experts, np.nan)
    return np.mean([s.c for s in states], axis=0)
