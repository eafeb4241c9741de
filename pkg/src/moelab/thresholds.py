"""Cutoff-EMA quantile tracking and the warmup routing schedule.

Each expert keeps an exponential moving average of the k-th largest router
score in every training pool (k = floor(N / expansion)), which converges to
the (1 - 1/E) population quantile. Routing thresholds on that EMA makes the
selection causal: nothing about the current batch beyond the token's own row
enters the decision.

During an initial warmup phase the schedule falls back to expert-choice
routing so the EMA can accumulate stable statistics before the thresholds
take over.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidConfigError, InvalidPoolError
from .routing import Assignment, RoutingConfig, _as_score_array, ec_route, et_route

__all__ = ["ThresholdState", "kth_largest", "ema_update", "route_with_schedule"]


@dataclass(frozen=True)
class ThresholdState:
    """Per-expert cutoff EMA plus schedule counters.

    The effective pool the EMA averages over is N / (1 - beta) tokens; it is
    derived, not stored. `initialized` is False until the first training
    batch seeds the cutoffs.
    """

    c: np.ndarray
    beta: float
    step: int = 0
    warmup_steps: int = 0
    initialized: bool = False

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0):
            raise InvalidConfigError("beta must be in (0, 1)")
        if self.warmup_steps < 0:
            raise InvalidConfigError("warmup_steps must be >= 0")
        c = np.asarray(self.c, dtype=np.float64)
        if self.initialized and not np.all(np.isfinite(c)):
            raise InvalidConfigError("initialized cutoffs must be finite")
        object.__setattr__(self, "c", c)

    @classmethod
    def fresh(cls, n_experts: int, beta: float, warmup_steps: int = 0) -> "ThresholdState":
        return cls(
            c=np.zeros(n_experts),
            beta=beta,
            step=0,
            warmup_steps=warmup_steps,
            initialized=False,
        )


def kth_largest(column: np.ndarray, k: int) -> float:
    """k-th largest value of a vector, duplicates counted with multiplicity."""
    col = np.asarray(column, dtype=np.float64).ravel()
    if not 1 <= k <= col.size:
        raise InvalidConfigError(f"k={k} out of range for length {col.size}")
    return float(np.partition(col, col.size - k)[col.size - k])


def _batch_kth_largest(scores: np.ndarray, k: int) -> np.ndarray:
    n = scores.shape[0]
    return np.partition(scores, n - k, axis=0)[n - k, :]


def ema_update(state: ThresholdState, scores, expansion: int) -> ThresholdState:
    """Fold one training pool into the cutoff EMA.

    c_i <- beta * c_i + (1 - beta) * kth-largest(column i). The first call
    seeds c directly with the batch statistic (beta = 0 behaviour), giving
    the EMA a defined value even without warmup.
    """
    r = _as_score_array(scores)
    n_tokens, n_experts = r.shape
    if state.c.shape != (n_experts,):
        raise InvalidConfigError(
            f"state tracks {state.c.shape[0]} experts, scores have {n_experts}"
        )
    k = n_tokens // expansion
    if k < 1:
        raise InvalidPoolError(
            f"pool of {n_tokens} tokens cannot feed expansion {expansion}"
        )
    batch_stat = _batch_kth_largest(r, k)
    if state.initialized:
        c = state.beta * state.c + (1.0 - state.beta) * batch_stat
    else:
        c = batch_stat
    return replace(state, c=c, step=state.step + 1, initialized=True)


def route_with_schedule(
    state: ThresholdState,
    scores,
    config: RoutingConfig,
    training: bool,
) -> tuple[Assignment, ThresholdState]:
    """Route one pool under the warmup schedule.

    Training steps before `warmup_steps` use expert-choice routing; later
    training steps threshold on the EMA cutoffs. The EMA is updated on every
    training step and never outside training — inference routing leaves the
    state untouched and requires initialized cutoffs.
    """
    r = _as_score_array(scores)
    if not training:
        if not state.initialized:
            raise InvalidConfigError("cannot threshold-route with uninitialized cutoffs")
        return et_route(r, state.c), state

    if state.step < state.warmup_steps:
        assignment = ec_route(r, config.expansion)
        return assignment, ema_update(state, r, config.expansion)

    # past warmup: seed on the very first batch, then threshold on the EMA
    next_state = ema_update(state, r, config.expansion)
    c = state.c if state.initialized else next_state.c
    return et_route(r, c), next_state
