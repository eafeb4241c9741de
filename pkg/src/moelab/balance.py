"""Load statistics, balance losses, bias controllers, and capacity limits.

The normalized load f_i = (E/N) * sum_t z_ti equals 1 for every expert under
perfect balance; the mean routing probability P_i = (1/N) * sum_t p_ti feeds
the auxiliary balance loss alpha * sum_i f_i * P_i. The loss-free alternative
keeps a per-expert selection bias b_i that a sign or proportional controller
nudges toward balance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyPoolError, InvalidConfigError
from .routing import Assignment, _as_score_array

__all__ = [
    "LoadStats",
    "BiasState",
    "CapacityReport",
    "load_stats",
    "aux_loss",
    "bias_update",
    "enforce_capacity",
]


@dataclass(frozen=True)
class LoadStats:
    """Per-expert load summary for one routing pool."""

    f: np.ndarray      # normalized load, 1.0 per expert at perfect balance
    P: np.ndarray      # mean gate value over all pool tokens
    usage: np.ndarray  # fraction of tokens selecting each expert


@dataclass(frozen=True)
class BiasState:
    """Selection bias vector plus its controller settings.

    mode "sign" applies constant-magnitude corrections u * sign(1 - f);
    mode "proportional" scales the correction with the deviation, u * (1 - f).
    """

    b: np.ndarray
    update_rate: float
    mode: str = "sign"

    def __post_init__(self):
        if self.update_rate <= 0:
            raise InvalidConfigError("update_rate must be > 0")
        if self.mode not in ("sign", "proportional"):
            raise InvalidConfigError(f"unknown bias mode {self.mode!r}")
        b = np.asarray(self.b, dtype=np.float64)
        if not np.all(np.isfinite(b)):
            raise InvalidConfigError("bias must be finite")
        object.__setattr__(self, "b", b)

    @classmethod
    def zeros(cls, n_experts: int, update_rate: float, mode: str = "sign") -> "BiasState":
        return cls(b=np.zeros(n_experts), update_rate=update_rate, mode=mode)


@dataclass(frozen=True)
class CapacityReport:
    """Outcome of clipping an assignment to the capacity band.

    kept marks the selections that survive; saturation_rate is the fraction
    of originally selected tokens that were dropped, starvation_rate the mean
    per-expert relative deficit below the (1 - C) * k floor. Padding below
    the floor is an accounting concept only; no selections are added.
    """

    kept: np.ndarray
    saturation_rate: float
    starvation_rate: float
    kept_counts: np.ndarray


def load_stats(assignment: Assignment, expansion: int) -> LoadStats:
    """Compute f, P, and usage for one pool; the pool must be non-empty."""
    n_tokens = assignment.n_tokens
    if n_tokens == 0:
        raise EmptyPoolError("load statistics need at least one token")
    if expansion < 1:
        raise InvalidConfigError("expansion must be >= 1")
    counts = assignment.z.sum(axis=0, dtype=np.float64)
    usage = counts / n_tokens
    f = expansion * usage
    P = assignment.gates.mean(axis=0, dtype=np.float64)
    return LoadStats(f=f, P=P, usage=usage)


def aux_loss(stats: LoadStats, alpha: float) -> float:
    """Auxiliary balance loss alpha * sum_i f_i * P_i."""
    if alpha < 0:
        raise InvalidConfigError("alpha must be >= 0")
    return float(alpha * np.dot(stats.f, stats.P))


def bias_update(state: BiasState, stats: LoadStats) -> BiasState:
    """One controller step; returns a new state, never mutating the input."""
    if stats.f.shape != state.b.shape:
        raise InvalidConfigError(
            f"load vector shape {stats.f.shape} does not match bias {state.b.shape}"
        )
    deviation = 1.0 - stats.f
    if state.mode == "sign":
        delta = state.update_rate * np.sign(deviation)
    else:
        delta = state.update_rate * deviation
    return replace(state, b=state.b + delta)


def enforce_capacity(
    assignment: Assignment,
    scores,
    expansion: int,
    capacity_factor: float,
) -> CapacityReport:
    """Clip per-expert selections to the ceiling ceil((1 + C) * k).

    When an expert holds more than the ceiling, the lowest-scored selected
    tokens are dropped (ties drop the later token). Experts below the floor
    (1 - C) * k contribute their relative deficit to the starvation rate;
    nothing is ever added to the selection.
    """
    if capacity_factor < 0:
        raise InvalidConfigError("capacity_factor must be >= 0")
    r = _as_score_array(scores)
    z = assignment.z
    n_tokens, n_experts = z.shape
    k = n_tokens // expansion
    if k < 1:
        raise InvalidConfigError(
            f"pool of {n_tokens} tokens with expansion {expansion} gives zero capacity"
        )
    ceiling = math.ceil((1.0 + capacity_factor) * k)
    floor = (1.0 - capacity_factor) * k

    kept = z.copy()
    total_selected = int(z.sum())
    dropped = 0
    for i in range(n_experts):
        selected = np.flatnonzero(z[:, i])
        excess = selected.size - ceiling
        if excess > 0:
            # stable sort on score keeps the earlier token among ties,
            # so the dropped tail prefers later tokens
            order = selected[np.argsort(-r[selected, i], kind="stable")]
            kept[order[ceiling:], i] = 0
            dropped += excess

    kept_counts = kept.sum(axis=0)
    saturation = dropped / total_selected if total_selected else 0.0
    if floor > 0:
        deficits = np.maximum(0.0, floor - kept_counts) / floor
        starvation = float(deficits.mean())
    else:
        starvation = 0.0
    return CapacityReport(
        kept=kept,
        saturation_rate=float(saturation),
        starvation_rate=starvation,
        kept_counts=kept_counts,
    )
