"""Pure routing kernels: score matrices in, binary assignments out.

Three selection rules over a pool of N tokens and GE experts:

* token choice (TC): each token keeps its top-G experts by score,
* expert choice (EC): each expert keeps its top-k tokens from the pool,
* expert threshold (ET): a token is routed to expert i iff its score
  strictly exceeds that expert's cutoff c_i.

All functions are pure and deterministic; ties break toward the lowest
expert index (TC) or the earliest token (EC).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidConfigError,
    InvalidInputError,
    InvalidPoolError,
    InvalidShapeError,
)

__all__ = [
    "ScoreMatrix",
    "RoutingConfig",
    "Assignment",
    "gate",
    "tc_route",
    "ec_route",
    "et_route",
    "mix_outputs",
]


@dataclass(frozen=True)
class ScoreMatrix:
    """Router logits for one routing pool, shape (n_tokens, n_experts)."""

    scores: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidShapeError(f"scores must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise InvalidConfigError("need at least one expert column")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("scores must be finite")
        object.__setattr__(self, "scores", arr)

    @property
    def n_tokens(self) -> int:
        return self.scores.shape[0]

    @property
    def n_experts(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class RoutingConfig:
    """Pool-level routing parameters.

    granularity: experts selected per token under TC (G).
    expansion: sparsity factor E; each expert targets a 1/E share of tokens.
    capacity_factor: tolerated relative deviation from the per-expert target.
    pool: which token population the rule ranks over.
    """

    granularity: int = 1
    expansion: int = 8
    capacity_factor: float = 0.5
    pool: str = "batch"  # sequence | batch | population

    def __post_init__(self):
        if self.granularity < 1:
            raise InvalidConfigError("granularity must be >= 1")
        if self.expansion < 1:
            raise InvalidConfigError("expansion must be >= 1")
        if self.capacity_factor < 0:
            raise InvalidConfigError("capacity_factor must be >= 0")
        if self.pool not in ("sequence", "batch", "population"):
            raise InvalidConfigError(f"unknown pool {self.pool!r}")

    @property
    def n_experts(self) -> int:
        return self.granularity * self.expansion


@dataclass
class Assignment:
    """Binary selection z plus sigmoid gate values p, both (n_tokens, n_experts).

    Gates are always computed from the unbiased scores, regardless of any
    selection bias applied when choosing z.
    """

    z: np.ndarray
    gates: np.ndarray

    @property
    def n_tokens(self) -> int:
        return self.z.shape[0]

    @property
    def n_experts(self) -> int:
        return self.z.shape[1]

    def row_counts(self) -> np.ndarray:
        """Experts selected per token (fanout)."""
        return self.z.sum(axis=1)

    def column_counts(self) -> np.ndarray:
        """Tokens selected per expert."""
        return self.z.sum(axis=0)


def _as_score_array(scores) -> np.ndarray:
    if isinstance(scores, ScoreMatrix):
        return scores.scores
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidShapeError(f"scores must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("scores must be finite")
    return arr


def gate(scores) -> np.ndarray:
    """Elementwise logistic sigmoid of the router scores.

    Numerically stable for large |r| and clipped into the open interval
    (0, 1) so downstream averages never degenerate to exactly 0 or 1.
    """
    r = _as_score_array(scores)
    out = np.empty_like(r)
    pos = r >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-r[pos]))
    e = np.exp(r[~pos])
    out[~pos] = e / (1.0 + e)
    tiny = np.finfo(r.dtype).tiny
    top = np.nextafter(r.dtype.type(1.0), r.dtype.type(0.0))
    return np.clip(out, tiny, top)


def tc_route(scores, granularity: int, bias: np.ndarray | None = None) -> Assignment:
    """Token-choice routing: every token keeps its top-`granularity` experts.

    Selection ranks the biased scores r + b when a per-expert bias is given;
    gate values always come from the unbiased scores. Ties go to the lowest
    expert index.
    """
    r = _as_score_array(scores)
    n_tokens, n_experts = r.shape
    if granularity > n_experts:
        raise InvalidConfigError(
            f"granularity {granularity} exceeds expert count {n_experts}"
        )
    if granularity < 1:
        raise InvalidConfigError("granularity must be >= 1")

    ranked = r
    if bias is not None:
        b = np.asarray(bias, dtype=np.float64)
        if b.shape != (n_experts,):
            raise InvalidConfigError(
                f"bias must have shape ({n_experts},), got {b.shape}"
            )
        ranked = r + b[None, :]

    z = np.zeros((n_tokens, n_experts), dtype=np.uint8)
    if n_tokens:
        # stable argsort of -scores puts the lowest index first among ties
        order = np.argsort(-ranked, axis=1, kind="stable")[:, :granularity]
        np.put_along_axis(z, order, 1, axis=1)
    return Assignment(z=z, gates=gate(r))


def ec_route(scores, expansion: int) -> Assignment:
    """Expert-choice routing: every expert keeps its top-k pool tokens.

    k = floor(n_tokens / expansion). Ties go to the earlier token. Rows of z
    may sum to anything from 0 to n_experts.
    """
    r = _as_score_array(scores)
    n_tokens, n_experts = r.shape
    if expansion < 1:
        raise InvalidConfigError("expansion must be >= 1")
    k = n_tokens // expansion
    if k < 1:
        raise InvalidPoolError(
            f"pool of {n_tokens} tokens cannot feed expansion {expansion}"
        )
    z = np.zeros((n_tokens, n_experts), dtype=np.uint8)
    order = np.argsort(-r, axis=0, kind="stable")[:k, :]
    np.put_along_axis(z, order, 1, axis=0)
    return Assignment(z=z, gates=gate(r))


def et_route(scores, thresholds: np.ndarray) -> Assignment:
    """Expert-threshold routing: z = 1 exactly where score > cutoff.

    The comparison is strict, so a score equal to the cutoff is NOT routed.
    Each token's row depends only on its own scores and the fixed cutoffs,
    which makes the rule causal by construction.
    """
    r = _as_score_array(scores)
    c = np.asarray(thresholds, dtype=np.float64)
    if c.shape != (r.shape[1],):
        raise InvalidConfigError(
            f"thresholds must have shape ({r.shape[1]},), got {c.shape}"
        )
    if not np.all(np.isfinite(c)):
        raise InvalidConfigError("thresholds must be finite")
    z = (r > c[None, :]).astype(np.uint8)
    return Assignment(z=z, gates=gate(r))


def mix_outputs(
    assignment: Assignment,
    expert_outputs: np.ndarray,
    shared_output: np.ndarray,
    normalize_fanout: bool = False,
) -> np.ndarray:
    """Combine expert outputs: y_t = shared_t + sum_i z_ti * p_ti * expert_i(t).

    expert_outputs has shape (n_experts, n_tokens, d); shared_output is
    (n_tokens, d). A token with an all-zero z row receives exactly the shared
    output. `normalize_fanout` divides the routed sum by the token's fanout;
    it is off by default because it measurably hurts quality and exists only
    for the ablation.
    """
    z = assignment.z
    p = assignment.gates
    n_tokens, n_experts = z.shape
    eo = np.asarray(expert_outputs, dtype=np.float64)
    so = np.asarray(shared_output, dtype=np.float64)
    if eo.shape[:2] != (n_experts, n_tokens):
        raise InvalidShapeError(
            f"expert_outputs must be (n_experts, n_tokens, d), got {eo.shape}"
        )
    if so.shape != (n_tokens,) + eo.shape[2:]:
        raise InvalidShapeError(
            f"shared_output shape {so.shape} does not match expert outputs {eo.shape}"
        )
    weights = (z * p).astype(np.float64)  # (n_tokens, n_experts)
    if normalize_fanout:
        fanout = np.maximum(z.sum(axis=1, keepdims=True), 1)
        weights = weights / fanout
    routed = np.einsum("te,etd->td", weights, eo)
    return so + routed
