"""Routing-consistency and activation-dynamics metrics over traces.

A trace is the set of (layer, token, expert) edges a model activated on a
fixed evaluation stream, shared-expert edges excluded. Pairwise metrics
(weighted Jaccard/Dice over pooled edges, per-token overlap and divergence)
quantify how stable routing decisions are between two checkpoints; per-trace
statistics (expert-token ratios, fanout by position and by loss) describe
how computation is allocated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import log2

import numpy as np

from .errors import EmptyDomainError, InvalidComparisonError, InvalidConfigError

__all__ = [
    "RoutingTrace",
    "FanoutSeries",
    "LossBinSeries",
    "weighted_jaccard",
    "weighted_dice",
    "token_overlap",
    "token_divergence",
    "expert_token_ratio",
    "fanout_stats",
]


@dataclass
class RoutingTrace:
    """Active routed-expert edges for one evaluation stream.

    edges holds (layer, token, expert) triples; layer indexes the model's
    routed layers, token is the stream-global token index. Metadata arrays
    (position within sequence, per-token loss in nats, domain tag) align
    with token index. stream_hash identifies the evaluation stream so
    comparisons can refuse traces taken over different data.
    """

    edges: frozenset
    n_layers: int
    n_tokens: int
    n_experts: int
    positions: np.ndarray
    losses: np.ndarray
    domains: tuple
    stream_hash: str = ""
    label: str = ""
    _per_pair: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_edges(
        cls,
        edges,
        n_layers: int,
        n_tokens: int,
        n_experts: int,
        positions=None,
        losses=None,
        domains=None,
        stream_hash: str = "",
        label: str = "",
    ) -> "RoutingTrace":
        edge_set = frozenset((int(l), int(t), int(e)) for l, t, e in edges)
        for l, t, e in edge_set:
            if not (0 <= l < n_layers and 0 <= t < n_tokens and 0 <= e < n_experts):
                raise InvalidConfigError(f"edge {(l, t, e)} out of bounds")
        if positions is None:
            positions = np.arange(n_tokens)
        if losses is None:
            losses = np.zeros(n_tokens)
        if domains is None:
            domains = ("default",) * n_tokens
        positions = np.asarray(positions)
        losses = np.asarray(losses, dtype=np.float64)
        if len(positions) != n_tokens or len(losses) != n_tokens or len(domains) != n_tokens:
            raise InvalidConfigError("metadata arrays must have one entry per token")
        return cls(
            edges=edge_set,
            n_layers=n_layers,
            n_tokens=n_tokens,
            n_experts=n_experts,
            positions=positions,
            losses=losses,
            domains=tuple(domains),
            stream_hash=stream_hash,
            label=label,
        )

    def experts_at(self, layer: int, token: int) -> frozenset:
        """Active expert set for one token-layer pair (cached per trace)."""
        if not self._per_pair:
            table: dict = {}
            for l, t, e in self.edges:
                table.setdefault((l, t), set()).add(e)
            self._per_pair = {key: frozenset(val) for key, val in table.items()}
        return self._per_pair.get((layer, token), frozenset())

    def fanout_per_token(self) -> np.ndarray:
        """Total routed-expert activations per token, summed over layers."""
        counts = np.zeros(self.n_tokens, dtype=np.int64)
        for _, t, _ in self.edges:
            counts[t] += 1
        return counts

    def fanout_per_token_layer(self) -> np.ndarray:
        """(n_tokens, n_layers) activation counts."""
        counts = np.zeros((self.n_tokens, self.n_layers), dtype=np.int64)
        for l, t, _ in self.edges:
            counts[t, l] += 1
        return counts


def _check_universe(a: RoutingTrace, b: RoutingTrace) -> None:
    if (a.n_layers, a.n_tokens) != (b.n_layers, b.n_tokens):
        raise InvalidComparisonError(
            f"traces cover different universes: {(a.n_layers, a.n_tokens)} "
            f"vs {(b.n_layers, b.n_tokens)}"
        )
    if a.stream_hash and b.stream_hash and a.stream_hash != b.stream_hash:
        raise InvalidComparisonError(
            "traces were taken over different evaluation streams "
            f"({a.stream_hash[:12]} vs {b.stream_hash[:12]})"
        )


def weighted_jaccard(a: RoutingTrace, b: RoutingTrace) -> float:
    """|E_A ∩ E_B| / |E_A ∪ E_B| over pooled edges; 1.0 when both are empty."""
    _check_universe(a, b)
    union = len(a.edges | b.edges)
    if union == 0:
        return 1.0
    return len(a.edges & b.edges) / union


def weighted_dice(a: RoutingTrace, b: RoutingTrace) -> float:
    """2|E_A ∩ E_B| / (|E_A| + |E_B|) over pooled edges; 1.0 when both empty."""
    _check_universe(a, b)
    total = len(a.edges) + len(b.edges)
    if total == 0:
        return 1.0
    return 2 * len(a.edges & b.edges) / total


def _pair_sets(a: RoutingTrace, b: RoutingTrace):
    for layer in range(a.n_layers):
        for token in range(a.n_tokens):
            yield a.experts_at(layer, token), b.experts_at(layer, token)


def token_overlap(a: RoutingTrace, b: RoutingTrace) -> tuple[float, float]:
    """Mean per-token-layer Jaccard and Dice.

    Empty conventions: both sets empty scores 1, exactly one empty scores 0.
    """
    _check_universe(a, b)
    jaccards = []
    dices = []
    for sa, sb in _pair_sets(a, b):
        if not sa and not sb:
            jaccards.append(1.0)
            dices.append(1.0)
        elif not sa or not sb:
            jaccards.append(0.0)
            dices.append(0.0)
        else:
            inter = len(sa & sb)
            jaccards.append(inter / len(sa | sb))
            dices.append(2 * inter / (len(sa) + len(sb)))
    return float(np.mean(jaccards)), float(np.mean(dices))


def _jsd_tv(sa: frozenset, sb: frozenset) -> tuple[float, float]:
    # uniform mass over each active set; log base 2 keeps JSD in [0, 1]
    pa = 1.0 / len(sa)
    pb = 1.0 / len(sb)
    jsd = 0.0
    tv = 0.0
    for e in sa | sb:
        p = pa if e in sa else 0.0
        q = pb if e in sb else 0.0
        m = 0.5 * (p + q)
        if p > 0:
            jsd += 0.5 * p * log2(p / m)
        if q > 0:
            jsd += 0.5 * q * log2(q / m)
        tv += 0.5 * abs(p - q)
    return jsd, tv


def token_divergence(a: RoutingTrace, b: RoutingTrace) -> tuple[float, float]:
    """Mean per-token-layer joint JSD (bits) and total variation.

    Each activation set becomes a uniform distribution over its experts.
    Empty conventions: both empty scores 0, exactly one empty scores 1.
    """
    _check_universe(a, b)
    jsds = []
    tvs = []
    for sa, sb in _pair_sets(a, b):
        if not sa and not sb:
            jsds.append(0.0)
            tvs.append(0.0)
        elif not sa or not sb:
            jsds.append(1.0)
            tvs.append(1.0)
        else:
            jsd, tv = _jsd_tv(sa, sb)
            jsds.append(jsd)
            tvs.append(tv)
    return float(np.mean(jsds)), float(np.mean(tvs))


def expert_token_ratio(trace: RoutingTrace, domain: str) -> np.ndarray:
    """Fraction of a domain's tokens that activate each (layer, expert).

    Rows need not sum to 1: a token activating several experts counts toward
    each of them.
    """
    member = np.array([d == domain for d in trace.domains], dtype=bool)
    n_domain = int(member.sum())
    if n_domain == 0:
        raise EmptyDomainError(f"no tokens tagged {domain!r}")
    hits = np.zeros((trace.n_layers, trace.n_experts), dtype=np.float64)
    for l, t, e in trace.edges:
        if member[t]:
            hits[l, e] += 1.0
    return hits / n_domain


@dataclass(frozen=True)
class FanoutSeries:
    """Mean fanout grouped by token position within its sequence."""

    positions: np.ndarray
    mean_fanout: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True)
class LossBinSeries:
    """Mean fanout per equal-count loss bin, per layer plus pooled."""

    bin_lo: np.ndarray
    bin_hi: np.ndarray
    mean_loss: np.ndarray
    global_mean_fanout: np.ndarray
    per_layer_mean_fanout: np.ndarray  # (n_layers, n_bins)
    counts: np.ndarray


def fanout_stats(trace: RoutingTrace, loss_bins: int) -> tuple[FanoutSeries, LossBinSeries]:
    """Fanout grouped by position and by equal-count loss bins."""
    if loss_bins < 1:
        raise InvalidConfigError("loss_bins must be >= 1")
    per_token = trace.fanout_per_token().astype(np.float64)
    per_token_layer = trace.fanout_per_token_layer().astype(np.float64)

    positions = np.asarray(trace.positions)
    uniq = np.unique(positions)
    by_pos_mean = np.array([per_token[positions == p].mean() for p in uniq])
    by_pos_count = np.array([(positions == p).sum() for p in uniq])
    pos_series = FanoutSeries(positions=uniq, mean_fanout=by_pos_mean, counts=by_pos_count)

    # equal-count bins over the loss order; ties resolved by token index
    n = trace.n_tokens
    n_bins = min(loss_bins, n)
    order = np.argsort(trace.losses, kind="stable")
    splits = np.array_split(order, n_bins)
    lo = np.empty(n_bins)
    hi = np.empty(n_bins)
    mean_loss = np.empty(n_bins)
    global_mean = np.empty(n_bins)
    layer_mean = np.empty((trace.n_layers, n_bins))
    counts = np.empty(n_bins, dtype=np.int64)
    for b, idx in enumerate(splits):
        lo[b] = trace.losses[idx].min()
        hi[b] = trace.losses[idx].max()
        mean_loss[b] = trace.losses[idx].mean()
        global_mean[b] = per_token[idx].mean()
        layer_mean[:, b] = per_token_layer[idx].mean(axis=0)
        counts[b] = len(idx)
    loss_series = LossBinSeries(
        bin_lo=lo,
        bin_hi=hi,
        mean_loss=mean_loss,
        global_mean_fanout=global_mean,
        per_layer_mean_fanout=layer_mean,
        counts=counts,
    )
    return pos_series, loss_series
