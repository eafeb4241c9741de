"""Micro MoE transformer wired to the routing kernels.

Byte-level causal transformer: RoPE attention with QK norm, RMSNorm
pre-norms, ReLU^2 MLPs, untied embeddings, tanh-softcapped logits, and a
first dense layer followed by MoE layers (one shared expert that every
token activates plus GE routed experts behind a configurable routing
rule). Routed selection is non-differentiable; gradients reach the router
through the sigmoid gate values of selected experts and, in the
aux-loss mode, through the balance term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .balance import BiasState, CapacityReport, LoadStats, enforce_capacity, load_stats
from .errors import InvalidConfigError, InvalidInputError
from .routing import Assignment, RoutingConfig, ec_route, et_route, tc_route
from .thresholds import ThresholdState, route_with_schedule

__all__ = [
    "ModelConfig",
    "MoELayerState",
    "MoEOutput",
    "ForwardResult",
    "ROUTING_MODES",
    "init_weights",
    "layer_state",
    "moe_forward",
    "model_forward",
    "aspect_ratio_std",
    "collect_trace_edges",
]

ROUTING_MODES = ("dense", "tc", "tc_aux", "tc_lossfree", "ec", "et")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    vocab_size: int = 256
    seq_len: int = 128
    n_routed_experts: int = 8
    granularity: int = 1
    expansion: int = 8
    expert_dim: int = 128
    routing_mode: str = "et"
    softcap: float = 15.0
    first_layer_dense: bool = True
    capacity_factor: float = 0.5
    rope_base: float = 10000.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise InvalidConfigError("d_model must be divisible by n_heads")
        if self.n_routed_experts != self.granularity * self.expansion:
            raise InvalidConfigError(
                "n_routed_experts must equal granularity * expansion"
            )
        if self.routing_mode not in ROUTING_MODES:
            raise InvalidConfigError(f"unknown routing mode {self.routing_mode!r}")
        if self.n_layers < 1:
            raise InvalidConfigError("need at least one layer")
        if self.dtype not in ("float32", "float64"):
            raise InvalidConfigError("dtype must be float32 or float64")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def dense_hidden(self) -> int:
        # dense blocks match the active MoE path: shared + G routed experts
        return (1 + self.granularity) * self.expert_dim

    def moe_layers(self) -> list[int]:
        """Indices of layers that route (empty in dense mode)."""
        if self.routing_mode == "dense":
            return []
        start = 1 if self.first_layer_dense else 0
        return list(range(start, self.n_layers))

    def routing_config(self) -> RoutingConfig:
        return RoutingConfig(
            granularity=self.granularity,
            expansion=self.expansion,
            capacity_factor=self.capacity_factor,
            pool="batch",
        )


def aspect_ratio_std(d_in: int, d_out: int) -> float:
    """Init scale 1/sqrt(d_in) * min(1, sqrt(d_out / d_in))."""
    return (1.0 / math.sqrt(d_in)) * min(1.0, math.sqrt(d_out / d_in))


def init_weights(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Deterministic parameter construction.

    Embeddings are standard normal; every down/output projection starts at
    exactly zero; the router uses a small normal for symmetry breaking;
    everything else is aspect-ratio scaled.
    """
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    d = config.d_model
    specs: list[tuple[str, tuple[int, int], float | str]] = []
    specs.append(("embed", (config.vocab_size, d), "unit"))
    for i in range(config.n_layers):
        prefix = f"layers.{i}"
        for name in ("wq", "wk", "wv"):
            specs.append((f"{prefix}.attn.{name}", (d, d), aspect_ratio_std(d, d)))
        specs.append((f"{prefix}.attn.wo", (d, d), 0.0))
        if i in config.moe_layers():
            ge = config.n_routed_experts
            ed = config.expert_dim
            specs.append((f"{prefix}.moe.router", (d, ge), 1.0 / math.sqrt(d)))
            specs.append((f"{prefix}.moe.shared.up", (d, ed), aspect_ratio_std(d, ed)))
            specs.append((f"{prefix}.moe.shared.down", (ed, d), 0.0))
            for e in range(ge):
                specs.append(
                    (f"{prefix}.moe.expert{e}.up", (d, ed), aspect_ratio_std(d, ed))
                )
                specs.append((f"{prefix}.moe.expert{e}.down", (ed, d), 0.0))
        else:
            h = config.dense_hidden
            specs.append((f"{prefix}.mlp.up", (d, h), aspect_ratio_std(d, h)))
            specs.append((f"{prefix}.mlp.down", (h, d), 0.0))
    specs.append(("head", (d, config.vocab_size), 0.0))

    params: dict[str, Tensor] = {}
    for name, shape, std in specs:
        if std == "unit":
            arr = rng.standard_normal(shape)
        elif std == 0.0:
            arr = np.zeros(shape)
        else:
            arr = rng.standard_normal(shape) * std
        params[name] = Tensor(arr.astype(dt))
    return params


@dataclass
class MoELayerState:
    """Weight views plus optional controller state for one routed layer."""

    router: Tensor
    shared_up: Tensor
    shared_down: Tensor
    expert_ups: list[Tensor]
    expert_downs: list[Tensor]
    dense_up: Tensor | None = None
    dense_down: Tensor | None = None
    bias: BiasState | None = None
    thresholds: ThresholdState | None = None


def layer_state(
    params: dict[str, Tensor],
    config: ModelConfig,
    layer: int,
    bias: BiasState | None = None,
    thresholds: ThresholdState | None = None,
) -> MoELayerState:
    prefix = f"layers.{layer}"
    if config.routing_mode == "dense" or layer not in config.moe_layers():
        return MoELayerState(
            router=None,
            shared_up=None,
            shared_down=None,
            expert_ups=[],
            expert_downs=[],
            dense_up=params[f"{prefix}.mlp.up"],
            dense_down=params[f"{prefix}.mlp.down"],
        )
    ge = config.n_routed_experts
    return MoELayerState(
        router=params[f"{prefix}.moe.router"],
        shared_up=params[f"{prefix}.moe.shared.up"],
        shared_down=params[f"{prefix}.moe.shared.down"],
        expert_ups=[params[f"{prefix}.moe.expert{e}.up"] for e in range(ge)],
        expert_downs=[params[f"{prefix}.moe.expert{e}.down"] for e in range(ge)],
        bias=bias,
        thresholds=thresholds,
    )


@dataclass
class MoEOutput:
    hidden: Tensor
    assignment: Assignment | None
    stats: LoadStats | None
    balance_term: Tensor | None    # sum_i f_i * mean_t p_ti, differentiable in p
    capacity: CapacityReport | None
    thresholds: ThresholdState | None
    applied_cutoffs: np.ndarray | None = None


def _mlp(x: Tensor, up: Tensor, down: Tensor) -> Tensor:
    return ad.relu_squared(x @ up) @ down


def _take_rows_column(a: Tensor, idx: np.ndarray, col: int) -> Tensor:
    """(K, 1) gather of one column at given rows, differentiable."""
    vals = a.values[idx, col][:, None]
    out = Tensor(vals, parents=(a,))

    def backward(g):
        ga = np.zeros_like(a.values)
        np.add.at(ga, (idx, col), g[:, 0])
        a.accumulate(ga)

    out._backward_fn = backward
    return out


def _scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply each row of a (K, d) tensor by a (K, 1) factor."""
    out = Tensor(a.values * s.values, parents=(a, s))

    def backward(g):
        a.accumulate(g * s.values)
        s.accumulate(np.sum(g * a.values, axis=1, keepdims=True))

    out._backward_fn = backward
    return out


def moe_forward(
    layer: MoELayerState,
    hidden: Tensor,
    config: ModelConfig,
    training: bool = False,
    frozen_kept: np.ndarray | None = None,
) -> MoEOutput:
    """One MoE block on a flat (n_tokens, d) hidden tensor.

    Routes per config.routing_mode, enforces the capacity band while
    training, and mixes shared + gated routed expert outputs. Gradients
    flow through the gates of dispatched experts only; the binary
    selection itself is treated as a constant. `frozen_kept` bypasses
    routing with a fixed selection matrix (used by gradient checks, where
    the loss must stay piecewise-smooth).
    """
    mode = config.routing_mode
    if mode == "dense" or layer.router is None:
        return MoEOutput(
            hidden=_mlp(hidden, layer.dense_up, layer.dense_down),
            assignment=None,
            stats=None,
            balance_term=None,
            capacity=None,
            thresholds=layer.thresholds,
        )

    scores_t = hidden @ layer.router
    scores = scores_t.values.astype(np.float64)
    gates_t = ad.sigmoid(scores_t)
    n_tokens = scores.shape[0]
    new_thresholds = layer.thresholds
    applied_cutoffs = None

    if frozen_kept is not None:
        assignment = Assignment(z=frozen_kept.astype(np.uint8), gates=gates_t.values)
        kept = frozen_kept.astype(np.uint8)
        stats = load_stats(assignment, config.expansion)
        capacity = None
    else:
        if mode in ("tc", "tc_aux"):
            assignment = tc_route(scores, config.granularity)
        elif mode == "tc_lossfree":
            assignment = tc_route(scores, config.granularity, bias=layer.bias.b)
        elif mode in ("ec", "et"):
            if layer.thresholds is None:
                raise InvalidConfigError(f"mode {mode!r} needs a ThresholdState")
            assignment, new_thresholds = route_with_schedule(
                layer.thresholds, scores, config.routing_config(), training
            )
            in_warmup = training and layer.thresholds.step < layer.thresholds.warmup_steps
            if in_warmup:
                k = n_tokens // config.expansion
                applied_cutoffs = np.sort(scores, axis=0)[n_tokens - k, :]
            else:
                applied_cutoffs = layer.thresholds.c.copy()
        else:
            raise InvalidConfigError(f"unknown routing mode {mode!r}")

        stats = load_stats(assignment, config.expansion)
        if training:
            capacity = enforce_capacity(
                assignment, scores, config.expansion, config.capacity_factor
            )
            kept = capacity.kept
        else:
            capacity = None
            kept = assignment.z

    out = _mlp(hidden, layer.shared_up, layer.shared_down)
    for e in range(config.n_routed_experts):
        idx = np.flatnonzero(kept[:, e])
        if idx.size == 0:
            continue
        rows = ad.take_rows(hidden, idx)
        expert_out = _mlp(rows, layer.expert_ups[e], layer.expert_downs[e])
        gate_col = _take_rows_column(gates_t, idx, e)
        out = ad.index_add_rows(out, idx, _scale_rows(expert_out, gate_col))

    balance_term = None
    if stats is not None:
        weights = np.broadcast_to(
            (stats.f / n_tokens).astype(gates_t.dtype), gates_t.shape
        )
        balance_term = ad.dot_const(gates_t, weights)

    return MoEOutput(
        hidden=out,
        assignment=assignment,
        stats=stats,
        balance_term=balance_term,
        capacity=capacity,
        thresholds=new_thresholds,
        applied_cutoffs=applied_cutoffs,
    )


_ROPE_CACHE: dict = {}


def _rope_tables(seq_len: int, head_dim: int, base: float, dtype) -> tuple:
    key = (seq_len, head_dim, base, np.dtype(dtype).name)
    if key not in _ROPE_CACHE:
        half = head_dim // 2
        freqs = base ** (-np.arange(half) / half)
        angles = np.outer(np.arange(seq_len), freqs)
        _ROPE_CACHE[key] = (
            np.cos(angles).astype(dtype),
            np.sin(angles).astype(dtype),
        )
    return _ROPE_CACHE[key]


_MASK_CACHE: dict = {}


def _causal_mask(seq_len: int, dtype) -> np.ndarray:
    key = (seq_len, np.dtype(dtype).name)
    if key not in _MASK_CACHE:
        mask = np.triu(np.full((seq_len, seq_len), -1e30, dtype=dtype), k=1)
        _MASK_CACHE[key] = mask[None, None, :, :]
    return _MASK_CACHE[key]


def _attention(x: Tensor, params: dict, prefix: str, config: ModelConfig) -> Tensor:
    b, t, d = x.shape
    h, hd = config.n_heads, config.head_dim
    flat = ad.reshape(x, (b * t, d))

    def heads(w):
        proj = flat @ params[f"{prefix}.{w}"]
        return ad.transpose(ad.reshape(proj, (b, t, h, hd)), (0, 2, 1, 3))

    q, k, v = heads("wq"), heads("wk"), heads("wv")
    q = ad.rmsnorm(q)
    k = ad.rmsnorm(k)
    cos, sin = _rope_tables(t, hd, config.rope_base, x.dtype)
    q = ad.rope_rotate(q, cos, sin)
    k = ad.rope_rotate(k, cos, sin)
    ctx = ad.causal_attention(q, k, v, 1.0 / math.sqrt(hd))
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b * t, d))
    return ad.reshape(ctx @ params[f"{prefix}.wo"], (b, t, d))


@dataclass
class ForwardResult:
    logits: Tensor
    loss_per_token: np.ndarray | None
    mean_loss: Tensor | None
    balance_terms: list[Tensor] = field(default_factory=list)
    assignments: dict[int, Assignment] = field(default_factory=dict)
    stats: dict[int, LoadStats] = field(default_factory=dict)
    capacity: dict[int, CapacityReport] = field(default_factory=dict)
    thresholds: dict[int, ThresholdState] = field(default_factory=dict)
    applied_cutoffs: dict[int, np.ndarray] = field(default_factory=dict)


def model_forward(
    params: dict[str, Tensor],
    config: ModelConfig,
    tokens: np.ndarray,
    targets: np.ndarray | None = None,
    training: bool = False,
    controllers: dict | None = None,
    frozen_kept: dict | None = None,
) -> ForwardResult:
    """Full forward pass over (batch, seq) token ids.

    `controllers` maps MoE layer index to its BiasState or ThresholdState;
    updated ThresholdStates come back in the result (bias updates are the
    trainer's job). With `targets`, per-token cross-entropy in nats and the
    scalar mean loss are returned.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    b, t = tokens.shape
    if t > config.seq_len:
        raise InvalidInputError(f"sequence length {t} exceeds limit {config.seq_len}")
    if tokens.min(initial=0) < 0 or tokens.max(initial=0) >= config.vocab_size:
        raise InvalidInputError("token id out of vocabulary range")
    controllers = controllers or {}
    frozen_kept = frozen_kept or {}

    x = ad.embedding(params["embed"], tokens)
    result = ForwardResult(logits=None, loss_per_token=None, mean_loss=None)
    moe_layers = set(config.moe_layers())

    for i in range(config.n_layers):
        x = ad.add(x, _attention(ad.rmsnorm(x), params, f"layers.{i}.attn", config))
        h = ad.rmsnorm(x)
        flat = ad.reshape(h, (b * t, config.d_model))
        if i in moe_layers:
            state = layer_state(
                params,
                config,
                i,
                bias=controllers.get(i) if isinstance(controllers.get(i), BiasState) else None,
                thresholds=controllers.get(i)
                if isinstance(controllers.get(i), ThresholdState)
                else None,
            )
            out = moe_forward(
                state,
                flat,
                config,
                training=training,
                frozen_kept=frozen_kept.get(i),
            )
            if out.assignment is not None:
                result.assignments[i] = out.assignment
            if out.stats is not None:
                result.stats[i] = out.stats
            if out.capacity is not None:
                result.capacity[i] = out.capacity
            if out.balance_term is not None:
                result.balance_terms.append(out.balance_term)
            if out.thresholds is not None:
                result.thresholds[i] = out.thresholds
            if out.applied_cutoffs is not None:
                result.applied_cutoffs[i] = out.applied_cutoffs
            mixed = out.hidden
        else:
            up = params[f"layers.{i}.mlp.up"]
            down = params[f"layers.{i}.mlp.down"]
            mixed = _mlp(flat, up, down)
        x = ad.add(x, ad.reshape(mixed, (b, t, config.d_model)))

    final = ad.reshape(ad.rmsnorm(x), (b * t, config.d_model))
    logits = ad.tanh_softcap(final @ params["head"], config.softcap)
    result.logits = logits

    if targets is not None:
        targets = np.asarray(targets)
        if targets.shape != tokens.shape:
            raise InvalidInputError("targets must match token shape")
        losses = ad.cross_entropy_logits(logits, targets.reshape(-1))
        result.loss_per_token = losses.values.reshape(b, t).copy()
        result.mean_loss = ad.mean_all(losses)
    return result


def collect_trace_edges(
    result: ForwardResult, token_offset: int = 0
) -> list[tuple[int, int, int]]:
    """Flatten a forward's assignments into (layer, token, expert) edges."""
    edges = []
    for layer, assignment in result.assignments.items():
        rows, cols = np.nonzero(assignment.z)
        for r, c in zip(rows.tolist(), cols.tolist()):
            edges.append((layer, token_offset + r, c))
    return edges
