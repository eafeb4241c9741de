"""Shared utilities for model-level tests: gradient checks, tiny configs,
and the picklable training-job worker used by the acceptance matrix."""

import math

import numpy as np

from moelab import autodiff as ad
from moelab.autodiff import Tensor
from moelab.balance import BiasState
from moelab.model import ModelConfig, init_weights, model_forward
from moelab.thresholds import ThresholdState

GRADCHECK_ALPHA = 0.01  # exaggerated balance coefficient so the aux path matters


def tiny_config(mode: str, **overrides) -> ModelConfig:
    base = dict(
        n_layers=2,
        d_model=16,
        n_heads=2,
        vocab_size=32,
        seq_len=8,
        n_routed_experts=4,
        granularity=1,
        expansion=4,
        expert_dim=32,
        routing_mode=mode,
        first_layer_dense=True,
        dtype="float64",
    )
    base.update(overrides)
    return ModelConfig(**base)


def noisy_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Init weights, then jitter every tensor so zero-init projections
    carry signal and the full gradient path is exercised."""
    params = init_weights(config, seed)
    rng = np.random.default_rng(seed + 1)
    for name, t in params.items():
        t.values = t.values + 0.05 * rng.standard_normal(t.shape)
    return params


def live_controllers(config: ModelConfig, scores_scale: float = 0.0) -> dict:
    """Controller states that let every mode route without warmup."""
    controllers: dict = {}
    for layer in config.moe_layers():
        if config.routing_mode in ("ec", "et"):
            controllers[layer] = ThresholdState(
                c=np.full(config.n_routed_experts, scores_scale),
                beta=0.9,
                step=1,
                warmup_steps=0,
                initialized=True,
            )
        elif config.routing_mode == "tc_lossfree":
            controllers[layer] = BiasState.zeros(config.n_routed_experts, 0.005)
    return controllers


def frozen_selection(params, config, tokens, targets):
    """One live forward to capture the routing decisions to freeze."""
    res = model_forward(
        params,
        config,
        tokens,
        targets,
        training=False,
        controllers=live_controllers(config),
    )
    return {layer: a.z.copy() for layer, a in res.assignments.items()}


def total_loss_tensor(result, alpha: float):
    total = result.mean_loss
    for term in result.balance_terms:
        total = ad.add(total, ad.scale(term, alpha))
    return total


def model_loss_fn(config, tokens, targets, frozen, alpha: float):
    """Returns f(name -> ndarray) -> float for finite differencing."""

    def fn(arrays: dict) -> float:
        params = {k: Tensor(v) for k, v in arrays.items()}
        res = model_forward(
            params, config, tokens, targets, training=False, frozen_kept=frozen
        )
        return float(total_loss_tensor(res, alpha).values)

    return fn


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def run_training_job(args: dict) -> dict:
    """One full training run, reduced to the numbers the acceptance
    criteria need. Module-level so process pools can pickle it."""
    from moelab.data import load_corpus
    from moelab.trainer import TrainPlan, train, width_lambda

    config = ModelConfig(**args["model"])
    plan_kw = dict(args["plan"])
    plan_kw.setdefault("mup_lambda", width_lambda(config.d_model))
    plan = TrainPlan(**plan_kw)
    split = load_corpus(args["corpus_path"], args["split_fraction"])
    result = train(plan, config, split.train, split.eval, run_dir=args.get("run_dir"))

    train_rows = [r for r in result.log_rows if r["split"] == "train"]
    tail = train_rows[-50:]
    post_warmup = [
        r
        for r in train_rows
        if r["step"] >= args.get("warmup_cut", 0) and not math.isnan(r["saturation"])
    ]
    f_tail = np.mean([r["f"] for r in tail], axis=0)
    sat = np.mean([r["saturation"] for r in post_warmup]) if post_warmup else float("nan")
    starve = np.mean([r["starvation"] for r in post_warmup]) if post_warmup else float("nan")
    return {
        "mode": config.routing_mode,
        "seed": plan.seed,
        "final_ce": result.final_eval_loss,
        "f_tail": f_tail,
        "saturation_post_warmup": float(sat),
        "starvation_post_warmup": float(starve),
    }


def model_grad_check(mode: str, seed: int = 0, names: list | None = None, h: float = 1e-5):
    """Autodiff vs central differences on the micro model, frozen routing.

    Returns {param_name: rel_err}. `names` restricts the sweep.
    """
    config = tiny_config(mode)
    params = noisy_params(config, seed)
    rng = np.random.default_rng(seed + 2)
    tokens = rng.integers(0, config.vocab_size, size=(2, config.seq_len))
    targets = rng.integers(0, config.vocab_size, size=(2, config.seq_len))

    frozen = frozen_selection(params, config, tokens, targets)
    alpha = GRADCHECK_ALPHA if mode == "tc_aux" else 0.0

    res = model_forward(
        params, config, tokens, targets, training=False, frozen_kept=frozen
    )
    total_loss_tensor(res, alpha).backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros(t.shape)) for k, t in params.items()}

    loss_of = model_loss_fn(config, tokens, targets, frozen, alpha)
    base = {k: t.values.copy() for k, t in params.items()}
    errors = {}
    for name in names or list(params):
        numeric = np.zeros_like(base[name])
        flat_num = numeric.ravel()
        flat_arr = base[name].ravel()
        for j in range(flat_arr.size):
            orig = flat_arr[j]
            flat_arr[j] = orig + h
            hi = loss_of(base)
            flat_arr[j] = orig - h
            lo = loss_of(base)
            flat_arr[j] = orig
            flat_num[j] = (hi - lo) / (2 * h)
        errors[name] = rel_err(analytic[name], numeric)
    return errors
