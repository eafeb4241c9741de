"""File formats: run logs (CSV), routing traces (JSONL), checkpoints (npz).

Every format carries a schema version. Trace files embed the evaluation
stream hash so cross-checkpoint comparisons can refuse mismatched streams;
checkpoints are exact (lossless arrays), so save -> load -> eval reproduces
losses bit for bit.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .balance import BiasState
from .data import byte_domain
from .errors import InvalidConfigError, InvalidInputError
from .metrics import RoutingTrace
from .model import ModelConfig
from .thresholds import ThresholdState

__all__ = [
    "LOG_SCHEMA",
    "TRACE_SCHEMA",
    "CHECKPOINT_SCHEMA",
    "LogWriter",
    "read_log",
    "log_columns",
    "write_trace",
    "read_trace",
    "save_checkpoint",
    "load_checkpoint",
    "config_digest",
]

LOG_SCHEMA = 1
TRACE_SCHEMA = 1
CHECKPOINT_SCHEMA = 1


def config_digest(config: ModelConfig) -> str:
    payload = json.dumps(dataclasses.asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


# --- run log -------------------------------------------------------------------

def log_columns(n_experts: int) -> list[str]:
    return (
        ["step", "split", "ce_loss", "aux_loss"]
        + [f"f_{i}" for i in range(n_experts)]
        + [f"c_{i}" for i in range(n_experts)]
        + ["saturation", "starvation", "lr"]
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    return f"{x:.8g}"


class LogWriter:
    """Append-only CSV run log with a fixed, documented column order."""

    def __init__(self, path, n_experts: int):
        self.path = Path(path)
        self.n_experts = n_experts
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(log_columns(n_experts))

    def write(self, row: dict) -> None:
        f = row["f"]
        c = row["c"]
        self._writer.writerow(
            [row["step"], row["split"], _fmt(row["ce_loss"]), _fmt(row["aux_loss"])]
            + [_fmt(v) for v in f]
            + [_fmt(v) for v in c]
            + [_fmt(row["saturation"]), _fmt(row["starvation"]), _fmt(row["lr"])]
        )

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def read_log(path) -> list[dict]:
    """Parse a run log back into typed rows (empty fields become NaN)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for raw in reader:
            row = {"step": int(raw["step"]), "split": raw["split"]}
            for key, val in raw.items():
                if key in ("step", "split"):
                    continue
                row[key] = float(val) if val else float("nan")
            rows.append(row)
    return rows


# --- trace files -----------------------------------------------------------------

def write_trace(
    path,
    results,
    config: ModelConfig,
    tokens: np.ndarray,
    stream_hash: str = "",
    label: str = "",
) -> Path:
    """Dump per-token routing records for one evaluation pass.

    `results` are the per-batch ForwardResults from evaluate(); `tokens`
    the (windows, seq_len) eval token matrix they were computed over.
    Records carry only routed-expert activations.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    moe_layers = config.moe_layers()
    seq_len = tokens.shape[1]
    header = {
        "schema": TRACE_SCHEMA,
        "kind": "routing-trace",
        "stream_hash": stream_hash,
        "config_digest": config_digest(config),
        "label": label,
        "n_tokens": int(tokens.size),
        "n_experts": config.n_routed_experts,
        "moe_layers": moe_layers,
        "seq_len": seq_len,
    }
    flat_tokens = tokens.reshape(-1)
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        offset = 0
        for res in results:
            n = res.loss_per_token.size
            losses = res.loss_per_token.reshape(-1)
            actives = {
                layer: [
                    np.flatnonzero(res.assignments[layer].z[r]).tolist()
                    if layer in res.assignments
                    else []
                    for r in range(n)
                ]
                for layer in moe_layers
            }
            for r in range(n):
                t = offset + r
                record = {
                    "t": t,
                    "pos": int(t % seq_len),
                    "loss": round(float(losses[r]), 6),
                    "domain": byte_domain(flat_tokens[t]),
                    "experts": [actives[layer][r] for layer in moe_layers],
                }
                fh.write(json.dumps(record) + "\n")
            offset += n
    return path


def read_trace(path) -> RoutingTrace:
    """Load a trace file; layer axis follows the header's moe_layers order."""
    path = Path(path)
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "routing-trace":
            raise InvalidInputError(f"{path} is not a routing trace file")
        if header.get("schema") != TRACE_SCHEMA:
            raise InvalidInputError(f"unsupported trace schema {header.get('schema')}")
        n_layers = len(header["moe_layers"])
        n_tokens = header["n_tokens"]
        edges = []
        positions = np.zeros(n_tokens, dtype=np.int64)
        losses = np.zeros(n_tokens, dtype=np.float64)
        domains = [""] * n_tokens
        seen = 0
        for line in fh:
            rec = json.loads(line)
            t = rec["t"]
            positions[t] = rec["pos"]
            losses[t] = rec["loss"]
            domains[t] = rec["domain"]
            for li, experts in enumerate(rec["experts"]):
                for e in experts:
                    edges.append((li, t, e))
            seen += 1
        if seen != n_tokens:
            raise InvalidInputError(
                f"trace {path} has {seen} records, header says {n_tokens}"
            )
    return RoutingTrace.from_edges(
        edges,
        n_layers=n_layers,
        n_tokens=n_tokens,
        n_experts=header["n_experts"],
        positions=positions,
        losses=losses,
        domains=tuple(domains),
        stream_hash=header.get("stream_hash", ""),
        label=header.get("label", str(path)),
    )


# --- checkpoints --------------------------------------------------------------------

def save_checkpoint(
    path,
    params: dict,
    config: ModelConfig,
    plan,
    optimizer,
    controllers: dict,
    step: int,
    stream_hash: str = "",
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    meta = {
        "schema": CHECKPOINT_SCHEMA,
        "step": int(step),
        "stream_hash": stream_hash,
        "model_config": dataclasses.asdict(config),
        "plan": dataclasses.asdict(plan),
        "optimizer": {
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "step": optimizer.step,
        },
        "controllers": {},
    }
    for name, tensor in params.items():
        arrays[f"param/{name}"] = tensor.values
        arrays[f"optm/{name}"] = optimizer.m[name]
        arrays[f"optv/{name}"] = optimizer.v[name]
    for layer, state in controllers.items():
        if isinstance(state, ThresholdState):
            arrays[f"thr/{layer}"] = state.c
            meta["controllers"][str(layer)] = {
                "kind": "thresholds",
                "beta": state.beta,
                "step": state.step,
                "warmup_steps": state.warmup_steps,
                "initialized": state.initialized,
            }
        elif isinstance(state, BiasState):
            arrays[f"bias/{layer}"] = state.b
            meta["controllers"][str(layer)] = {
                "kind": "bias",
                "update_rate": state.update_rate,
                "mode": state.mode,
            }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)
    return path


def load_checkpoint(path):
    """Returns (params, config, plan, optimizer, controllers, meta)."""
    from .trainer import OptimizerState, TrainPlan  # deferred: trainer imports persist

    path = Path(path)
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("schema") != CHECKPOINT_SCHEMA:
            raise InvalidConfigError(f"unsupported checkpoint schema {meta.get('schema')}")
        config = ModelConfig(**meta["model_config"])
        plan = TrainPlan(**meta["plan"])
        params = {}
        m = {}
        v = {}
        for key in data.files:
            if key.startswith("param/"):
                name = key[len("param/") :]
                params[name] = Tensor(data[key])
                m[name] = data[f"optm/{name}"]
                v[name] = data[f"optv/{name}"]
        opt_meta = meta["optimizer"]
        optimizer = OptimizerState(
            m=m,
            v=v,
            beta1=opt_meta["beta1"],
            beta2=opt_meta["beta2"],
            eps=opt_meta["eps"],
            step=opt_meta["step"],
        )
        controllers: dict = {}
        for key, info in meta["controllers"].items():
            layer = int(key)
            if info["kind"] == "thresholds":
                controllers[layer] = ThresholdState(
                    c=data[f"thr/{layer}"],
                    beta=info["beta"],
                    step=info["step"],
                    warmup_steps=info["warmup_steps"],
                    initialized=info["initialized"],
                )
            else:
                controllers[layer] = BiasState(
                    b=data[f"bias/{layer}"],
                    update_rate=info["update_rate"],
                    mode=info["mode"],
                )
    return params, config, plan, optimizer, controllers, meta
