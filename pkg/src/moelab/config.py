"""Run configuration documents: JSON in, validated dataclasses out.

A run config has a schema version and up to three sections (model, train,
sim). Unknown keys anywhere are rejected outright — silent typos in an
experiment config are worse than a hard failure.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .errors import InvalidConfigError
from .model import ModelConfig
from .simulate import SimConfig
from .trainer import TrainPlan, width_lambda

__all__ = ["RunConfig", "load_run_config", "default_run_config", "CONFIG_SCHEMA"]

CONFIG_SCHEMA = 1


@dataclasses.dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainPlan
    sim: SimConfig


def _build(section: str, cls, payload: dict):
    if not isinstance(payload, dict):
        raise InvalidConfigError(f"section {section!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise InvalidConfigError(
            f"unknown keys in {section!r}: {sorted(unknown)}; allowed: {sorted(allowed)}"
        )
    if "expert_offsets" in payload and isinstance(payload["expert_offsets"], list):
        payload = dict(payload, expert_offsets=tuple(payload["expert_offsets"]))
    try:
        return cls(**payload)
    except TypeError as exc:
        raise InvalidConfigError(f"bad value in section {section!r}: {exc}") from exc


def load_run_config(path, seed: int | None = None) -> RunConfig:
    """Parse and validate a JSON run config.

    The train plan's width-scaling factor is derived from the model width
    unless the document pins `mup_lambda` explicitly. A `seed` argument
    overrides both the train and sim seeds.
    """
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise InvalidConfigError("run config must be a JSON object")
    schema = raw.get("schema")
    if schema != CONFIG_SCHEMA:
        raise InvalidConfigError(f"unsupported config schema {schema!r}")
    unknown = set(raw) - {"schema", "model", "train", "sim"}
    if unknown:
        raise InvalidConfigError(f"unknown top-level keys: {sorted(unknown)}")

    model = _build("model", ModelConfig, dict(raw.get("model", {})))
    train_payload = dict(raw.get("train", {}))
    if "mup_lambda" not in train_payload:
        train_payload["mup_lambda"] = width_lambda(model.d_model)
    train = _build("train", TrainPlan, train_payload)
    sim_payload = dict(raw.get("sim", {}))
    sim_default = {"dense": "et", "tc_aux": "tc"}.get(model.routing_mode, model.routing_mode)
    sim_payload.setdefault("mode", sim_default)
    sim_payload.setdefault("n_experts", model.n_routed_experts)
    sim_payload.setdefault("granularity", model.granularity)
    sim_payload.setdefault("expansion", model.expansion)
    sim = _build("sim", SimConfig, sim_payload)
    if seed is not None:
        train = dataclasses.replace(train, seed=seed)
        sim = dataclasses.replace(sim, seed=seed)
    return RunConfig(model=model, train=train, sim=sim)


def default_run_config(mode: str = "et") -> dict:
    """A complete, valid config document for `moelab train`."""
    return {
        "schema": CONFIG_SCHEMA,
        "model": {"routing_mode": mode},
        "train": {},
        "sim": {},
    }
