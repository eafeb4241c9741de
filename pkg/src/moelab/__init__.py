"""Desk-scale laboratory for sparse Mixture-of-Experts routing."""

from .routing import (
    Assignment,
    RoutingConfig,
    ScoreMatrix,
    ec_route,
    et_route,
    gate,
    mix_outputs,
    tc_route,
)
from .balance import (
    BiasState,
    CapacityReport,
    LoadStats,
    aux_loss,
    bias_update,
    enforce_capacity,
    load_stats,
)
from .thresholds import ThresholdState, ema_update, kth_largest, route_with_schedule

__all__ = [
    "Assignment",
    "RoutingConfig",
    "ScoreMatrix",
    "ec_route",
    "et_route",
    "gate",
    "mix_outputs",
    "tc_route",
    "BiasState",
    "CapacityReport",
    "LoadStats",
    "aux_loss",
    "bias_update",
    "enforce_capacity",
    "load_stats",
    "ThresholdState",
    "ema_update",
    "kth_largest",
    "route_with_schedule",
]

__version__ = "0.1.0"
