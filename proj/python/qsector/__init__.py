"""Sector-rotation PPO agents with classical and simulated quantum backbones."""

from ._core import (
    ConfigError,
    DataError,
    backtest,
    build_features,
    clipped_surrogate,
    compare,
    compute_gae,
    compute_metrics,
    load_panel,
    max_drawdown,
    qnn_forward,
    qnn_param_shift,
    resolve_config,
    synth_panel,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "backtest",
    "build_features",
    "clipped_surrogate",
    "compare",
    "compute_gae",
    "compute_metrics",
    "load_panel",
    "max_drawdown",
    "qnn_forward",
    "qnn_param_shift",
    "resolve_config",
    "synth_panel",
    "train",
]
