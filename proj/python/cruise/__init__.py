"""Python access to the highway decision and motion-control stack."""

import json as _json

from ._cruise import (
    CruiseError,
    DrivingTask,
    VehicleParams,
    VehicleState,
    default_config_json,
    evaluate_policy,
    normalize_config_json,
    quintic_reference,
    sideslip,
    solve_qp,
    step_dynamics,
    synth_and_train_irl,
    train_agent,
)


def default_config():
    """Default experiment configuration as a dict."""
    return _json.loads(default_config_json())


def config_json(overrides=None):
    """Validated JSON text for a partial config dict."""
    return normalize_config_json(_json.dumps(overrides or {}))


__all__ = [
    "CruiseError",
    "DrivingTask",
    "VehicleParams",
    "VehicleState",
    "config_json",
    "default_config",
    "evaluate_policy",
    "quintic_reference",
    "sideslip",
    "solve_qp",
    "step_dynamics",
    "synth_and_train_irl",
    "train_agent",
]
