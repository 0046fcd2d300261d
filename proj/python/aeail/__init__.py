"""Adversarial imitation learning with auto-encoder rewards."""

from ._core import (
    ConfigError,
    DataError,
    DemonstrationSet,
    EnvSpec,
    NumericFault,
    RewardModel,
    ShapeError,
    cli,
    corrupt_demos,
    env_reset,
    env_step,
    expert_action,
    generate_demos,
    grad_check,
    kl_diag_gaussian_to_prior,
    load_demos,
    make_env_spec,
    make_reward_model,
    relative_improvement,
    resolve_config,
    reward_from_error_js,
    reward_from_error_w,
    save_demos,
    scaled_reward,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DemonstrationSet",
    "EnvSpec",
    "NumericFault",
    "RewardModel",
    "ShapeError",
    "cli",
    "corrupt_demos",
    "env_reset",
    "env_step",
    "expert_action",
    "generate_demos",
    "grad_check",
    "kl_diag_gaussian_to_prior",
    "load_demos",
    "make_env_spec",
    "make_reward_model",
    "relative_improvement",
    "resolve_config",
    "reward_from_error_js",
    "reward_from_error_w",
    "save_demos",
    "scaled_reward",
    "train",
]
