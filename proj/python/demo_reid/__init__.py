"""Python bindings for the DeMo multi-modal re-identification core."""

from ._core import (
    CheckpointError,
    ConfigError,
    DemoError,
    EvaluationError,
    IngestionError,
    InputError,
    Model,
    SamplingError,
    ce_label_smooth,
    config_keys,
    default_config,
    evaluate,
    synthesize,
    train,
    triplet_batch_hard,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DemoError",
    "EvaluationError",
    "IngestionError",
    "InputError",
    "Model",
    "SamplingError",
    "ce_label_smooth",
    "config_keys",
    "default_config",
    "evaluate",
    "synthesize",
    "train",
    "triplet_batch_hard",
]
