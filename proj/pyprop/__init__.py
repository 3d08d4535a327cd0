"""Key-modulated personalized policies: Python interface to the C++ core."""

from ._pyprop import (
    Checkpoint,
    ExperimentConfig,
    Key,
    baseline,
    config_from_json,
    evaluate,
    gradcheck,
    hamming,
    leakage,
    load_checkpoint,
    load_config,
    obfuscate,
    personalize,
    pretrain,
)

__all__ = [
    "Checkpoint",
    "ExperimentConfig",
    "Key",
    "baseline",
    "config_from_json",
    "evaluate",
    "gradcheck",
    "hamming",
    "leakage",
    "load_checkpoint",
    "load_config",
    "obfuscate",
    "personalize",
    "pretrain",
]
