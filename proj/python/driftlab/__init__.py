"""Instruction drift experiments on a toy chat model."""

from ._driftlab import (
    DATA_DIR,
    ConfigError,
    DomainError,
    SchemaError,
    cfg_combine,
    epsilon_tilde,
    hemisphere_rate,
    load_dataset,
    score,
    simulate,
    split_softmax,
    sweep,
    system_mass,
    wendel_probability,
)

__version__ = "0.3.0"

__all__ = [
    "DATA_DIR",
    "ConfigError",
    "DomainError",
    "SchemaError",
    "cfg_combine",
    "epsilon_tilde",
    "hemisphere_rate",
    "load_dataset",
    "score",
    "simulate",
    "split_softmax",
    "sweep",
    "system_mass",
    "wendel_probability",
]
