"""Lifted dynamic junction tree inference for parameterised probabilistic models."""
from .model import (
    PRV,
    Constraint,
    DynamicModel,
    Evidence,
    GroundPRV,
    InconsistentEvidence,
    Logvar,
    Model,
    ModelError,
    ModelSyntaxError,
    Parfactor,
    TemporalQuery,
    load_model,
    parse_model,
)

__all__ = [
    "PRV",
    "Constraint",
    "DynamicModel",
    "Evidence",
    "GroundPRV",
    "InconsistentEvidence",
    "Logvar",
    "Model",
    "ModelError",
    "ModelSyntaxError",
    "Parfactor",
    "TemporalQuery",
    "load_model",
    "parse_model",
]
__version__ = "0.1.0"
