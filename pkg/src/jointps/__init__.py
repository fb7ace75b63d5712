"""Bayesian principal-stratification models for randomized studies with
one-sided noncompliance, fitted by data-augmentation Gibbs sampling."""

from .gibbs import ChainConfig, DrawStore, InitStrategy, SamplerError, run_chain, run_chains
from .model import (
    COMPLIER,
    NEVER_TAKER,
    Family,
    ModelSpec,
    ObservedDataset,
    Priors,
    Restriction,
    Theta,
    ValidationError,
    Variant,
    variant_spec,
)

__version__ = "0.1.0"

__all__ = [
    "COMPLIER",
    "NEVER_TAKER",
    "ChainConfig",
    "DrawStore",
    "Family",
    "InitStrategy",
    "ModelSpec",
    "ObservedDataset",
    "Priors",
    "Restriction",
    "SamplerError",
    "Theta",
    "ValidationError",
    "Variant",
    "run_chain",
    "run_chains",
    "variant_spec",
]
