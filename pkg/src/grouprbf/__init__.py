"""Bayesian group-sparse multi-response RBF network regression with a latent factor residual."""

from .chain import Chain
from .data import Dataset, load_dataset
from .groups import GroupStructure, contiguous_groups
from .priors import Hyperparams
from .sampler import SamplerConfig, SamplerError, run_chain

__all__ = [
    "Chain",
    "Dataset",
    "GroupStructure",
    "Hyperparams",
    "SamplerConfig",
    "SamplerError",
    "contiguous_groups",
    "load_dataset",
    "run_chain",
]
