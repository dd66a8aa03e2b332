"""Hyperpriors, field samplers, forward Monte Carlo and MCMC."""

from .priors import HyperPrior, sample_hyperprior
from .sampling import FieldModel, RBSampler, ForwardResult, mc_forward
from .bayes import (
    BayesProblem,
    EvidenceResult,
    gaussian_logpdf_reduced,
    importance_evidence,
    potential,
)
from .mcmc import ChainConfig, ChainResult, mcmc_gibbs, mcmc_gibbs_full
from .diagnostics import chain_diagnostics

__all__ = [
    "HyperPrior", "sample_hyperprior",
    "FieldModel", "RBSampler", "ForwardResult", "mc_forward",
    "BayesProblem", "EvidenceResult", "gaussian_logpdf_reduced",
    "importance_evidence", "potential",
    "ChainConfig", "ChainResult", "mcmc_gibbs", "mcmc_gibbs_full",
    "chain_diagnostics",
]
