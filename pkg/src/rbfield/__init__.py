"""Reduced-basis sampling of hyperparameter-dependent Gaussian random fields.

The package is organised around the pipeline

    mesh -> covariance -> kl -> rb -> (fem) -> uq -> cli

* :mod:`rbfield.mesh` -- uniform cell/triangle discretisations of the unit square
* :mod:`rbfield.covariance` -- Matern-type kernels, their separable series
  approximation, covariance assembly and PSD repair
* :mod:`rbfield.kl` -- truncated Karhunen-Loeve eigensolves and field sampling
* :mod:`rbfield.rb` -- offline snapshot/POD reduced basis, online reduced
  eigenproblems
* :mod:`rbfield.fem` -- linear triangular FEM for the log-diffusion flow model
* :mod:`rbfield.uq` -- hyperpriors, full/reduced samplers, forward Monte Carlo,
  importance sampling and Metropolis-within-Gibbs pCN MCMC
* :mod:`rbfield.cli` -- experiment drivers configured from TOML files
"""

from .errors import ConfigError, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "NumericalError", "__version__"]
