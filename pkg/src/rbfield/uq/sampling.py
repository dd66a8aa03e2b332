"""Field samplers and forward Monte Carlo.

FieldModel.sample draws one field by assembling the covariance at tau and
solving the truncated eigenproblem from scratch; RBSampler replaces the full
eigensolve by the reduced one and expands theta = W theta_rb.  mc_forward
pushes either sampler through a quantity of interest with a numerically
stable streaming mean/variance.
"""

from dataclasses import dataclass, field

import numpy as np

from ..covariance import CovMatrix, HyperParams, assemble_cov
from ..kl import KLBasis, eigs
from ..mesh import FieldMesh
from ..rng import stream
from .priors import HyperPrior, sample_hyperprior

# stream domains, to keep RNG substreams of one seed disjoint
DOMAIN_FORWARD = 1
DOMAIN_EVIDENCE = 2
DOMAIN_CHAIN = 3
DOMAIN_DATA = 4


@dataclass(eq=False)
class FieldModel:
    """Mean-zero parameterised field model sampled through full eigensolves."""

    mesh: FieldMesh
    kernel: object                  # radial kernel family
    n_sto: int
    mean: np.ndarray | None = None
    dense_limit: int | None = None
    matrix_free: bool = False

    def covariance(self, tau: HyperParams) -> CovMatrix:
        kwargs = {} if self.dense_limit is None else {"dense_limit": self.dense_limit}
        return assemble_cov(self.mesh, self.kernel, tau, matrix_free=self.matrix_free, **kwargs)

    def kl_basis(self, tau: HyperParams, rng=None) -> KLBasis:
        return eigs(self.covariance(tau), self.n_sto, rng=rng)

    def sample(self, tau: HyperParams, rng: np.random.Generator) -> np.ndarray:
        """One draw of theta = mean + Psi(tau) xi, xi ~ N(0, Id)."""
        basis = self.kl_basis(tau, rng=rng)
        xi = rng.standard_normal(self.n_sto)
        theta = basis.factor() @ xi[: basis.n_sto]
        if self.mean is not None:
            theta = theta + self.mean
        return theta


@dataclass(eq=False)
class RBSampler:
    """Reduced-basis sampler: online eigensolve + lift (Algorithm-2 style)."""

    basis: object                   # rb.ReducedBasis
    n_sto: int
    mean: np.ndarray | None = None

    def reduced(self, tau: HyperParams):
        from ..rb import reduced_eigs
        return reduced_eigs(self.basis, tau, self.n_sto)

    def sample_reduced(self, tau: HyperParams, rng: np.random.Generator) -> np.ndarray:
        red = self.reduced(tau)
        xi = rng.standard_normal(self.n_sto)
        return red.factor() @ xi[: red.eigvals.size]

    def sample(self, tau: HyperParams, rng: np.random.Generator):
        """Returns (theta_rb, theta)."""
        theta_rb = self.sample_reduced(tau, rng)
        theta = self.basis.W @ theta_rb
        if self.mean is not None:
            theta = theta + self.mean
        return theta_rb, theta

    def field_of(self, sample) -> np.ndarray:
        return sample[1]


def _field_of(sampler, sample):
    return sampler.field_of(sample) if hasattr(sampler, "field_of") else sample


@dataclass
class ForwardResult:
    """Streaming summary of a pushforward Monte Carlo run."""

    mean: float
    variance: float
    n: int
    rows: list                      # (index, ell, sigma, q)
    complete: bool = True

    def qs(self) -> np.ndarray:
        return np.array([r[3] for r in self.rows])


def mc_forward(prior: HyperPrior, sampler, qoi, n_samples: int, seed: int,
               force_theta: np.ndarray | None = None, domain: int = DOMAIN_FORWARD,
               rep: int = 0) -> ForwardResult:
    """Monte Carlo pushforward of qoi(theta) under the hierarchical field law.

    Per-sample RNG streams are derived from (seed, domain, rep, index), so
    results do not depend on execution order and independent repetitions can
    share one seed.  `force_theta` is a debug hook replacing every draw by a
    fixed field.  On a solver failure the partial summary is attached to the
    raised exception as ``exc.partial_result``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mean = 0.0
    m2 = 0.0
    rows = []
    try:
        for i in range(n_samples):
            rng = stream(seed, domain, rep, i)
            tau = sample_hyperprior(prior, rng)
            if force_theta is not None:
                theta = force_theta
            else:
                theta = _field_of(sampler, sampler.sample(tau, rng))
            q = float(qoi(theta))
            rows.append((i, tau.ell, tau.sigma, q))
            delta = q - mean
            mean += delta / (i + 1)
            m2 += delta * (q - mean)
    except Exception as exc:
        exc.partial_result = ForwardResult(
            mean=mean, variance=m2 / max(len(rows) - 1, 1), n=len(rows), rows=rows,
            complete=False,
        )
        raise
    variance = m2 / (n_samples - 1) if n_samples > 1 else 0.0
    return ForwardResult(mean=mean, variance=variance, n=n_samples, rows=rows)
