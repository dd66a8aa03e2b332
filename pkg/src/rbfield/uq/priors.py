"""Hyperpriors over the covariance parameters (ell, sigma).

1/ell is uniform on [1/ell_max, 1/ell_min]; sigma follows a normal law
truncated to [sigma_min, sigma_max], degenerate at m_sigma when the variance
is zero.
"""

from dataclasses import dataclass

import numpy as np

from ..covariance import HyperParams
from ..errors import NumericalError
from ..mesh import DIAM

REJECTION_LIMIT = 10**6


@dataclass(frozen=True)
class HyperPrior:
    ell_min: float
    sigma_min: float
    sigma_max: float
    m_sigma: float
    var_sigma: float
    ell_max: float = DIAM

    def __post_init__(self):
        problems = []
        if not 0 < self.ell_min < self.ell_max:
            problems.append(f"need 0 < ell_min < ell_max, got ({self.ell_min}, {self.ell_max})")
        if not 0 < self.sigma_min <= self.sigma_max:
            problems.append(f"need 0 < sigma_min <= sigma_max, got ({self.sigma_min}, {self.sigma_max})")
        if not self.sigma_min <= self.m_sigma <= self.sigma_max:
            problems.append(f"m_sigma={self.m_sigma} outside [{self.sigma_min}, {self.sigma_max}]")
        if self.var_sigma < 0:
            problems.append(f"var_sigma must be >= 0, got {self.var_sigma}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def sigma_fixed(self) -> bool:
        return self.var_sigma == 0.0

    def contains(self, tau: HyperParams) -> bool:
        return (self.ell_min <= tau.ell <= self.ell_max
                and self.sigma_min <= tau.sigma <= self.sigma_max)


def sample_hyperprior(prior: HyperPrior, rng: np.random.Generator) -> HyperParams:
    """Draw tau = (ell, sigma) from the hyperprior.

    sigma uses accept-reject on the untruncated normal; a degenerate
    variance returns m_sigma directly.
    """
    inv = rng.uniform(1.0 / prior.ell_max, 1.0 / prior.ell_min)
    ell = 1.0 / inv
    if prior.sigma_fixed:
        return HyperParams(ell=ell, sigma=prior.m_sigma)
    std = np.sqrt(prior.var_sigma)
    for _ in range(REJECTION_LIMIT):
        s = prior.m_sigma + std * rng.standard_normal()
        if prior.sigma_min <= s <= prior.sigma_max:
            return HyperParams(ell=ell, sigma=s)
    raise NumericalError(
        f"sigma rejection sampling failed after {REJECTION_LIMIT} tries; "
        f"bounds [{prior.sigma_min}, {prior.sigma_max}] are pathological for "
        f"N({prior.m_sigma}, {prior.var_sigma})"
    )


def sigma_log_prior_ratio(prior: HyperPrior, sigma_new: float, sigma_old: float) -> float:
    """log of the truncated-normal prior ratio (truncation constants cancel)."""
    if prior.sigma_fixed:
        return 0.0
    return -((sigma_new - prior.m_sigma) ** 2 - (sigma_old - prior.m_sigma) ** 2) / (2.0 * prior.var_sigma)
