"""Potential, importance-sampling evidence and reduced Gaussian densities.

The potential is Phi(theta) = 1/2 ||Gamma^(-1/2) (G(theta) - y)||^2 with
Gamma = gamma^2 I; G either reads the field at the observation cells or runs
the PDE solve and evaluates the pressure at the observation points.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..covariance import HyperParams
from ..fem import FemProblem, observe, solve_pde
from ..mesh import FieldMesh
from ..rng import stream
from .priors import HyperPrior, sample_hyperprior
from .sampling import DOMAIN_EVIDENCE, _field_of


@dataclass(eq=False)
class BayesProblem:
    """Inverse problem data: forward map selector, observations and noise."""

    mode: str                           # "field" | "pde"
    y: np.ndarray
    gamma2: float
    obs_points: np.ndarray
    field_mesh: FieldMesh
    fem: FemProblem | None = None
    obs_cells: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.mode not in ("field", "pde"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.gamma2 > 0:
            raise ValueError("noise variance gamma2 must be positive")
        self.y = np.asarray(self.y, dtype=float)
        self.obs_points = np.atleast_2d(np.asarray(self.obs_points, dtype=float))
        if np.any(self.obs_points <= 0.0) or np.any(self.obs_points >= 1.0):
            raise ValueError("observation points must be interior to the unit square")
        if self.mode == "pde" and self.fem is None:
            raise ValueError("pde mode needs a FemProblem")
        if self.y.shape[0] != self.obs_points.shape[0]:
            raise ValueError("y length must match the number of observation points")
        self.obs_cells = self.field_mesh.cell_index(self.obs_points)

    def forward(self, theta: np.ndarray) -> np.ndarray:
        if self.mode == "field":
            return theta[self.obs_cells]
        p = solve_pde(self.fem, theta)
        return observe(self.fem.mesh, p, self.obs_points)


def potential(problem: BayesProblem, theta: np.ndarray) -> float:
    """Negative log-likelihood 1/(2 gamma^2) ||G(theta) - y||^2."""
    r = problem.forward(theta) - problem.y
    return float(0.5 * (r @ r) / problem.gamma2)


@dataclass
class EvidenceResult:
    z: float
    log_z: float
    post_mean_ell: float
    post_var_ell: float
    post_mean_sigma: float
    ess: float
    n: int
    degenerate: bool = False


def importance_evidence(problem: BayesProblem, prior: HyperPrior, sampler,
                        n_samples: int, seed: int, domain: int = DOMAIN_EVIDENCE,
                        rep: int = 0) -> EvidenceResult:
    """Prior importance sampling: Z = mean exp(-Phi), self-normalised moments.

    Weights are handled in log space; degenerate (all-zero) weights are
    reported instead of dividing by zero.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    log_w = np.empty(n_samples)
    ells = np.empty(n_samples)
    sigmas = np.empty(n_samples)
    for i in range(n_samples):
        rng = stream(seed, domain, rep, i)
        tau = sample_hyperprior(prior, rng)
        theta = _field_of(sampler, sampler.sample(tau, rng))
        log_w[i] = -potential(problem, theta)
        ells[i] = tau.ell
        sigmas[i] = tau.sigma
    lse = logsumexp(log_w)
    if not np.isfinite(lse):
        return EvidenceResult(z=0.0, log_z=-np.inf, post_mean_ell=np.nan,
                              post_var_ell=np.nan, post_mean_sigma=np.nan,
                              ess=0.0, n=n_samples, degenerate=True)
    log_z = lse - np.log(n_samples)
    w = np.exp(log_w - lse)                      # normalised weights
    mean_ell = float(w @ ells)
    var_ell = float(w @ (ells - mean_ell) ** 2)
    ess = float(1.0 / (w @ w))
    z = float(np.exp(log_z))
    # z underflowing double precision means every raw weight was zero
    return EvidenceResult(z=z, log_z=float(log_z),
                          post_mean_ell=mean_ell, post_var_ell=var_ell,
                          post_mean_sigma=float(w @ sigmas), ess=ess, n=n_samples,
                          degenerate=(z == 0.0))


def gaussian_logpdf_reduced(theta_rb: np.ndarray, mean_rb: np.ndarray | None,
                            eigvals: np.ndarray, eigvecs: np.ndarray,
                            clip_tol_rel: float = 1e-12, variant: str = "span") -> float:
    """Log pseudo-density of a rank-deficient Gaussian on the reduced space.

    variant="span" projects the residual onto the eigenvectors with
    eigenvalue above clip_tol_rel * lambda_max and ignores the out-of-span
    component; variant="fullrank" uses every direction with the eigenvalues
    floored at the same threshold.
    """
    r = np.asarray(theta_rb, dtype=float)
    if mean_rb is not None:
        r = r - mean_rb
    eigvals = np.asarray(eigvals, dtype=float)
    if eigvals.size == 0 or eigvals.max() <= 0:
        return -np.inf
    thresh = clip_tol_rel * eigvals.max()
    if variant == "span":
        keep = eigvals > thresh
        lam = eigvals[keep]
        coef = eigvecs[:, keep].T @ r
    elif variant == "fullrank":
        lam = np.maximum(eigvals, thresh)
        coef = eigvecs.T @ r
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return float(-0.5 * np.sum(coef**2 / lam) - 0.5 * np.sum(np.log(2.0 * np.pi * lam)))


def make_field_observation_data(model, tau_truth: HyperParams, obs_points, gamma2: float,
                                seed: int, domain: int = 4):
    """Synthetic field-observation data: truth draw + iid noise at the points.

    Returns (y, theta_truth).
    """
    rng = stream(seed, domain, 0)
    theta = _field_of(model, model.sample(tau_truth, rng))
    cells = model_mesh(model).cell_index(np.atleast_2d(obs_points))
    y = theta[cells] + np.sqrt(gamma2) * rng.standard_normal(len(cells))
    return y, theta


def make_pde_observation_data(model, fem_problem: FemProblem, tau_truth: HyperParams,
                              obs_points, gamma2: float, seed: int, domain: int = 4):
    """Synthetic PDE-observation data from a truth field draw."""
    rng = stream(seed, domain, 0)
    theta = _field_of(model, model.sample(tau_truth, rng))
    p = solve_pde(fem_problem, theta)
    y = observe(fem_problem.mesh, p, obs_points)
    y = y + np.sqrt(gamma2) * rng.standard_normal(len(y))
    return y, theta


def model_mesh(model) -> FieldMesh:
    return model.basis.mesh if hasattr(model, "basis") else model.mesh
