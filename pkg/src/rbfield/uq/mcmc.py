"""Metropolis-within-Gibbs sampling of (tau, theta) posteriors.

Each iteration first moves the hyperparameters by a reflected Gaussian random
walk on (1/ell, sigma) -- reflection keeps the proposal symmetric, so the
acceptance ratio reduces to the Gaussian density ratio of the current field
under the proposed/current covariances (times the truncated-normal sigma
prior ratio when sigma is free).  The field then moves by a preconditioned
Crank-Nicolson step theta* = sqrt(1-beta^2) theta + beta N(0, C(tau)), whose
acceptance depends only on the potential difference.

The reduced-space variant keeps theta_rb in R^(n_rb) and evaluates densities
through the reduced eigenpairs; the full-space variant reruns the truncated
eigensolve per proposal and is only meant for small meshes and tests.
"""

from dataclasses import dataclass, field

import numpy as np

from ..covariance import HyperParams
from ..rng import stream
from .bayes import gaussian_logpdf_reduced, potential
from .priors import HyperPrior, sigma_log_prior_ratio
from .sampling import DOMAIN_CHAIN


@dataclass
class ChainConfig:
    n_steps: int
    beta: float = 0.1
    step_ell: float | None = None       # random-walk scale on 1/ell
    step_sigma: float | None = None
    init_tau: HyperParams | None = None
    init_theta: object = "zero"         # "zero" | "prior" | explicit coordinates
    burn_in: int = 0
    monitor: tuple = (1, 10, 100)       # 1-based reduced coordinates to record
    seed: int = 0
    chain_id: int = 0
    fix_tau: bool = False
    density_variant: str = "span"
    clip_tol_rel: float = 1e-12

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.burn_in < 0 or self.burn_in >= self.n_steps:
            raise ValueError("burn_in must be in [0, n_steps)")


@dataclass
class ChainResult:
    ells: np.ndarray
    sigmas: np.ndarray
    theta_monitor: np.ndarray          # (n_steps, n_monitor)
    monitor_indices: tuple
    acc_tau: np.ndarray                # bool per step (True when fix_tau skips)
    acc_theta: np.ndarray
    phis: np.ndarray
    burn_in: int
    final_theta: np.ndarray

    @property
    def acc_tau_rate(self) -> float:
        return float(self.acc_tau.mean())

    @property
    def acc_theta_rate(self) -> float:
        return float(self.acc_theta.mean())

    def kept(self, arr) -> np.ndarray:
        return np.asarray(arr)[self.burn_in:]


def reflect(x: float, lo: float, hi: float) -> float:
    """Fold a real number into [lo, hi] by repeated boundary reflection."""
    width = hi - lo
    y = (x - lo) % (2.0 * width)
    return lo + (y if y <= width else 2.0 * width - y)


def _check_alpha(a: float) -> float:
    assert 0.0 <= a <= 1.0, f"acceptance probability {a} outside [0, 1]"
    return a


def _steps(prior: HyperPrior, cfg: ChainConfig):
    step_v = cfg.step_ell
    if step_v is None:
        step_v = 0.1 * (1.0 / prior.ell_min - 1.0 / prior.ell_max)
    step_s = cfg.step_sigma
    if step_s is None:
        step_s = 0.1 * (prior.sigma_max - prior.sigma_min)
    return step_v, step_s


def _monitor_cols(monitor, dim):
    return tuple(m - 1 for m in monitor if 1 <= m <= dim)


def mcmc_gibbs(problem, sampler, prior: HyperPrior, cfg: ChainConfig) -> ChainResult:
    """Reduced-space Metropolis-within-Gibbs chain.

    `sampler` provides .basis (with W, mesh) and .reduced(tau); `problem` may
    be None, which means a zero potential (prior sampling).  Per-step RNG
    streams derive from (seed, chain domain, chain_id, step).
    """
    basis = sampler.basis
    n_sto = sampler.n_sto
    tau = cfg.init_tau or HyperParams(
        ell=2.0 / (1.0 / prior.ell_min + 1.0 / prior.ell_max), sigma=prior.m_sigma)
    if not prior.contains(tau):
        raise ValueError(f"initial tau {tau} outside the prior support")
    red = sampler.reduced(tau)

    obs_matrix = None
    if problem is not None and problem.mode == "field":
        obs_matrix = basis.W[problem.obs_cells, :]

    def phi_of(theta_rb) -> float:
        if problem is None:
            return 0.0
        if obs_matrix is not None:
            r = obs_matrix @ theta_rb - problem.y
            return float(0.5 * (r @ r) / problem.gamma2)
        return potential(problem, basis.W @ theta_rb)

    def logpdf(theta_rb, r) -> float:
        if cfg.density_variant == "span":
            vals, vecs = r.eigvals, r.coeffs
        else:
            vals, vecs = r.full_eigvals, r.full_coeffs
        return gaussian_logpdf_reduced(theta_rb, None, vals, vecs,
                                       clip_tol_rel=cfg.clip_tol_rel,
                                       variant=cfg.density_variant)

    rng0 = stream(cfg.seed, DOMAIN_CHAIN, cfg.chain_id, 0)
    if isinstance(cfg.init_theta, str):
        if cfg.init_theta == "prior":
            xi = rng0.standard_normal(n_sto)
            theta_rb = red.factor() @ xi[: red.eigvals.size]
        else:
            theta_rb = np.zeros(basis.n_rb)
    else:
        theta_rb = np.asarray(cfg.init_theta, dtype=float).copy()
        if theta_rb.shape != (basis.n_rb,):
            raise ValueError(f"init_theta must have length {basis.n_rb}")

    step_v, step_s = _steps(prior, cfg)
    cols = _monitor_cols(cfg.monitor, basis.n_rb)
    n = cfg.n_steps
    ells = np.empty(n)
    sigmas = np.empty(n)
    mon = np.empty((n, len(cols)))
    acc_t = np.zeros(n, dtype=bool)
    acc_x = np.zeros(n, dtype=bool)
    phis = np.empty(n)
    phi_cur = phi_of(theta_rb)
    beta = cfg.beta
    root = np.sqrt(1.0 - beta**2)

    for step in range(n):
        rng = stream(cfg.seed, DOMAIN_CHAIN, cfg.chain_id, step + 1)

        if not cfg.fix_tau:
            v_new = reflect(1.0 / tau.ell + step_v * rng.standard_normal(),
                            1.0 / prior.ell_max, 1.0 / prior.ell_min)
            if prior.sigma_fixed:
                s_new = tau.sigma
            else:
                s_new = reflect(tau.sigma + step_s * rng.standard_normal(),
                                prior.sigma_min, prior.sigma_max)
            tau_new = HyperParams(ell=1.0 / v_new, sigma=s_new)
            red_new = sampler.reduced(tau_new)
            log_a = (logpdf(theta_rb, red_new) - logpdf(theta_rb, red)
                     + sigma_log_prior_ratio(prior, s_new, tau.sigma))
            alpha = _check_alpha(min(1.0, np.exp(min(log_a, 0.0))))
            if rng.uniform() < alpha:
                tau, red = tau_new, red_new
                acc_t[step] = True
        else:
            acc_t[step] = True

        xi = rng.standard_normal(n_sto)
        fresh = red.factor() @ xi[: red.eigvals.size]
        prop = root * theta_rb + beta * fresh
        phi_prop = phi_of(prop)
        alpha = _check_alpha(min(1.0, np.exp(min(phi_cur - phi_prop, 0.0))))
        if rng.uniform() < alpha:
            theta_rb = prop
            phi_cur = phi_prop
            acc_x[step] = True

        ells[step] = tau.ell
        sigmas[step] = tau.sigma
        mon[step] = theta_rb[list(cols)] if cols else ()
        phis[step] = phi_cur

    return ChainResult(ells=ells, sigmas=sigmas, theta_monitor=mon,
                       monitor_indices=tuple(c + 1 for c in cols),
                       acc_tau=acc_t, acc_theta=acc_x, phis=phis,
                       burn_in=cfg.burn_in, final_theta=theta_rb)


def mcmc_gibbs_full(problem, model, prior: HyperPrior, cfg: ChainConfig) -> ChainResult:
    """Full-space variant: the truncated eigensolve runs per tau proposal.

    Only sensible on small meshes; the density is evaluated on the truncated
    eigenpairs through the M-orthogonal projection h^2 Psi^T theta.
    """
    mesh = model.mesh
    h2 = mesh.h**2
    tau = cfg.init_tau or HyperParams(
        ell=2.0 / (1.0 / prior.ell_min + 1.0 / prior.ell_max), sigma=prior.m_sigma)
    if not prior.contains(tau):
        raise ValueError(f"initial tau {tau} outside the prior support")
    basis = model.kl_basis(tau)

    def phi_of(theta) -> float:
        return 0.0 if problem is None else potential(problem, theta)

    def logpdf(theta, b) -> float:
        coeffs = h2 * (b.eigvecs.T @ theta)
        lam = b.eigvals
        keep = lam > cfg.clip_tol_rel * lam.max()
        return float(-0.5 * np.sum(coeffs[keep]**2 / lam[keep])
                     - 0.5 * np.sum(np.log(2.0 * np.pi * lam[keep])))

    rng0 = stream(cfg.seed, DOMAIN_CHAIN, cfg.chain_id, 0)
    if cfg.init_theta == "prior":
        xi = rng0.standard_normal(model.n_sto)
        theta = basis.factor() @ xi[: basis.n_sto]
    else:
        theta = np.zeros(mesh.n_cells)

    step_v, step_s = _steps(prior, cfg)
    cols = _monitor_cols(cfg.monitor, mesh.n_cells)
    n = cfg.n_steps
    ells = np.empty(n)
    sigmas = np.empty(n)
    mon = np.empty((n, len(cols)))
    acc_t = np.zeros(n, dtype=bool)
    acc_x = np.zeros(n, dtype=bool)
    phis = np.empty(n)
    phi_cur = phi_of(theta)
    beta = cfg.beta
    root = np.sqrt(1.0 - beta**2)

    for step in range(n):
        rng = stream(cfg.seed, DOMAIN_CHAIN, cfg.chain_id, step + 1)

        if not cfg.fix_tau:
            v_new = reflect(1.0 / tau.ell + step_v * rng.standard_normal(),
                            1.0 / prior.ell_max, 1.0 / prior.ell_min)
            if prior.sigma_fixed:
                s_new = tau.sigma
            else:
                s_new = reflect(tau.sigma + step_s * rng.standard_normal(),
                                prior.sigma_min, prior.sigma_max)
            tau_new = HyperParams(ell=1.0 / v_new, sigma=s_new)
            basis_new = model.kl_basis(tau_new)
            log_a = (logpdf(theta, basis_new) - logpdf(theta, basis)
                     + sigma_log_prior_ratio(prior, s_new, tau.sigma))
            alpha = _check_alpha(min(1.0, np.exp(min(log_a, 0.0))))
            if rng.uniform() < alpha:
                tau, basis = tau_new, basis_new
                acc_t[step] = True
        else:
            acc_t[step] = True

        xi = rng.standard_normal(model.n_sto)
        fresh = basis.factor() @ xi[: basis.n_sto]
        prop = root * theta + beta * fresh
        phi_prop = phi_of(prop)
        alpha = _check_alpha(min(1.0, np.exp(min(phi_cur - phi_prop, 0.0))))
        if rng.uniform() < alpha:
            theta = prop
            phi_cur = phi_prop
            acc_x[step] = True

        ells[step] = tau.ell
        sigmas[step] = tau.sigma
        mon[step] = theta[list(cols)] if cols else ()
        phis[step] = phi_cur

    return ChainResult(ells=ells, sigmas=sigmas, theta_monitor=mon,
                       monitor_indices=tuple(c + 1 for c in cols),
                       acc_tau=acc_t, acc_theta=acc_x, phis=phis,
                       burn_in=cfg.burn_in, final_theta=theta)
