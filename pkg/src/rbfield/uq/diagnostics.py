"""Cross-chain summaries: means, variances, CoV tables, acceptance rates."""

import numpy as np


def _cov(values: np.ndarray) -> float:
    """Coefficient of variation across estimates: std / |mean| (0 for a single one)."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    m = values.mean()
    s = values.std(ddof=1)
    if s == 0.0:
        return 0.0
    return float(s / abs(m)) if m != 0.0 else float("inf")


def chain_diagnostics(chains) -> dict:
    """Posterior mean/variance of ell and sigma per chain plus cross-chain CoVs.

    `chains` is a nonempty sequence of ChainResult objects; burn-in recorded
    on each chain is discarded before summarising.
    """
    chains = list(chains)
    if not chains:
        raise ValueError("need at least one chain")
    per_chain = []
    for ch in chains:
        ells = ch.kept(ch.ells)
        sigmas = ch.kept(ch.sigmas)
        if ells.size == 0:
            raise ValueError("chain has no post-burn-in samples")
        per_chain.append({
            "ell_mean": float(ells.mean()),
            "ell_var": float(ells.var(ddof=1)) if ells.size > 1 else 0.0,
            "sigma_mean": float(sigmas.mean()),
            "sigma_var": float(sigmas.var(ddof=1)) if sigmas.size > 1 else 0.0,
            "acc_tau": ch.acc_tau_rate,
            "acc_theta": ch.acc_theta_rate,
        })
    table = {}
    for key in ("ell_mean", "ell_var", "sigma_mean", "sigma_var"):
        vals = np.array([c[key] for c in per_chain])
        table[key] = {
            "estimates": vals.tolist(),
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            "cov": _cov(vals),
        }
    table["acceptance"] = {
        "tau": [c["acc_tau"] for c in per_chain],
        "theta": [c["acc_theta"] for c in per_chain],
    }
    table["n_chains"] = len(chains)
    return table
