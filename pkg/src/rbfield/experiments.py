"""Experiment drivers behind the CLI.

Every driver takes a validated RunConfig, writes its artifacts (manifest,
CSVs, summary.json) into the run directory, and returns the summary dict.
The computational cores are plain functions over explicit arguments so the
test suite can reuse them without a config file.
"""

import json
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import __version__, matio, rb
from .config import RunConfig
from .covariance import (
    ExponentialKernel,
    HyperParams,
    SeparableKernel,
    assemble_cov,
    make_kernel,
    truncation_error_sup,
)
from .errors import ConfigError
from .fem import build_fem_problem, lattice_points, outflow_qoi
from .kl import eigs, select_truncation
from .mesh import DIAM, build_field_mesh, build_tri_mesh
from .rng import stream
from .uq import (
    BayesProblem,
    ChainConfig,
    FieldModel,
    RBSampler,
    chain_diagnostics,
    importance_evidence,
    mc_forward,
    mcmc_gibbs,
)
from .uq.bayes import make_field_observation_data, make_pde_observation_data, model_mesh
from .uq.sampling import DOMAIN_DATA


# ---------------------------------------------------------------------------
# shared helpers

def resolve_truncation(prior, A: float = 0.9, coarse_n_side: int = 32,
                       n_grid: int = 10) -> int:
    """Variance-capture truncation, mode=all, over a log-spaced ell grid.

    Spectra are computed densely on a coarse mesh (the eigenvalue counts are
    essentially resolution independent once the correlation length is
    resolved); sigma cancels in the capture ratio.
    """
    mesh = build_field_mesh(coarse_n_side)
    ells = np.exp(np.linspace(np.log(prior.ell_min), np.log(prior.ell_max), n_grid))
    spectra = []
    for ell in ells:
        C = assemble_cov(mesh, ExponentialKernel(), HyperParams(ell=float(ell), sigma=1.0))
        vals = sla.eigh(C.dense() / mesh.h**2, eigvals_only=True)[::-1]
        spectra.append(np.maximum(vals, 0.0))
    return select_truncation(spectra, A, mode="all")


def use_matrix_free(cfg: RunConfig, n_cells: int) -> bool:
    if cfg.sampler.matrix_free == "on":
        return True
    if cfg.sampler.matrix_free == "off":
        return False
    return n_cells > 2048


def resolved_n_sto(cfg: RunConfig) -> int:
    if cfg.prior.n_sto > 0:
        return cfg.prior.n_sto
    return resolve_truncation(cfg.prior.hyperprior(), cfg.prior.variance_fraction,
                              coarse_n_side=min(cfg.mesh.field_n_side, 32))


def field_model(cfg: RunConfig, n_sto: int) -> FieldModel:
    mesh = build_field_mesh(cfg.mesh.field_n_side)
    kernel = make_kernel(cfg.kernel.name, cfg.kernel.nu, cfg.kernel.n_lin)
    return FieldModel(mesh=mesh, kernel=kernel, n_sto=n_sto,
                      dense_limit=cfg.dense_limit,
                      matrix_free=use_matrix_free(cfg, mesh.n_cells))


def flowcell_problem(cfg: RunConfig):
    field_mesh = build_field_mesh(cfg.mesh.field_n_side)
    tri = build_tri_mesh(cfg.mesh.fem_n_side)
    return build_fem_problem(tri, field_mesh, bc="flow_cell")


def write_manifest(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, "config": cfg.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def write_summary(out: Path, summary: dict) -> dict:
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def write_gnuplot(out: Path, name: str, csv: str, using: str, title: str) -> None:
    (out / f"{name}.gp").write_text(
        "set datafile separator ','\n"
        f"set title '{title}'\n"
        "set logscale xy\n"
        f"plot '{csv}' using {using} with linespoints notitle\n"
    )


# ---------------------------------------------------------------------------
# lin_error

def lin_error_surface(nu: float, sigma: float, n_lin_values, ell_mins, grid_density: int):
    rows = []
    for L in n_lin_values:
        kernel = SeparableKernel(nu, int(L))
        for lm in ell_mins:
            err = truncation_error_sup(kernel, float(lm), DIAM, grid_density, sigma)
            rows.append((int(L), float(lm), err))
    return rows


def run_lin_error(cfg: RunConfig, out: Path) -> dict:
    p = cfg.lin_error
    ell_mins = np.logspace(p.ell_min_log10_lo, p.ell_min_log10_hi, p.n_ell_min)
    ell_mins = np.minimum(ell_mins, DIAM)
    rows = lin_error_surface(cfg.kernel.nu, cfg.kernel.sigma,
                             range(1, p.n_lin_max + 1), ell_mins, p.grid_density)
    matio.write_csv(out / "lin_error.csv", ["n_lin", "ell_min", "sup_error"], rows)
    if cfg.emit_gnuplot:
        write_gnuplot(out, "lin_error", "lin_error.csv", "1:3",
                      "series truncation error vs number of terms")
    errs = np.array([r[2] for r in rows])
    return write_summary(out, {
        "experiment": "lin_error",
        "n_rows": len(rows),
        "min_error": float(np.nanmin(errs)),
        "max_error": float(np.nanmax(errs)),
    })


# ---------------------------------------------------------------------------
# rb_accuracy

def rb_accuracy_table(n_side: int, n_snapshots: int, n_sto: int, n_lin: int,
                      n_rb_list, test_ells, sigma: float = 1.0,
                      lambda_min: float = 0.0, rng=None):
    """Relative reduced eigenvalue errors vs dense references.

    Returns (rows, n_rb_available); rows are (ell, n_rb, index, rel_err).
    The POD basis is nested, so one offline pass serves every basis size.
    """
    mesh = build_field_mesh(n_side)
    snaps = rb.snapshot_grid(rb.default_snapshot_ell_min(n_snapshots), DIAM, n_snapshots)
    kernel = SeparableKernel(0.5, n_lin)
    basis = rb.offline_reduced_basis(
        mesh, kernel, snaps, n_sto=n_sto, sigma=sigma, lambda_min=lambda_min,
        exact_kernel=ExponentialKernel(), rng=rng,
        matrix_free=mesh.n_cells > 2048, dense_limit=max(mesh.n_cells, 8192),
    )
    refs = {}
    for ell in test_ells:
        cov = assemble_cov(mesh, ExponentialKernel(), HyperParams(float(ell), sigma),
                           dense_limit=max(mesh.n_cells, 8192))
        refs[ell] = eigs(cov, n_sto).eigvals
    indices = [1, 10, 100]
    rows = []
    for r in n_rb_list:
        r = int(min(r, basis.n_rb))
        sub = rb.ReducedBasis(mesh=mesh, W=basis.W[:, :r], pod_sv=basis.pod_sv[:r],
                              lambda_min=basis.lambda_min, kernel=kernel,
                              comp_rb=basis.comp_rb[:, :r, :r],
                              snapshot_ells=basis.snapshot_ells)
        for ell in test_ells:
            red = rb.reduced_eigs(sub, HyperParams(float(ell), sigma), min(n_sto, r))
            for idx in indices:
                if idx <= red.eigvals.size:
                    rel = abs(red.eigvals[idx - 1] - refs[ell][idx - 1]) / refs[ell][idx - 1]
                    rows.append((float(ell), r, idx, float(rel)))
    return rows, basis.n_rb


def run_rb_accuracy(cfg: RunConfig, out: Path) -> dict:
    p = cfg.rb_accuracy
    rows, n_rb = rb_accuracy_table(p.n_side, p.n_snapshots, p.n_sto, cfg.kernel.n_lin,
                                   p.n_rb_list, p.test_ells,
                                   rng=stream(cfg.seed, 7))
    matio.write_csv(out / "rb_accuracy.csv", ["ell", "n_rb", "index", "rel_error"], rows)
    if cfg.emit_gnuplot:
        write_gnuplot(out, "rb_accuracy", "rb_accuracy.csv", "2:4",
                      "relative reduced eigenvalue error vs basis size")
    return write_summary(out, {"experiment": "rb_accuracy", "n_rb_available": n_rb,
                               "n_rows": len(rows)})


# ---------------------------------------------------------------------------
# timings

def _median_time(fn, n_warmup: int, n_timed: int) -> float:
    for _ in range(n_warmup):
        fn()
    ts = []
    for _ in range(n_timed):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def timing_table(n_side_list, n_sto: int, n_rb: int, n_snapshots: int = 4,
                 n_warmup: int = 3, n_timed: int = 5, seed: int = 0):
    """Per-sample online cost of full vs reduced sampling, plus log-log slopes.

    The full sampler runs the dense path (O(N^2) assembly, dense eigensolve)
    so the measured scaling reflects the advertised cost model.
    """
    rows = []
    tau = HyperParams(0.5, 1.0)
    for n_side in n_side_list:
        mesh = build_field_mesh(n_side)
        N = mesh.n_cells
        k = min(n_sto, N - 1) if N > n_sto else max(1, N // 2)
        mesh.pairwise_distances()      # geometry cache, excluded from timing

        def full_sample(rng=stream(seed, 11, n_side)):
            cov = assemble_cov(mesh, ExponentialKernel(), tau, dense_limit=max(N, 8192))
            basis = eigs(cov, k)
            return basis.factor() @ rng.standard_normal(basis.n_sto)

        t_full = _median_time(full_sample, n_warmup, n_timed)

        snaps = rb.snapshot_grid(rb.default_snapshot_ell_min(n_snapshots), DIAM, n_snapshots)
        basis = rb.offline_reduced_basis(
            mesh, SeparableKernel(0.5, 40), snaps, n_sto=k,
            lambda_min=0.0, max_vectors=min(n_rb, N),
            exact_kernel=ExponentialKernel(),
            matrix_free=N > 2048, dense_limit=max(N, 8192),
        )
        sampler = RBSampler(basis=basis, n_sto=min(k, basis.n_rb))

        def rb_sample(rng=stream(seed, 12, n_side)):
            _, theta = sampler.sample(tau, rng)
            return theta

        t_rb = _median_time(rb_sample, n_warmup, n_timed)
        rows.append((N, t_full, t_rb, basis.n_rb))

    logN = np.log([r[0] for r in rows])
    slope_full = float(np.polyfit(logN, np.log([r[1] for r in rows]), 1)[0])
    slope_rb = float(np.polyfit(logN, np.log([r[2] for r in rows]), 1)[0])
    return rows, slope_full, slope_rb


def run_timings(cfg: RunConfig, out: Path) -> dict:
    p = cfg.timings
    rows, slope_full, slope_rb = timing_table(
        p.n_side_list, p.n_sto, p.n_rb, n_warmup=p.n_warmup, n_timed=p.n_timed,
        seed=cfg.seed)
    matio.write_csv(out / "timings.csv", ["n_cells", "t_full", "t_rb", "n_rb"], rows)
    if cfg.emit_gnuplot:
        write_gnuplot(out, "timings", "timings.csv", "1:2", "per-sample cost, full vs reduced")
    return write_summary(out, {
        "experiment": "timings",
        "slope_full": slope_full,
        "slope_rb": slope_rb,
        "rows": [list(r) for r in rows],
    })


# ---------------------------------------------------------------------------
# offline

def run_offline(cfg: RunConfig, out: Path) -> dict:
    mesh = build_field_mesh(cfg.mesh.field_n_side)
    n_sto = cfg.offline.n_sto or resolved_n_sto(cfg)
    snap_min = cfg.offline.snap_ell_min or cfg.prior.ell_min
    snaps = rb.snapshot_grid(snap_min, cfg.prior.ell_max, cfg.offline.n_snapshots)
    kernel = SeparableKernel(cfg.kernel.nu, cfg.kernel.n_lin)
    basis = rb.offline_reduced_basis(
        mesh, kernel, snaps, n_sto=n_sto,
        lambda_min=cfg.offline.lambda_min,
        max_vectors=cfg.offline.max_vectors or None,
        exact_kernel=ExponentialKernel() if cfg.kernel.nu == 0.5 else None,
        rng=stream(cfg.seed, 13),
        matrix_free=use_matrix_free(cfg, mesh.n_cells),
        dense_limit=cfg.dense_limit,
    )
    basis_dir = Path(cfg.sampler.basis_dir) if cfg.sampler.basis_dir else out / "basis"
    rb.save_basis(basis, basis_dir)
    matio.write_eigvals_csv(out / "pod_sv.csv", basis.pod_sv**2)
    return write_summary(out, {
        "experiment": "offline",
        "n_rb": basis.n_rb,
        "n_sto": n_sto,
        "lambda_min": cfg.offline.lambda_min,
        "snapshot_ells": [float(x) for x in snaps],
        "basis_dir": str(basis_dir),
    })


# ---------------------------------------------------------------------------
# samplers for the estimation experiments

def _load_rb_sampler(cfg: RunConfig, n_sto: int) -> RBSampler:
    basis_dir = Path(cfg.sampler.basis_dir)
    if not (basis_dir / "manifest.json").exists():
        raise ConfigError([f"sampler.basis_dir: no reduced-basis artifact at {basis_dir}"])
    basis = rb.load_basis(basis_dir)
    if basis.mesh.n_side != cfg.mesh.field_n_side:
        raise ConfigError([
            f"sampler.basis_dir: basis mesh {basis.mesh.n_side} != field mesh "
            f"{cfg.mesh.field_n_side}"])
    return RBSampler(basis=basis, n_sto=min(n_sto, basis.n_rb))


def make_sampler(cfg: RunConfig, n_sto: int):
    if cfg.sampler.kind == "rb":
        return _load_rb_sampler(cfg, n_sto)
    return field_model(cfg, n_sto)


# ---------------------------------------------------------------------------
# verify_52: flow-cell pushforward + field-observation inversion at desk scale

def run_verify_52(cfg: RunConfig, out: Path) -> dict:
    n_sto = resolved_n_sto(cfg)
    sampler = make_sampler(cfg, n_sto)
    prior = cfg.prior.hyperprior()
    fem = flowcell_problem(cfg)

    def qoi(theta):
        return outflow_qoi(fem, theta)

    fwd = mc_forward(prior, sampler, qoi, cfg.sampler.n_samples, cfg.seed)
    matio.write_csv(out / "forward_samples.csv", ["sample", "ell", "sigma", "q"], fwd.rows)

    mesh = model_mesh(sampler)
    problem = BayesProblem(
        mode="field",
        y=np.full(cfg.data.obs_grid**2, cfg.data.obs_value),
        gamma2=cfg.data.gamma2,
        obs_points=lattice_points(cfg.data.obs_grid),
        field_mesh=mesh,
    )
    ev = importance_evidence(problem, prior, sampler, cfg.sampler.n_samples, cfg.seed)
    return write_summary(out, {
        "experiment": "verify_52",
        "sampler": cfg.sampler.kind,
        "n_samples": cfg.sampler.n_samples,
        "n_sto": n_sto,
        "pushforward_mean": fwd.mean,
        "pushforward_variance": fwd.variance,
        "evidence": ev.z,
        "log_evidence": ev.log_z,
        "posterior_mean_ell": ev.post_mean_ell,
        "posterior_var_ell": ev.post_var_ell,
        "ess": ev.ess,
    })


# ---------------------------------------------------------------------------
# forward_53: flow-cell pushforward with repetitions -> CoV table

def _forward_rep(args):
    cfg_dict, rep = args
    from .config import config_from_dict
    cfg = config_from_dict(cfg_dict)
    return _forward_single(cfg, rep)


def _forward_single(cfg: RunConfig, rep: int):
    n_sto = resolved_n_sto(cfg)
    sampler = make_sampler(cfg, n_sto)
    prior = cfg.prior.hyperprior()
    fem = flowcell_problem(cfg)
    res = mc_forward(prior, sampler, lambda th: outflow_qoi(fem, th),
                     cfg.sampler.n_samples, cfg.seed, rep=rep)
    return res.mean, res.variance


def run_forward_53(cfg: RunConfig, out: Path) -> dict:
    reps = range(cfg.sampler.n_repetitions)
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_forward_rep, [(cfg.to_dict(), r) for r in reps]))
    else:
        results = [_forward_single(cfg, r) for r in reps]
    means = np.array([r[0] for r in results])
    variances = np.array([r[1] for r in results])

    def cov(v):
        return float(v.std(ddof=1) / abs(v.mean())) if v.size > 1 else 0.0

    matio.write_csv(out / "forward_reps.csv", ["rep", "mean", "variance"],
                    [(r, m, v) for r, (m, v) in enumerate(results)])
    return write_summary(out, {
        "experiment": "forward_53",
        "n_repetitions": cfg.sampler.n_repetitions,
        "n_samples": cfg.sampler.n_samples,
        "mean_estimate": float(means.mean()),
        "variance_estimate": float(variances.mean()),
        "cov_mean": cov(means),
        "cov_variance": cov(variances),
    })


# ---------------------------------------------------------------------------
# MCMC experiments

def _chain_csv(out: Path, tag: str, chain) -> None:
    cols = ["step", "ell", "sigma"] + [f"theta_rb_{i}" for i in chain.monitor_indices] \
        + ["accepted_tau", "accepted_theta"]
    rows = []
    for i in range(chain.ells.size):
        rows.append((i, chain.ells[i], chain.sigmas[i],
                     *chain.theta_monitor[i].tolist(),
                     int(chain.acc_tau[i]), int(chain.acc_theta[i])))
    matio.write_csv(out / f"chain_{tag}.csv", cols, rows)


def _run_chains(problem, sampler, prior, cfg: RunConfig, out: Path) -> dict:
    chains = []
    init_sigma = cfg.mcmc.init_sigma or prior.m_sigma
    for c in range(cfg.mcmc.n_chains):
        ccfg = ChainConfig(
            n_steps=cfg.mcmc.n_steps, beta=cfg.mcmc.beta,
            step_ell=cfg.mcmc.step_ell or None, step_sigma=cfg.mcmc.step_sigma or None,
            init_tau=HyperParams(cfg.mcmc.init_ell, init_sigma),
            init_theta="prior", burn_in=cfg.mcmc.burn_in,
            seed=cfg.seed, chain_id=c, density_variant=cfg.mcmc.density_variant,
        )
        chain = mcmc_gibbs(problem, sampler, prior, ccfg)
        _chain_csv(out, f"{c:02d}", chain)
        chains.append(chain)
    return chain_diagnostics(chains)


def run_bayes_pde_54(cfg: RunConfig, out: Path) -> dict:
    n_sto = resolved_n_sto(cfg)
    prior = cfg.prior.hyperprior()
    field_mesh = build_field_mesh(cfg.mesh.field_n_side)
    tri = build_tri_mesh(cfg.mesh.fem_n_side)
    fem = build_fem_problem(tri, field_mesh, bc="dirichlet0", source="gaussian_grid")
    obs = lattice_points(cfg.data.obs_grid)

    truth_sigma = cfg.data.truth_sigma or prior.m_sigma
    data_model = field_model(cfg, n_sto)
    y, _ = make_pde_observation_data(
        data_model, fem, HyperParams(cfg.data.truth_ell, truth_sigma),
        obs, cfg.data.gamma2, cfg.data.data_seed, domain=DOMAIN_DATA)

    problem = BayesProblem(mode="pde", y=y, gamma2=cfg.data.gamma2,
                           obs_points=obs, field_mesh=field_mesh, fem=fem)
    sampler = make_sampler(cfg, n_sto)
    diag = _run_chains(problem, sampler, prior, cfg, out)
    return write_summary(out, {
        "experiment": "bayes_pde_54",
        "truth_ell": cfg.data.truth_ell,
        "n_chains": cfg.mcmc.n_chains,
        "n_steps": cfg.mcmc.n_steps,
        "diagnostics": diag,
    })


def run_bayes_field_55(cfg: RunConfig, out: Path) -> dict:
    n_sto = resolved_n_sto(cfg)
    prior = cfg.prior.hyperprior()
    field_mesh = build_field_mesh(cfg.mesh.field_n_side)
    obs = lattice_points(cfg.data.obs_grid)

    truth_sigma = cfg.data.truth_sigma or prior.m_sigma
    data_model = field_model(cfg, n_sto)
    y, _ = make_field_observation_data(
        data_model, HyperParams(cfg.data.truth_ell, truth_sigma),
        obs, cfg.data.gamma2, cfg.data.data_seed, domain=DOMAIN_DATA)

    problem = BayesProblem(mode="field", y=y, gamma2=cfg.data.gamma2,
                           obs_points=obs, field_mesh=field_mesh)
    sampler = make_sampler(cfg, n_sto)
    diag = _run_chains(problem, sampler, prior, cfg, out)
    return write_summary(out, {
        "experiment": "bayes_field_55",
        "truth_ell": cfg.data.truth_ell,
        "truth_sigma": truth_sigma,
        "n_chains": cfg.mcmc.n_chains,
        "n_steps": cfg.mcmc.n_steps,
        "diagnostics": diag,
    })


RUNNERS = {
    "lin_error": run_lin_error,
    "rb_accuracy": run_rb_accuracy,
    "timings": run_timings,
    "verify_52": run_verify_52,
    "forward_53": run_forward_53,
    "bayes_pde_54": run_bayes_pde_54,
    "bayes_field_55": run_bayes_field_55,
    "offline": run_offline,
}


def run_experiment(cfg: RunConfig, out_dir=None) -> dict:
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    write_manifest(cfg, out)
    t0 = time.perf_counter()
    summary = RUNNERS[cfg.experiment](cfg, out)
    summary["elapsed_seconds"] = round(time.perf_counter() - t0, 3)
    write_summary(out, summary)
    line = ", ".join(f"{k}={v}" for k, v in summary.items()
                     if isinstance(v, (int, float, str)))
    print(f"[rbfield] {line}")
    return summary
