"""Truncated Karhunen-Loeve eigensolves and field sampling.

The generalised problem C psi = lambda M psi with the diagonal Gramian
M = h^2 I reduces exactly to the standard problem (C/h^2) phi = lambda phi
with psi = phi/h, so phi Euclidean-orthonormal makes psi M-orthonormal.
Below ``dense_limit`` a LAPACK solve on the dense matrix is used; above it
(or on request) an implicitly restarted Lanczos iteration with Krylov
dimension min(N, 2k+20), relative residual tolerance 1e-10 and at most 300
restarts.

Eigenvector signs follow the largest-entry-positive convention, which makes
repeated solves bit-reproducible.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .covariance import CovMatrix, psd_clip
from .errors import NumericalError
from .mesh import FieldMesh

EIG_TOL = 1e-10
MAX_RESTARTS = 300


@dataclass(eq=False)
class KLBasis:
    """Leading eigenpairs of a covariance operator, M-orthonormal."""

    eigvals: np.ndarray     # (k,) descending, strictly positive
    eigvecs: np.ndarray     # (N, k) columns psi_i with psi^T M psi = I
    mesh: FieldMesh
    trace_total: float      # trace(M^-1 C) = N h^2 c(0)

    @property
    def n_sto(self) -> int:
        return self.eigvals.size

    def factor(self) -> np.ndarray:
        """Sampling factor Psi = (sqrt(lambda_i) psi_i), shape (N, k)."""
        return self.eigvecs * np.sqrt(self.eigvals)


def fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip columns so each vector's largest-magnitude entry is positive."""
    idx = np.abs(vecs).argmax(axis=0)
    flip = vecs[idx, np.arange(vecs.shape[1])] < 0
    out = vecs.copy()
    out[:, flip] *= -1.0
    return out


def eigs(cov: CovMatrix, k: int, tol: float = EIG_TOL, max_restarts: int = MAX_RESTARTS,
         rng: np.random.Generator | None = None, force_iterative: bool = False) -> KLBasis:
    """Leading k eigenpairs of C psi = lambda M psi on cov's mesh.

    Uses the dense LAPACK subset solver when the entries are materialised,
    otherwise Lanczos on the matrix-free applier.  The Lanczos start vector
    comes from `rng` so seeded runs are reproducible.
    """
    mesh = cov.mesh
    N = mesh.n_cells
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside 1..{N}")
    h2 = mesh.h**2

    if cov.is_dense and not force_iterative:
        vals, vecs = sla.eigh(
            cov.dense() / h2, subset_by_index=[N - k, N - 1],
            driver="evr", overwrite_a=True, check_finite=False,
        )
        vals, vecs = vals[::-1], vecs[:, ::-1]
    else:
        if k == N:
            raise ValueError("iterative path requires k < N")
        op = LinearOperator((N, N), matvec=lambda x: cov.matvec(x) / h2, dtype=float)
        v0 = rng.standard_normal(N) if rng is not None else np.ones(N)
        ncv = min(N, 2 * k + 20)
        try:
            vals, vecs = _lanczos(op, k, ncv, tol, max_restarts, v0)
        except ArpackNoConvergence:
            # one retry with a larger Krylov space before giving up
            try:
                vals, vecs = _lanczos(op, k, min(N, int(1.5 * ncv) + 1), tol, max_restarts, v0)
            except ArpackNoConvergence as exc:
                res = _residuals(op, exc.eigenvalues, exc.eigenvectors)
                raise NumericalError(
                    f"eigensolve did not converge after {max_restarts} restarts; "
                    f"{exc.eigenvalues.size} pairs converged, residuals up to {res:.3e}"
                ) from exc
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]

    pos, vecs, n_clipped = psd_clip(vals, vecs, 0.0)
    if n_clipped:
        warnings.warn(f"dropped {n_clipped} nonpositive eigenvalues", stacklevel=2)
    psi = fix_signs(vecs) / mesh.h
    trace_total = N * h2 * cov.diag_value() / mesh.h**4
    return KLBasis(eigvals=pos, eigvecs=psi, mesh=mesh, trace_total=trace_total)


def _lanczos(op, k, ncv, tol, max_restarts, v0):
    return eigsh(op, k=k, which="LA", tol=tol, ncv=ncv, maxiter=max_restarts, v0=v0)


def _residuals(op, vals, vecs) -> float:
    if vals.size == 0:
        return float("nan")
    r = op.matmat(vecs) - vecs * vals
    return float(np.linalg.norm(r, axis=0).max() / max(np.abs(vals).max(), 1e-300))


def select_truncation(spectra, A: float, mode: str = "all", totals=None):
    """Smallest truncation capturing an A-fraction of total variance.

    `spectra` is a sequence of descending eigenvalue arrays, one per
    hyperparameter grid point; `totals` optionally supplies the full traces
    when the arrays are truncated (e.g. from the trace identity).  Mode "all"
    returns one count valid for every grid point, "per_tau" the per-point
    list.
    """
    if not 0 < A <= 1:
        raise ValueError(f"variance fraction A must be in (0, 1], got {A}")
    if mode not in ("all", "per_tau"):
        raise ValueError(f"mode must be 'all' or 'per_tau', got {mode!r}")
    spectra = [np.asarray(s, dtype=float) for s in spectra]
    if totals is None:
        totals = [float(s.sum()) for s in spectra]
    counts = []
    for s, tot in zip(spectra, totals):
        cum = np.cumsum(s)
        idx = np.searchsorted(cum, A * tot - 1e-15 * abs(tot))
        if idx >= s.size:
            if cum[-1] < A * tot * (1.0 - 1e-12):
                raise ValueError(
                    f"spectrum of length {s.size} captures only {cum[-1] / tot:.6f} "
                    f"of the total variance, below A={A}"
                )
            idx = s.size - 1
        counts.append(int(idx + 1))
    return max(counts) if mode == "all" else counts


def kl_sample(basis: KLBasis, mean, xi: np.ndarray) -> np.ndarray:
    """Truncated expansion mean + sum_i sqrt(lambda_i) xi_i psi_i."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (basis.n_sto,):
        raise ValueError(f"xi must have length {basis.n_sto}, got {xi.shape}")
    theta = basis.factor() @ xi
    if mean is not None:
        theta = theta + mean
    return theta


def truncation_mse(basis: KLBasis, full_trace: float | None = None) -> float:
    """Expected squared truncation error: full trace minus retained eigenvalues."""
    total = basis.trace_total if full_trace is None else float(full_trace)
    mse = total - float(basis.eigvals.sum())
    if mse < 0:
        if mse < -1e-8 * max(total, 1.0):
            warnings.warn(f"negative truncation mse {mse:.3e} clamped to 0", stacklevel=2)
        mse = 0.0
    return mse


def cholesky_sample(C: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Draw L xi with L L^T = C; used as a distributional oracle for kl_sample.

    Adds a trace-scaled jitter once if the first factorisation fails.
    """
    C = np.asarray(C, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if xi.shape[0] != C.shape[0]:
        raise ValueError("xi length must match the matrix dimension")
    try:
        L = sla.cholesky(C, lower=True)
    except sla.LinAlgError:
        jitter = 1e-12 * np.trace(C) / C.shape[0]
        try:
            L = sla.cholesky(C + jitter * np.eye(C.shape[0]), lower=True)
        except sla.LinAlgError as exc:
            raise NumericalError("covariance factorisation failed despite jitter") from exc
    return L @ xi
