"""Offline/online reduced basis for the parametric covariance eigenproblem.

Offline: full eigensolves at snapshot correlation lengths, a POD of the
snapshot eigenvectors (weighted so the basis is M-orthonormal), and the
Galerkin projection of the parameter-free component matrices.  Online:
assemble sum_k F_k(tau) C_k^RB at O(r^2 L) cost, solve the dense r x r
eigenproblem, clip nonpositive eigenvalues, and expand fields as
theta = mean + W theta_rb.

A basis persists to a directory holding a JSON manifest plus the binary
matrices for W and every projected component.
"""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import matio
from .covariance import (
    ComponentSet,
    HyperParams,
    SeparableKernel,
    assemble_cov,
    assemble_separable_components,
    psd_clip,
)
from .kl import eigs, fix_signs
from .mesh import DIAM, FieldMesh, build_field_mesh

POD_LAMBDA_MIN_DEFAULT = 1e-10


def snapshot_grid(ell_min: float, ell_max: float, n_snap: int) -> np.ndarray:
    """Snapshot correlation lengths, equidistant in 1/ell, descending.

    ell_s = 1/(1/ell_max + s Delta) with Delta = (1/ell_min - 1/ell_max)/(n_snap-1),
    which clusters snapshots toward small ell.
    """
    if n_snap < 1:
        raise ValueError(f"n_snap must be >= 1, got {n_snap}")
    if n_snap == 1:
        if not 0 < ell_min <= ell_max:
            raise ValueError("need 0 < ell_min <= ell_max")
        return np.array([ell_max])
    if not 0 < ell_min < ell_max:
        raise ValueError(f"need 0 < ell_min < ell_max, got ({ell_min}, {ell_max})")
    delta = (1.0 / ell_min - 1.0 / ell_max) / (n_snap - 1)
    return 1.0 / (1.0 / ell_max + delta * np.arange(n_snap))


@dataclass(eq=False)
class ReducedBasis:
    """M-orthonormal basis W plus the projected component operators."""

    mesh: FieldMesh
    W: np.ndarray               # (N, r), W^T M W = I
    pod_sv: np.ndarray          # retained POD singular values
    lambda_min: float
    kernel: SeparableKernel | None = None
    comp_rb: np.ndarray | None = None     # (n_terms, r, r)
    snapshot_ells: np.ndarray | None = None

    @property
    def n_rb(self) -> int:
        return self.W.shape[1]

    def gramian(self) -> np.ndarray:
        """Reduced Gramian W^T M W (identity up to roundoff)."""
        h2 = self.mesh.h**2
        return h2 * (self.W.T @ self.W)


@dataclass(eq=False)
class ReducedKL:
    """Truncated reduced eigenpairs at one hyperparameter point."""

    eigvals: np.ndarray         # (m,) descending positive, m <= n_sto
    coeffs: np.ndarray          # (r, m) reduced eigenvectors w_i
    n_requested: int
    clipped: int                # nonpositive eigenvalues discarded
    full_eigvals: np.ndarray    # all r eigenvalues (descending, unclipped)
    full_coeffs: np.ndarray     # (r, r)

    @property
    def deficient(self) -> bool:
        return self.eigvals.size < self.n_requested

    def factor(self) -> np.ndarray:
        """Reduced sampling factor Psi_rb = (sqrt(lambda_i) w_i), (r, m)."""
        return self.coeffs * np.sqrt(self.eigvals)


def build_pod(snapshots: np.ndarray, mesh: FieldMesh, lambda_min: float = POD_LAMBDA_MIN_DEFAULT,
              max_vectors: int | None = None) -> ReducedBasis:
    """POD of snapshot eigenvectors, retaining squared singular values > lambda_min.

    The SVD is taken of M^(1/2)-weighted snapshots (a global h scaling on the
    uniform mesh) so the returned basis is M-orthonormal, but the retention
    threshold and the stored singular values use the plain, unweighted
    snapshot spectrum: reported basis sizes (numerical rank at tiny
    thresholds, the documented threshold sweeps) follow that convention.
    """
    snapshots = np.asarray(snapshots, dtype=float)
    if snapshots.ndim != 2 or snapshots.shape[0] != mesh.n_cells:
        raise ValueError("snapshots must be (n_cells, n_columns)")
    if not np.isfinite(snapshots).all():
        raise ValueError("snapshot matrix contains non-finite entries")
    if lambda_min < 0:
        raise ValueError("lambda_min must be >= 0")
    U, s, _ = sla.svd(mesh.h * snapshots, full_matrices=False)
    sv_plain = s / mesh.h
    keep = int(np.count_nonzero(sv_plain**2 > lambda_min))
    if max_vectors is not None:
        keep = min(keep, int(max_vectors))
    if keep == 0:
        raise ValueError(f"lambda_min={lambda_min} retains no POD vectors")
    W = fix_signs(U[:, :keep]) / mesh.h
    return ReducedBasis(mesh=mesh, W=W, pod_sv=sv_plain[:keep], lambda_min=lambda_min)


def project_components(W: np.ndarray, components: ComponentSet) -> np.ndarray:
    """Reduced components C_k^RB = W^T C_k W, stacked (n_terms, r, r)."""
    if W.shape[0] != components.mesh.n_cells:
        raise ValueError("basis and components live on different meshes")
    return components.project(W)


def offline_reduced_basis(mesh: FieldMesh, kernel: SeparableKernel, snapshot_ells,
                          n_sto: int, sigma: float = 1.0,
                          lambda_min: float = POD_LAMBDA_MIN_DEFAULT,
                          max_vectors: int | None = None,
                          exact_kernel=None, rng=None,
                          dense_limit: int | None = None,
                          matrix_free: bool = False) -> ReducedBasis:
    """Full offline phase: snapshot eigensolves, POD, component projection.

    Snapshots are computed from `exact_kernel` when given (the linearised
    kernel otherwise); sigma only rescales eigenvalues so snapshots never
    vary it.
    """
    snapshot_ells = np.asarray(snapshot_ells, dtype=float)
    snap_kernel = exact_kernel if exact_kernel is not None else kernel
    cols = []
    kwargs = {} if dense_limit is None else {"dense_limit": dense_limit}
    for ell in snapshot_ells:
        cov = assemble_cov(mesh, snap_kernel, HyperParams(ell=float(ell), sigma=sigma),
                           matrix_free=matrix_free, **kwargs)
        basis = eigs(cov, n_sto, rng=rng)
        if basis.n_sto < n_sto:
            warnings.warn(f"snapshot at ell={ell}: only {basis.n_sto} positive eigenpairs",
                          stacklevel=2)
        cols.append(basis.eigvecs)
    rb = build_pod(np.hstack(cols), mesh, lambda_min, max_vectors=max_vectors)
    comps = assemble_separable_components(mesh, kernel, matrix_free=matrix_free, **kwargs)
    rb.kernel = kernel
    rb.comp_rb = project_components(rb.W, comps)
    rb.snapshot_ells = snapshot_ells
    return rb


def assemble_reduced(basis: ReducedBasis, params: HyperParams) -> np.ndarray:
    """Online operator sum_k F_k(tau) C_k^RB (dense symmetric r x r)."""
    if basis.comp_rb is None:
        raise ValueError("reduced basis has no projected components")
    F = basis.kernel.f_coeffs(params.ell, params.sigma)
    return np.tensordot(F, basis.comp_rb, axes=1)


def reduced_eigs(basis: ReducedBasis, params: HyperParams, n_sto: int) -> ReducedKL:
    """Solve the reduced eigenproblem at tau and keep the leading n_sto pairs.

    Nonpositive eigenvalues (possible through the series truncation) are
    clipped; if fewer than n_sto positive pairs remain the result is flagged
    deficient.
    """
    if n_sto > basis.n_rb:
        raise ValueError(f"n_sto={n_sto} exceeds basis size {basis.n_rb}")
    C_rb = assemble_reduced(basis, params)
    vals, vecs = sla.eigh(C_rb, overwrite_a=True, check_finite=False)
    vals, vecs = vals[::-1], fix_signs(vecs[:, ::-1])
    pos, pvecs, clipped = psd_clip(vals[:n_sto], vecs[:, :n_sto], 0.0)
    return ReducedKL(eigvals=pos, coeffs=pvecs, n_requested=n_sto,
                     clipped=clipped, full_eigvals=vals, full_coeffs=vecs)


def rb_lift(basis: ReducedBasis, theta_rb: np.ndarray, mean=None) -> np.ndarray:
    """Full-space field theta = mean + W theta_rb."""
    theta_rb = np.asarray(theta_rb, dtype=float)
    if theta_rb.shape[-1] != basis.n_rb:
        raise ValueError(f"reduced coordinates must have length {basis.n_rb}")
    theta = theta_rb @ basis.W.T if theta_rb.ndim > 1 else basis.W @ theta_rb
    if mean is not None:
        theta = theta + mean
    return theta


def rb_restrict(basis: ReducedBasis, theta: np.ndarray) -> np.ndarray:
    """M-orthogonal projection coefficients W^T M theta."""
    return basis.mesh.h**2 * (basis.W.T @ theta)


# ---------------------------------------------------------------------------
# persistence

_MANIFEST = "manifest.json"


def save_basis(basis: ReducedBasis, directory) -> Path:
    """Write manifest + binary matrices; the manifest is written last so a
    complete directory implies a complete artifact."""
    if basis.comp_rb is None or basis.kernel is None:
        raise ValueError("only a fully built basis (with components) can be persisted")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    matio.write_matrix(directory / "W.bin", basis.W)
    matio.write_matrix(directory / "pod_sv.bin", basis.pod_sv[None, :])
    for k in range(basis.comp_rb.shape[0]):
        matio.write_matrix(directory / f"comp_{k:03d}.bin", basis.comp_rb[k])
    manifest = {
        "n_rb": basis.n_rb,
        "lambda_min": basis.lambda_min,
        "snapshot_ells": [float(x) for x in np.atleast_1d(basis.snapshot_ells)],
        "kernel": {"name": "linearized", "nu": basis.kernel.nu, "n_terms": basis.kernel.n_terms},
        "mesh_n_side": basis.mesh.n_side,
        "format": 1,
    }
    (directory / _MANIFEST).write_text(json.dumps(manifest, indent=2))
    return directory


def load_basis(directory) -> ReducedBasis:
    directory = Path(directory)
    manifest = json.loads((directory / _MANIFEST).read_text())
    mesh = build_field_mesh(manifest["mesh_n_side"])
    W = matio.read_matrix(directory / "W.bin")
    pod_sv = matio.read_matrix(directory / "pod_sv.bin").ravel()
    kernel = SeparableKernel(manifest["kernel"]["nu"], manifest["kernel"]["n_terms"])
    comp = np.stack([
        matio.read_matrix(directory / f"comp_{k:03d}.bin")
        for k in range(kernel.n_terms)
    ])
    return ReducedBasis(
        mesh=mesh, W=W, pod_sv=pod_sv, lambda_min=manifest["lambda_min"],
        kernel=kernel, comp_rb=comp,
        snapshot_ells=np.asarray(manifest["snapshot_ells"], dtype=float),
    )


def default_snapshot_ell_min(n_snap: int = 10, ell_max: float = DIAM) -> float:
    """Smallest snapshot length of the inverse-uniform rule with unit spacing."""
    return 1.0 / (1.0 / ell_max + (n_snap - 1))
