"""Matern-type covariance kernels and their assembly on a cell mesh.

Three kernel families share one interface (``radial(z, ell, sigma)``):

* :class:`ExponentialKernel` -- sigma^2 exp(-z/ell), the nu = 1/2 closed form;
* :class:`MaternKernel` -- the general smoothness-nu kernel via the modified
  Bessel function of the second kind;
* :class:`SeparableKernel` -- an L-term series approximation of the Matern
  kernel that is *linearly separable* in the hyperparameters: it decomposes as
  sum_k F_k(ell, sigma) C_k(z) with parameter-free radial components C_k.
  Term magnitudes are evaluated in log space so large term counts do not
  overflow.

Covariance matrices are assembled with one midpoint quadrature node per cell,
C_ij = h^4 c(dist(x_i, x_j)), either densely or as a matrix-free applier.  On
the uniform grid all kernels are stationary, so the matrix-free product is
computed exactly via two-level circulant embedding and FFTs.

The flattened series indexing follows the source decomposition: odd k carries
the negative z^(2 nu + k - 1) family, even k the positive z^(k-2) family; a
full pairing corresponds to an even number of terms.  Component matrices stay
inside double-precision range for term counts up to ~140; plain kernel
evaluation is safe for several hundred terms.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, gammasgn, kv

from .mesh import DIAM, FieldMesh

DENSE_LIMIT_DEFAULT = 8192


@dataclass(frozen=True)
class HyperParams:
    """A hyperparameter point tau = (correlation length, standard deviation)."""

    ell: float
    sigma: float

    def __post_init__(self):
        if not self.ell > 0:
            raise ValueError(f"ell must be positive, got {self.ell}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def _check_nu(nu: float) -> float:
    nu = float(nu)
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    if nu == round(nu):
        raise ValueError(f"integer smoothness nu={nu} is not supported")
    return nu


def matern_eval(nu: float, ell: float, sigma: float, z) -> np.ndarray | float:
    """Matern kernel sigma^2 2^(1-nu)/Gamma(nu) (sqrt(2 nu) z/ell)^nu K_nu(...).

    Returns sigma^2 at z = 0 (the limit value); rejects negative z and
    integer nu.
    """
    nu = _check_nu(nu)
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0):
        raise ValueError("distances must be nonnegative")
    s = np.sqrt(2.0 * nu) * z_arr / ell
    with np.errstate(invalid="ignore", over="ignore"):
        val = sigma**2 * np.exp((1.0 - nu) * np.log(2.0) - gammaln(nu)) * s**nu * kv(nu, s)
    val = np.where(z_arr == 0.0, sigma**2, val)
    return val if val.ndim else float(val)


class ExponentialKernel:
    """Exponential covariance kernel, identical to Matern with nu = 1/2."""

    nu = 0.5
    name = "exponential"

    def radial(self, z, ell, sigma):
        return sigma**2 * np.exp(-np.asarray(z, dtype=float) / ell)


class MaternKernel:
    """Matern covariance kernel family with fixed non-integer smoothness."""

    name = "matern"

    def __init__(self, nu: float):
        self.nu = _check_nu(nu)

    def radial(self, z, ell, sigma):
        return matern_eval(self.nu, ell, sigma, z)


class SeparableKernel:
    """L-term linearly separable approximation of the Matern kernel.

    For every flattened index k the term factors as F_k(ell, sigma) C_k(z)
    with C_k parameter free.  The sum reconstructs the truncated Bessel series
    of the kernel; it converges to the exact kernel pointwise as the number of
    terms grows (slowly for small ell, where the series eventually suffers
    catastrophic cancellation).
    """

    name = "linearized"

    def __init__(self, nu: float, n_terms: int):
        self.nu = _check_nu(nu)
        if n_terms < 1:
            raise ValueError(f"n_terms must be >= 1, got {n_terms}")
        self.n_terms = int(n_terms)

        k = np.arange(1, self.n_terms + 1)
        j = (k + 1) // 2
        even = k % 2 == 0
        nu_ = self.nu
        # z-exponent equals the ell-exponent in F_k; both families depend on z/ell only
        self.exponents = np.where(even, 2 * j - 2.0, 2 * nu_ + 2 * j - 2.0)
        self.log_coeff = np.where(
            even,
            -((j - 1) * np.log(2.0) + gammaln(j - nu_) + gammaln(j)),
            -((j + nu_ - 1) * np.log(2.0) + gammaln(j + nu_) + gammaln(j)),
        )
        self.signs = np.where(even, gammasgn(j - nu_), -gammasgn(j + nu_))
        # pi csc(pi nu) / Gamma(nu), signed
        self.prefactor = np.pi / (np.sin(np.pi * nu_) * np.exp(gammaln(nu_)))

    def _powers(self, log_arg):
        """exp(e_k log_arg) with the 0 * (-inf) corner pinned to 1."""
        e = self.exponents
        with np.errstate(invalid="ignore", over="ignore"):
            t = np.exp(self.log_coeff + e * log_arg[..., None])
        if np.isneginf(log_arg).any():
            t = np.where((e == 0.0) & np.isneginf(log_arg[..., None]), np.exp(self.log_coeff), t)
        return t

    def radial(self, z, ell, sigma):
        """Evaluate the truncated series at distances z (log-space terms)."""
        z_arr = np.asarray(z, dtype=float)
        if np.any(z_arr < 0):
            raise ValueError("distances must be nonnegative")
        if not ell > 0 or not sigma > 0:
            raise ValueError("ell and sigma must be positive")
        with np.errstate(divide="ignore"):
            log_arg = np.log(np.sqrt(self.nu) * z_arr / ell)
        terms = self._powers(log_arg) * self.signs
        out = sigma**2 * self.prefactor * terms.sum(axis=-1)
        return out if out.ndim else float(out)

    def component_radial(self, k: int, z) -> np.ndarray | float:
        """Parameter-free radial component C_k (1-based flattened index)."""
        if not 1 <= k <= self.n_terms:
            raise ValueError(f"component index {k} outside 1..{self.n_terms}")
        z_arr = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore"):
            log_arg = np.log(np.sqrt(self.nu) * z_arr)
        i = k - 1
        e = self.exponents[i]
        with np.errstate(invalid="ignore"):
            t = np.exp(self.log_coeff[i] + e * log_arg)
        if e == 0.0:
            t = np.where(np.isneginf(log_arg), np.exp(self.log_coeff[i]), t)
        out = self.signs[i] * t
        return out if out.ndim else float(out)

    def f_coeffs(self, ell: float, sigma: float) -> np.ndarray:
        """Coefficients F_k(ell, sigma) = pref sigma^2 / ell^p_k (p even = k-2,
        p odd = 2 nu + k - 1)."""
        if not ell > 0 or not sigma > 0:
            raise ValueError("ell and sigma must be positive")
        return self.prefactor * sigma**2 * np.exp(-self.exponents * np.log(ell))


def linearized_eval(nu: float, n_terms: int, ell: float, sigma: float, z):
    """Truncated separable series value; see :class:`SeparableKernel`."""
    return SeparableKernel(nu, n_terms).radial(z, ell, sigma)


def truncation_error_sup(kernel: SeparableKernel, ell_min: float, z_max: float = DIAM,
                         grid_density: int = 201, sigma: float = 1.0) -> float:
    """Max of |series - exact Matern| over a (z, ell) tensor grid.

    z runs uniformly over [0, z_max]; ell runs over [ell_min, diam(D)],
    uniformly in 1/ell (the hyperprior parameterisation).
    """
    if not ell_min > 0:
        raise ValueError("ell_min must be positive")
    if not z_max > 0:
        raise ValueError("z_max must be positive")
    zs = np.linspace(0.0, z_max, grid_density)
    ell_hi = max(DIAM, ell_min)
    inv = np.linspace(1.0 / ell_hi, 1.0 / ell_min, grid_density)
    worst = 0.0
    for ell in 1.0 / inv:
        exact = matern_eval(kernel.nu, ell, sigma, zs)
        err = np.abs(kernel.radial(zs, ell, sigma) - exact).max()
        worst = max(worst, float(err))
    return worst


def error_bound(nu: float, ell_min: float, diam: float = DIAM, n_lin: int = 2) -> float:
    """Closed-form spectral-norm bound on the series truncation error.

    diam^(2d) (pi |csc(pi nu)| / 2^(1-nu)) (1 + zeta^(2 nu)) exp(zeta^2/4)
    zeta^(2 L) / L!  with zeta = diam/ell_min and d = 2, evaluated in log
    space; returns +inf instead of overflowing.
    """
    nu = _check_nu(nu)
    if n_lin < 2 or n_lin % 2 != 0:
        raise ValueError(f"n_lin must be a positive even integer, got {n_lin}")
    if not ell_min > 0:
        raise ValueError("ell_min must be positive")
    zeta = diam / ell_min
    log_zeta = np.log(zeta)
    log_b = (
        4.0 * np.log(diam)
        + np.log(np.pi)
        - np.log(np.abs(np.sin(np.pi * nu)))
        - (1.0 - nu) * np.log(2.0)
        + np.logaddexp(0.0, 2.0 * nu * log_zeta)
        + zeta**2 / 4.0
        + 2.0 * n_lin * log_zeta
        - gammaln(n_lin + 1.0)
    )
    with np.errstate(over="ignore"):
        return float(np.exp(log_b))


class CovMatrix:
    """Covariance matrix on a FieldMesh: dense array or matrix-free applier.

    Entries are C_ij = h^4 c(dist(x_i, x_j)) (midpoint quadrature).  The
    matrix-free representation exploits stationarity: the product is computed
    exactly through a circulant embedding of the underlying block-Toeplitz
    structure.
    """

    def __init__(self, mesh: FieldMesh, kernel, params: HyperParams, dense=None, fft_kernel=None):
        self.mesh = mesh
        self.kernel = kernel
        self.params = params
        self._dense = dense
        self._fft = fft_kernel

    @property
    def n(self) -> int:
        return self.mesh.n_cells

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def is_dense(self) -> bool:
        return self._dense is not None

    def dense(self) -> np.ndarray:
        if self._dense is None:
            raise ValueError("matrix-free covariance: dense entries not materialised")
        return self._dense

    def diag_value(self) -> float:
        """Diagonal entry h^4 c(0)."""
        return float(self.mesh.h**4 * self.kernel.radial(0.0, self.params.ell, self.params.sigma))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            return self._dense @ x
        return _circulant_apply(self._fft, self.mesh.n_side, x)

    def matmat(self, X: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            return self._dense @ X
        return np.stack(
            [_circulant_apply(self._fft, self.mesh.n_side, X[:, j]) for j in range(X.shape[1])],
            axis=1,
        )


def _lag_grid(n_side: int, h: float) -> np.ndarray:
    """Radial lags of the 2n x 2n circulant embedding of the cell grid."""
    m = 2 * n_side
    lag = np.minimum(np.arange(m), m - np.arange(m)) * h
    LX, LY = np.meshgrid(lag, lag, indexing="xy")
    return np.sqrt(LX**2 + LY**2)


def _circulant_kernel(mesh: FieldMesh, radial_values: np.ndarray) -> np.ndarray:
    """rfft2 of the embedded first-row kernel (radial values on the lag grid)."""
    return np.fft.rfft2(radial_values)


def _circulant_apply(fker: np.ndarray, n_side: int, x: np.ndarray) -> np.ndarray:
    m = 2 * n_side
    xg = np.zeros((m, m))
    xg[:n_side, :n_side] = x.reshape(n_side, n_side)
    y = np.fft.irfft2(np.fft.rfft2(xg) * fker, s=(m, m))
    return y[:n_side, :n_side].ravel().copy()


def assemble_cov(mesh: FieldMesh, kernel, params: HyperParams,
                 dense_limit: int = DENSE_LIMIT_DEFAULT, matrix_free: bool = False) -> CovMatrix:
    """Assemble the covariance of `kernel` at `params` on `mesh`.

    The dense path refuses more than `dense_limit` unknowns; pass
    ``matrix_free=True`` (or exceed the limit knowingly by raising it) to get
    the FFT applier instead.
    """
    if matrix_free:
        vals = mesh.h**4 * kernel.radial(_lag_grid(mesh.n_side, mesh.h), params.ell, params.sigma)
        return CovMatrix(mesh, kernel, params, fft_kernel=_circulant_kernel(mesh, vals))
    if mesh.n_cells > dense_limit:
        raise ValueError(
            f"dense assembly of {mesh.n_cells} cells exceeds dense_limit={dense_limit}; "
            "use matrix_free=True"
        )
    D = mesh.pairwise_distances()
    C = mesh.h**4 * kernel.radial(D, params.ell, params.sigma)
    return CovMatrix(mesh, kernel, params, dense=C)


class ComponentSet:
    """The parameter-free component matrices C_k of a separable kernel.

    Dense components hold h^4 C_k(dist); the matrix-free variant keeps one FFT
    kernel per component.  ``combine`` reconstructs sum_k F_k(tau) C_k.
    """

    def __init__(self, mesh: FieldMesh, kernel: SeparableKernel,
                 dense: list | None = None, fft_kernels: list | None = None):
        self.mesh = mesh
        self.kernel = kernel
        self._dense = dense
        self._fft = fft_kernels

    @property
    def n_terms(self) -> int:
        return self.kernel.n_terms

    def dense_component(self, k: int) -> np.ndarray:
        if self._dense is not None:
            return self._dense[k - 1]
        D = self.mesh.pairwise_distances()
        return self.mesh.h**4 * self.kernel.component_radial(k, D)

    def combine(self, params: HyperParams) -> np.ndarray:
        """Dense sum_k F_k(tau) C_k (same entries as assembling the series kernel)."""
        F = self.kernel.f_coeffs(params.ell, params.sigma)
        out = F[0] * self.dense_component(1)
        for k in range(2, self.n_terms + 1):
            out += F[k - 1] * self.dense_component(k)
        return out

    def project(self, W: np.ndarray) -> np.ndarray:
        """Galerkin blocks W^T C_k W, stacked as (n_terms, r, r), symmetrised."""
        r = W.shape[1]
        out = np.empty((self.n_terms, r, r))
        for k in range(1, self.n_terms + 1):
            if self._fft is not None:
                CW = np.stack(
                    [_circulant_apply(self._fft[k - 1], self.mesh.n_side, W[:, j])
                     for j in range(r)], axis=1)
            else:
                CW = self.dense_component(k) @ W
            B = W.T @ CW
            out[k - 1] = 0.5 * (B + B.T)
        return out


def assemble_separable_components(mesh: FieldMesh, kernel: SeparableKernel,
                                  dense_limit: int = DENSE_LIMIT_DEFAULT,
                                  matrix_free: bool = False) -> ComponentSet:
    """Component matrices of the separable kernel on `mesh` (see ComponentSet)."""
    if matrix_free:
        lag = _lag_grid(mesh.n_side, mesh.h)
        fft_kernels = [
            _circulant_kernel(mesh, mesh.h**4 * kernel.component_radial(k, lag))
            for k in range(1, kernel.n_terms + 1)
        ]
        return ComponentSet(mesh, kernel, fft_kernels=fft_kernels)
    if mesh.n_cells > dense_limit:
        raise ValueError(
            f"dense components for {mesh.n_cells} cells exceed dense_limit={dense_limit}; "
            "use matrix_free=True"
        )
    D = mesh.pairwise_distances()
    dense = [mesh.h**4 * kernel.component_radial(k, D) for k in range(1, kernel.n_terms + 1)]
    return ComponentSet(mesh, kernel, dense=dense)


def psd_clip(eigvals: np.ndarray, eigvecs: np.ndarray, clip_tol: float = 0.0,
             relative: bool = False):
    """Drop eigenpairs at or below the clip threshold.

    With ``relative=True`` the threshold is clip_tol * max(eigvals).  Returns
    (eigvals, eigvecs, n_clipped); input order is preserved.
    """
    eigvals = np.asarray(eigvals, dtype=float)
    thresh = clip_tol * eigvals.max() if relative and eigvals.size else clip_tol
    keep = eigvals > thresh
    return eigvals[keep], eigvecs[:, keep], int((~keep).sum())


KERNEL_NAMES = ("exponential", "matern", "linearized")


def make_kernel(name: str, nu: float = 0.5, n_lin: int = 40):
    """Kernel family from its CLI name."""
    if name == "exponential":
        return ExponentialKernel()
    if name == "matern":
        return MaternKernel(nu)
    if name == "linearized":
        return SeparableKernel(nu, n_lin)
    raise ValueError(f"unknown kernel {name!r}; expected one of {KERNEL_NAMES}")
