import numpy as np
import pytest

from rbfield.covariance import ExponentialKernel, HyperParams, assemble_cov
from rbfield.kl import cholesky_sample, eigs, kl_sample, select_truncation, truncation_mse
from rbfield.mesh import build_field_mesh
from rbfield.rng import stream

from conftest import dense_eig_oracle

TAU = HyperParams(0.5, 1.0)


def test_single_cell_eigenpair():
    mesh = build_field_mesh(1)
    basis = eigs(assemble_cov(mesh, ExponentialKernel(), HyperParams(1.0, 1.0)), 1)
    np.testing.assert_allclose(basis.eigvals, [1.0])
    np.testing.assert_allclose(basis.eigvecs, [[1.0]])


def test_iterative_matches_dense_oracle(mesh4):
    tau = HyperParams(0.5, 1.0)
    dense_cov = assemble_cov(mesh4, ExponentialKernel(), tau)
    ref_vals, ref_vecs = dense_eig_oracle(dense_cov.dense(), mesh4.h**2, 6)

    mf_cov = assemble_cov(mesh4, ExponentialKernel(), tau, matrix_free=True)
    basis = eigs(mf_cov, 6, rng=stream(0, 1))
    np.testing.assert_allclose(basis.eigvals, ref_vals, rtol=1e-8)
    # the square's symmetry produces double eigenvalues, so compare the
    # M-orthogonal projectors of eigenvalue clusters instead of raw vectors
    h2 = mesh4.h**2
    i = 0
    while i < 6:
        j = i + 1
        while j < 6 and ref_vals[j] > ref_vals[i] * (1.0 - 1e-8):
            j += 1
        V = basis.eigvecs[:, i:j]
        W = ref_vecs[:, i:j]
        P = h2 * (V @ V.T)
        Q = h2 * (W @ W.T)
        assert np.abs(P - Q).max() * np.sqrt(h2) < 1e-6
        i = j


def test_sigma_scaling(mesh8):
    b1 = eigs(assemble_cov(mesh8, ExponentialKernel(), HyperParams(0.5, 1.0)), 10)
    b2 = eigs(assemble_cov(mesh8, ExponentialKernel(), HyperParams(0.5, 2.0)), 10)
    np.testing.assert_allclose(b2.eigvals, 4.0 * b1.eigvals, rtol=1e-10)
    # sign convention makes eigenvectors identical, not just up to sign
    np.testing.assert_allclose(b2.eigvecs, b1.eigvecs, atol=1e-8)


def test_eigs_rejects_bad_count(mesh4):
    cov = assemble_cov(mesh4, ExponentialKernel(), TAU)
    with pytest.raises(ValueError):
        eigs(cov, 17)
    with pytest.raises(ValueError):
        eigs(cov, 0)


def test_m_orthonormality_and_residuals(mesh16):
    cov = assemble_cov(mesh16, ExponentialKernel(), HyperParams(0.4, 1.0))
    basis = eigs(cov, 24)
    h2 = mesh16.h**2
    G = h2 * (basis.eigvecs.T @ basis.eigvecs)
    assert np.abs(G - np.eye(24)).max() < 1e-8
    # eigenvalue residuals ||C psi - lambda M psi|| / (lambda väl1 ||psi||)
    C = cov.dense()
    for i in range(24):
        psi = basis.eigvecs[:, i]
        r = C @ psi - basis.eigvals[i] * h2 * psi
        assert np.linalg.norm(r) / (basis.eigvals[0] * np.linalg.norm(psi)) < 1e-10


def test_trace_conservation(mesh16):
    for sigma in (1.0, 1.7):
        cov = assemble_cov(mesh16, ExponentialKernel(), HyperParams(0.5, sigma))
        vals = np.linalg.eigvalsh(cov.dense() / mesh16.h**2)
        assert abs(vals.sum() - sigma**2) < 1e-10
        basis = eigs(cov, 5)
        assert abs(basis.trace_total - sigma**2) < 1e-12


def test_leading_eigenvalue_monotone_in_ell():
    mesh = build_field_mesh(16)
    ells = np.linspace(0.3, 1.4, 8)
    lam1 = [eigs(assemble_cov(mesh, ExponentialKernel(), HyperParams(float(l), 1.0)), 1).eigvals[0]
            for l in ells]
    assert all(b - a >= -1e-8 for a, b in zip(lam1, lam1[1:]))


def test_repeat_solves_bit_reproducible(mesh8):
    cov = assemble_cov(mesh8, ExponentialKernel(), TAU)
    b1 = eigs(cov, 12)
    b2 = eigs(cov, 12)
    assert np.array_equal(b1.eigvals, b2.eigvals)
    assert np.array_equal(b1.eigvecs, b2.eigvecs)


# --------------------------------------------------------------------------
# truncation selection

def test_select_truncation_full_capture():
    spectra = [np.array([4.0, 3.0, 2.0, 1.0])]
    assert select_truncation(spectra, 1.0) == 4


def test_select_truncation_arithmetic():
    spectra = [np.array([4.0, 3.0, 2.0, 1.0])]
    assert select_truncation(spectra, 0.69) == 2


def test_select_truncation_modes_and_validation():
    spectra = [np.array([4.0, 3.0, 2.0, 1.0]), np.array([8.0, 1.0, 0.5, 0.5])]
    assert select_truncation(spectra, 0.69, mode="per_tau") == [2, 1]
    assert select_truncation(spectra, 0.69, mode="all") == 2
    with pytest.raises(ValueError):
        select_truncation(spectra, 0.0)
    with pytest.raises(ValueError):
        select_truncation(spectra, 1.1)


def test_select_truncation_dense_oracle():
    mesh = build_field_mesh(32)
    ells = [0.3, 0.7, np.sqrt(2)]
    spectra = []
    for ell in ells:
        C = assemble_cov(mesh, ExponentialKernel(), HyperParams(ell, 1.0)).dense()
        spectra.append(np.sort(np.linalg.eigvalsh(C / mesh.h**2))[::-1])
    n = select_truncation(spectra, 0.9)
    # brute-force check of the defining property
    for s in spectra:
        assert s[:n].sum() >= 0.9 * s.sum() - 1e-12
    assert any(s[:n - 1].sum() < 0.9 * s.sum() for s in spectra)


# --------------------------------------------------------------------------
# sampling

def test_kl_sample_zero_noise(mesh4):
    basis = eigs(assemble_cov(mesh4, ExponentialKernel(), TAU), 5)
    mean = np.full(16, 0.3)
    np.testing.assert_array_equal(kl_sample(basis, mean, np.zeros(5)), mean)


def test_kl_sample_single_mode_arithmetic(mesh4):
    basis = eigs(assemble_cov(mesh4, ExponentialKernel(), TAU), 1)
    basis.eigvals[0] = 4.0
    theta = kl_sample(basis, None, np.array([1.0]))
    np.testing.assert_allclose(theta, 2.0 * basis.eigvecs[:, 0])


def test_kl_sample_length_mismatch(mesh4):
    basis = eigs(assemble_cov(mesh4, ExponentialKernel(), TAU), 3)
    with pytest.raises(ValueError):
        kl_sample(basis, None, np.zeros(2))


def test_kl_sample_empirical_covariance(mesh4):
    # 1e5 draws against the truncated covariance sum(lambda psi psi^T)
    basis = eigs(assemble_cov(mesh4, ExponentialKernel(), TAU), 16)
    rng = stream(42, 0)
    n = 100_000
    xi = rng.standard_normal((n, 16))
    thetas = xi @ basis.factor().T
    emp = thetas.T @ thetas / n
    target = basis.factor() @ basis.factor().T
    # entrywise three standard errors (Gaussian fourth-moment formula)
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / n)
    assert np.all(np.abs(emp - target) <= 3.0 * se + 1e-12)


def test_truncation_mse_trivial_and_arithmetic(mesh4):
    basis = eigs(assemble_cov(mesh4, ExponentialKernel(), TAU), 16)
    assert truncation_mse(basis) <= 1e-12
    basis.eigvals = np.array([4.0, 3.0])
    assert truncation_mse(basis, full_trace=10.0) == 3.0


def test_truncation_mse_meets_capture_target():
    mesh = build_field_mesh(16)
    cov = assemble_cov(mesh, ExponentialKernel(), TAU)
    spectra = [np.sort(np.linalg.eigvalsh(cov.dense() / mesh.h**2))[::-1]]
    n = select_truncation(spectra, 0.9)
    basis = eigs(cov, n)
    assert truncation_mse(basis) <= 0.1 * basis.trace_total + 1e-12


def test_cholesky_sample_scalar():
    np.testing.assert_allclose(cholesky_sample(np.array([[4.0]]), np.array([1.0])), [2.0])


def test_cholesky_sample_covariance(mesh4):
    C = assemble_cov(mesh4, ExponentialKernel(), TAU).dense()
    rng = stream(7, 0)
    n = 100_000
    xi = rng.standard_normal((n, 16))
    L = np.linalg.cholesky(C)
    draws = xi @ L.T
    # same draw path as cholesky_sample, vectorised for speed
    np.testing.assert_allclose(cholesky_sample(C, xi[0]), draws[0], rtol=1e-12)
    emp = draws.T @ draws / n
    se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C**2) / n)
    assert np.all(np.abs(emp - C) <= 3.0 * se + 1e-15)


def test_cholesky_and_kl_agree_in_distribution(mesh4):
    # full-rank KL draws carry the pointwise covariance c(x_i, x_j), i.e. the
    # Galerkin matrix rescaled by the Gramian; factor that same matrix
    cov = assemble_cov(mesh4, ExponentialKernel(), TAU)
    basis = eigs(cov, 16)
    C_pt = cov.dense() / mesh4.h**4
    np.testing.assert_allclose(basis.factor() @ basis.factor().T, C_pt, atol=1e-10)
    rng = stream(11, 0)
    n = 100_000
    xi = rng.standard_normal((n, 16))
    kl_draws = xi @ basis.factor().T
    ch_draws = xi @ np.linalg.cholesky(C_pt).T
    # four standard errors: the bound must hold jointly across 16 cells,
    # two estimators and two moments
    se_mean = 4.0 * np.sqrt(np.diag(C_pt) / n)
    assert np.all(np.abs(kl_draws.mean(axis=0)) <= se_mean + 1e-12)
    assert np.all(np.abs(ch_draws.mean(axis=0)) <= se_mean + 1e-12)
    se_var = 4.0 * np.sqrt(2.0 * np.diag(C_pt) ** 2 / n)
    assert np.all(np.abs(kl_draws.var(axis=0) - np.diag(C_pt)) <= se_var)
    assert np.all(np.abs(ch_draws.var(axis=0) - np.diag(C_pt)) <= se_var)


def test_cholesky_sample_length_check():
    with pytest.raises(ValueError):
        cholesky_sample(np.eye(3), np.zeros(2))
