import numpy as np
import pytest

from rbfield.fem import (
    build_fem_problem,
    gaussian_source,
    lattice_points,
    observe,
    outflow_qoi,
    solve_pde,
)
from rbfield.kl import eigs
from rbfield.covariance import ExponentialKernel, HyperParams, assemble_cov
from rbfield.mesh import build_field_mesh, build_tri_mesh
from rbfield.rng import stream


@pytest.fixture(scope="module")
def flowcell16():
    field = build_field_mesh(16)
    tri = build_tri_mesh(16)
    return build_fem_problem(tri, field, bc="flow_cell")


def random_field(mesh, ell=0.5, seed=0, k=32):
    basis = eigs(assemble_cov(mesh, ExponentialKernel(), HyperParams(ell, 1.0)), k)
    rng = stream(seed, 20)
    return basis.factor() @ rng.standard_normal(basis.n_sto)


# --------------------------------------------------------------------------
# flow cell

def test_flowcell_linear_solution(flowcell16):
    p = solve_pde(flowcell16, np.zeros(256))
    np.testing.assert_allclose(p, 1.0 - flowcell16.mesh.vertices[:, 0], atol=1e-12)


def test_flowcell_constant_coefficient_invariance(flowcell16):
    p0 = solve_pde(flowcell16, np.zeros(256))
    p1 = solve_pde(flowcell16, np.full(256, 1.7))
    np.testing.assert_allclose(p0, p1, atol=1e-11)


def test_outflow_unit_cell(flowcell16):
    assert outflow_qoi(flowcell16, np.zeros(256)) == pytest.approx(1.0, abs=1e-12)


def test_outflow_scales_with_conductivity(flowcell16):
    q0 = outflow_qoi(flowcell16, np.zeros(256))
    q1 = outflow_qoi(flowcell16, np.full(256, np.log(2.0)))
    assert q1 == pytest.approx(2.0 * q0, rel=1e-12)


def test_maximum_principle_and_positive_flux(flowcell16):
    field = build_field_mesh(16)
    for seed in range(5):
        theta = random_field(field, seed=seed)
        p = solve_pde(flowcell16, theta)
        assert p.min() >= -1e-10 and p.max() <= 1.0 + 1e-10
        assert outflow_qoi(flowcell16, theta) > 0.0


def test_stiffness_spd_after_elimination(flowcell16):
    theta = random_field(build_field_mesh(16), seed=3)
    A = flowcell16.stiffness(theta)
    free = flowcell16.free
    K = A[free][:, free].toarray()
    vals = np.linalg.eigvalsh(0.5 * (K + K.T))
    assert vals.min() > 0.0


def test_outflow_mesh_convergence():
    # |Q(n) - Q(2n)| decreases under refinement for one fixed field
    field = build_field_mesh(16)
    theta = random_field(field, seed=1)
    qs = {}
    for n in (16, 32, 64, 128):
        prob = build_fem_problem(build_tri_mesh(n), field, bc="flow_cell")
        qs[n] = outflow_qoi(prob, theta)
    d1 = abs(qs[16] - qs[32])
    d2 = abs(qs[32] - qs[64])
    d3 = abs(qs[64] - qs[128])
    assert d1 > d2 > d3


def test_theta_validation(flowcell16):
    with pytest.raises(ValueError):
        solve_pde(flowcell16, np.zeros(100))
    bad = np.zeros(256)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        solve_pde(flowcell16, bad)


def test_outflow_requires_flow_cell():
    field = build_field_mesh(8)
    prob = build_fem_problem(build_tri_mesh(8), field, bc="dirichlet0")
    with pytest.raises(ValueError):
        outflow_qoi(prob, np.zeros(64))


# --------------------------------------------------------------------------
# observation operator

def test_observe_constant_field(flowcell16):
    p = np.ones(flowcell16.mesh.n_vertices)
    np.testing.assert_allclose(observe(flowcell16.mesh, p, lattice_points(7)), 1.0)


def test_observe_flowcell_center(flowcell16):
    p = solve_pde(flowcell16, np.zeros(256))
    assert observe(flowcell16.mesh, p, [[0.5, 0.5]])[0] == pytest.approx(0.5, abs=1e-12)


def test_observe_rejects_outside_points(flowcell16):
    p = np.ones(flowcell16.mesh.n_vertices)
    with pytest.raises(ValueError):
        observe(flowcell16.mesh, p, [[1.2, 0.5]])


def _barycentric_oracle(mesh, p, pts):
    """Brute force: locate the triangle containing each point and evaluate the
    barycentric interpolant."""
    verts = mesh.vertices
    out = np.empty(len(pts))
    for n, (x, y) in enumerate(pts):
        val = None
        for tri in mesh.triangles:
            a, b, c = verts[tri]
            T = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
            lam = np.linalg.solve(T, np.array([x - a[0], y - a[1]]))
            l1, l2 = lam
            l0 = 1.0 - l1 - l2
            if min(l0, l1, l2) >= -1e-12:
                val = l0 * p[tri[0]] + l1 * p[tri[1]] + l2 * p[tri[2]]
                break
        assert val is not None
        out[n] = val
    return out


def test_observe_matches_barycentric_oracle():
    tri = build_tri_mesh(8)
    rng = stream(21, 0)
    p = rng.standard_normal(tri.n_vertices)
    pts = np.column_stack([rng.uniform(0.02, 0.98, 40), rng.uniform(0.02, 0.98, 40)])
    pts = np.vstack([pts, lattice_points(7)])
    fast = observe(tri, p, pts)
    slow = _barycentric_oracle(tri, p, pts)
    np.testing.assert_allclose(fast, slow, atol=1e-12)


def test_lattice_points_default_grid():
    pts = lattice_points(7)
    assert pts.shape == (49, 2)
    assert {tuple(p) for p in pts} == {(n / 8, m / 8) for n in range(1, 8) for m in range(1, 8)}


# --------------------------------------------------------------------------
# source term

def test_gaussian_source_peak_value():
    # at a bump centre the dominant term is the squared 1-d normal peak
    peak = gaussian_source([[0.25, 0.25]])[0]
    assert peak == pytest.approx(1.0 / (2.0 * np.pi * 1e-3), rel=1e-6)


def test_gaussian_source_symmetry():
    rng = stream(22, 0)
    pts = np.column_stack([rng.uniform(0, 1, 50), rng.uniform(0, 1, 50)])
    swapped = pts[:, ::-1]
    np.testing.assert_allclose(gaussian_source(pts), gaussian_source(swapped), rtol=1e-12)


def test_gaussian_source_integrates_to_nine():
    # midpoint tensor quadrature oracle at 2048^2 points
    n = 2048
    xs = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vals = gaussian_source(np.column_stack([X.ravel(), Y.ravel()]))
    assert abs(vals.sum() / n**2 - 9.0) < 1e-3


def test_source_problem_fine_grid_reference():
    # pressure at the domain centre for theta = 0 against a 4x finer solve
    field = build_field_mesh(64)
    theta = np.zeros(field.n_cells)
    p_coarse = solve_pde(build_fem_problem(build_tri_mesh(64), field, bc="dirichlet0"), theta)
    p_fine = solve_pde(build_fem_problem(build_tri_mesh(256), field, bc="dirichlet0"), theta)
    v64 = observe(build_tri_mesh(64), p_coarse, [[0.5, 0.5]])[0]
    v256 = observe(build_tri_mesh(256), p_fine, [[0.5, 0.5]])[0]
    assert abs(v64 - v256) / abs(v256) < 0.01
