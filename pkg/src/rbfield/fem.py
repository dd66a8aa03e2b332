"""Linear triangular finite elements for the log-diffusion flow model.

-div(exp(theta) grad p) = f on the unit square, with either the flow-cell
boundary conditions (p = 1 on the west edge, p = 0 on the east edge, zero
Neumann north/south, f = 0) or homogeneous Dirichlet walls with a 3 x 3 grid
of Gaussian source bumps.

The coefficient is piecewise constant per triangle: exp of the field value in
the cell of the triangle centroid.  The boundary outflow functional is
recovered as Q = psi^T A p with psi the nodal indicator of the west edge and
A the unconstrained stiffness matrix; the sign convention makes Q(0) = +1 on
the unit flow cell.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError
from .mesh import FieldMesh, TriMesh

SOURCE_VARIANCE = 1e-3


def gaussian_source(x) -> np.ndarray | float:
    """3 x 3 grid of Gaussian bumps centred at (n/4, m/4), variance 1e-3 per axis."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    centers = 0.25 * np.arange(1, 4)
    norm = 1.0 / np.sqrt(2.0 * np.pi * SOURCE_VARIANCE)
    gx = norm * np.exp(-((pts[:, 0, None] - centers) ** 2) / (2.0 * SOURCE_VARIANCE))
    gy = norm * np.exp(-((pts[:, 1, None] - centers) ** 2) / (2.0 * SOURCE_VARIANCE))
    out = (gx.sum(axis=1)) * (gy.sum(axis=1))
    return out if np.ndim(x) > 1 else float(out[0])


def _local_stiffness(p0, p1, p2) -> np.ndarray:
    """P1 stiffness of one triangle with unit coefficient."""
    b = np.array([p1[1] - p2[1], p2[1] - p0[1], p0[1] - p1[1]])
    c = np.array([p2[0] - p1[0], p0[0] - p2[0], p1[0] - p0[0]])
    area = 0.5 * abs((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    return (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)


@dataclass(eq=False)
class FemProblem:
    """Preassembled structures for one mesh/BC/source configuration."""

    mesh: TriMesh
    field_mesh: FieldMesh
    bc: str                         # "flow_cell" | "dirichlet0"
    source: str                     # "zero" | "gaussian_grid"
    tri_cells: np.ndarray = field(init=False)
    _rows: np.ndarray = field(init=False, repr=False)
    _cols: np.ndarray = field(init=False, repr=False)
    _loc: np.ndarray = field(init=False, repr=False)
    load: np.ndarray = field(init=False, repr=False)
    dirichlet: np.ndarray = field(init=False, repr=False)
    dirichlet_values: np.ndarray = field(init=False, repr=False)
    free: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.bc not in ("flow_cell", "dirichlet0"):
            raise ValueError(f"unknown bc {self.bc!r}")
        if self.source not in ("zero", "gaussian_grid"):
            raise ValueError(f"unknown source {self.source!r}")
        tri = self.mesh.triangles
        self.tri_cells = self.field_mesh.cell_index(self.mesh.centroids())
        self._rows = np.repeat(tri, 3, axis=1).ravel()
        self._cols = np.tile(tri, (1, 3)).ravel()
        verts = self.mesh.vertices
        # uniform mesh: only two triangle shapes, assembled per element anyway
        loc = np.empty((self.mesh.n_triangles, 3, 3))
        lower = _local_stiffness(*verts[tri[0]])
        upper = _local_stiffness(*verts[tri[1]])
        loc[0::2] = lower
        loc[1::2] = upper
        self._loc = loc

        nv = self.mesh.n_vertices
        b = np.zeros(nv)
        if self.source == "gaussian_grid":
            areas = self.mesh.areas()
            fvals = gaussian_source(verts)
            for local in range(3):
                np.add.at(b, tri[:, local], areas / 3.0 * fvals[tri[:, local]])
        self.load = b

        if self.bc == "flow_cell":
            self.dirichlet = self.mesh.west | self.mesh.east
            vals = np.zeros(nv)
            vals[self.mesh.west] = 1.0
            self.dirichlet_values = vals[self.dirichlet]
        else:
            self.dirichlet = self.mesh.boundary
            self.dirichlet_values = np.zeros(int(self.dirichlet.sum()))
        self.free = ~self.dirichlet

    def stiffness(self, theta: np.ndarray) -> sp.csr_matrix:
        """Unconstrained stiffness with coefficient exp(theta) per centroid cell."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.field_mesh.n_cells,):
            raise ValueError(f"theta must have length {self.field_mesh.n_cells}")
        if not np.isfinite(theta).all():
            raise ValueError("theta contains non-finite values")
        kappa = np.exp(theta[self.tri_cells])
        data = (kappa[:, None, None] * self._loc).ravel()
        n = self.mesh.n_vertices
        return sp.coo_matrix((data, (self._rows, self._cols)), shape=(n, n)).tocsr()


def build_fem_problem(mesh: TriMesh, field_mesh: FieldMesh, bc: str = "flow_cell",
                      source: str | None = None) -> FemProblem:
    if source is None:
        source = "zero" if bc == "flow_cell" else "gaussian_grid"
    return FemProblem(mesh=mesh, field_mesh=field_mesh, bc=bc, source=source)


def solve_pde(prob: FemProblem, theta: np.ndarray, return_stiffness: bool = False):
    """Galerkin solution of the diffusion problem for the given log-coefficient."""
    A = prob.stiffness(theta)
    free = prob.free
    rhs = prob.load[free] - A[free][:, prob.dirichlet] @ prob.dirichlet_values
    K = A[free][:, free].tocsc()
    try:
        p_free = spla.splu(K).solve(rhs)
    except RuntimeError as exc:  # singular factorisation
        raise NumericalError(f"stiffness solve failed: {exc}") from exc
    if not np.isfinite(p_free).all():
        raise NumericalError("stiffness solve returned non-finite values")
    p = np.empty(prob.mesh.n_vertices)
    p[free] = p_free
    p[prob.dirichlet] = prob.dirichlet_values
    return (p, A) if return_stiffness else p


def outflow_qoi(prob: FemProblem, theta: np.ndarray, p: np.ndarray | None = None,
                A: sp.csr_matrix | None = None) -> float:
    """Boundary-flux quantity of interest of the flow cell, sign-fixed positive.

    Q = psi^T A p with psi the piecewise-linear nodal indicator of the west
    edge; for theta = 0 this evaluates to exactly 1 (unit pressure drop).
    """
    if prob.bc != "flow_cell":
        raise ValueError("outflow is defined for the flow-cell configuration")
    if p is None or A is None:
        p, A = solve_pde(prob, theta, return_stiffness=True)
    return float((A @ p)[prob.mesh.west].sum())


def observe(mesh: TriMesh, p: np.ndarray, points) -> np.ndarray:
    """Evaluate the piecewise-linear interpolant of nodal values p at points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(pts < 0.0) or np.any(pts > 1.0):
        raise ValueError("observation points must lie in the closed unit square")
    n = mesh.n_side
    h = 1.0 / n
    ij = np.minimum((pts / h).astype(int), n - 1)
    xi = pts[:, 0] / h - ij[:, 0]
    eta = pts[:, 1] / h - ij[:, 1]
    v00 = ij[:, 1] * (n + 1) + ij[:, 0]
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = xi >= eta
    vals = np.where(
        lower,
        p[v00] + (p[v10] - p[v00]) * xi + (p[v11] - p[v10]) * eta,
        p[v00] + (p[v11] - p[v01]) * xi + (p[v01] - p[v00]) * eta,
    )
    return vals


def lattice_points(k: int = 7) -> np.ndarray:
    """The (n/(k+1), m/(k+1)) observation lattice, n, m = 1..k."""
    g = np.arange(1, k + 1) / (k + 1)
    X, Y = np.meshgrid(g, g, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])
