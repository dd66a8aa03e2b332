"""Uniform discretisations of the unit square D = (0,1)^2.

Random fields live on a rectangular grid of piecewise-constant cells
(:class:`FieldMesh`); the PDE is solved with linear elements on a uniform
triangulation (:class:`TriMesh`).  Both are immutable after construction and
safe to share read-only between workers.
"""

from dataclasses import dataclass, field

import numpy as np

DIAM = float(np.sqrt(2.0))  # diameter of the unit square


@dataclass(eq=False)
class FieldMesh:
    """n_side x n_side grid of square cells, indexed row-major with x fastest.

    The Gramian of the piecewise-constant basis is diagonal with every entry
    equal to the cell area h^2.
    """

    n_side: int
    h: float
    centers: np.ndarray       # (N, 2) cell midpoints
    mass_diag: np.ndarray     # (N,) all equal to h^2
    _dist: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return self.n_side * self.n_side

    def cell_index(self, points) -> np.ndarray:
        """Flat index of the cell containing each point (boundary clamped)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ij = np.clip((pts / self.h).astype(int), 0, self.n_side - 1)
        return ij[:, 1] * self.n_side + ij[:, 0]

    def pairwise_distances(self) -> np.ndarray:
        """Dense matrix of center-to-center distances (cached; O(N^2) memory)."""
        if self._dist is None:
            d = self.centers[:, None, :] - self.centers[None, :, :]
            self._dist = np.sqrt((d * d).sum(axis=-1))
        return self._dist


def build_field_mesh(n_side: int) -> FieldMesh:
    """Uniform cell mesh with centers ((i+1/2)h, (j+1/2)h), h = 1/n_side."""
    if n_side < 1:
        raise ValueError(f"n_side must be >= 1, got {n_side}")
    n = int(n_side)
    h = 1.0 / n
    xs = (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(xs, xs, indexing="xy")   # row-major, x fastest
    centers = np.column_stack([X.ravel(), Y.ravel()])
    return FieldMesh(n_side=n, h=h, centers=centers, mass_diag=np.full(n * n, h * h))


@dataclass(eq=False)
class TriMesh:
    """Uniform triangulation: each grid square split along its SW-NE diagonal."""

    n_side: int
    vertices: np.ndarray      # ((n+1)^2, 2)
    triangles: np.ndarray     # (2 n^2, 3) vertex indices, positive orientation
    west: np.ndarray          # boundary masks over vertices
    east: np.ndarray
    south: np.ndarray
    north: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def boundary(self) -> np.ndarray:
        return self.west | self.east | self.south | self.north

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def build_tri_mesh(n_side: int) -> TriMesh:
    """Triangulated unit square with (n+1)^2 vertices and 2 n^2 triangles."""
    if n_side < 1:
        raise ValueError(f"n_side must be >= 1, got {n_side}")
    n = int(n_side)
    h = 1.0 / n
    xs = np.arange(n + 1) * h
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    x, y = vertices[:, 0], vertices[:, 1]
    return TriMesh(
        n_side=n,
        vertices=vertices,
        triangles=triangles,
        west=(x == 0.0),
        east=(x == 1.0),
        south=(y == 0.0),
        north=(y == 1.0),
    )
