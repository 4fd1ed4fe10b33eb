"""Structured interval and rectangle meshes with a P1 nodal space.

Convergence ladders need a tightly controlled mesh size, so only uniform
structured meshes are provided.  The mesh size is called delta throughout
the package; h always indexes a coefficient sequence, never the mesh.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DIRICHLET = "dirichlet-zero"
PERIODIC = "periodic"


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh: vertex coordinates, connectivity, boundary flags.

    ``structure`` records how the mesh was built:
    ``("interval", n, x0, x1)`` or ``("rect", nx, ny, x0, x1, y0, y1)``.
    Instances are immutable after construction.
    """

    dimension: int
    vertices: np.ndarray   # (nv,) in 1D, (nv, 2) in 2D
    cells: np.ndarray      # (nc, dimension + 1) vertex indices
    boundary: np.ndarray   # (nv,) bool
    structure: tuple

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def cell_measures(self) -> np.ndarray:
        """Length (1D) or area (2D) of every cell, all positive."""
        if self.dimension == 1:
            x = self.vertices
            return x[self.cells[:, 1]] - x[self.cells[:, 0]]
        p0 = self.vertices[self.cells[:, 0]]
        e1 = self.vertices[self.cells[:, 1]] - p0
        e2 = self.vertices[self.cells[:, 2]] - p0
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def max_cell_span(self) -> float:
        """Largest per-axis extent of any cell (drives the resolution rule)."""
        if self.dimension == 1:
            return float(np.max(self.cell_measures()))
        pts = self.vertices[self.cells]             # (nc, 3, 2)
        spans = pts.max(axis=1) - pts.min(axis=1)   # (nc, 2)
        return float(spans.max())

    def domain_measure(self) -> float:
        return float(np.sum(self.cell_measures()))


@dataclass(frozen=True, eq=False)
class FeSpace:
    """P1 nodal space on a mesh with Dirichlet or periodic boundary handling.

    ``dof_of_vertex[v]`` is the degree of freedom owning vertex ``v`` or -1
    for an eliminated (Dirichlet) vertex; ``dof_vertices[i]`` is the
    representative vertex of dof ``i`` (used for nodal interpolation).
    """

    mesh: Mesh
    rule: str
    dof_of_vertex: np.ndarray
    dof_vertices: np.ndarray

    @property
    def num_dofs(self) -> int:
        return self.dof_vertices.shape[0]

    def dof_coordinates(self) -> np.ndarray:
        return self.mesh.vertices[self.dof_vertices]

    def interpolate(self, fn) -> np.ndarray:
        """Nodal interpolant: evaluate ``fn`` at the dof coordinates.

        On Dirichlet spaces the boundary values of ``fn`` are discarded
        (the represented function is clamped to zero there).
        """
        coords = self.dof_coordinates()
        if self.mesh.dimension == 1:
            vals = fn(coords)
        else:
            vals = fn(coords[:, 0], coords[:, 1])
        return np.asarray(vals, dtype=float).reshape(self.num_dofs)


def build_interval_mesh(n_cells: int, interval=(0.0, 1.0)) -> Mesh:
    """Uniform mesh of an interval with ``n_cells`` cells."""
    x0, x1 = float(interval[0]), float(interval[1])
    if n_cells < 1:
        raise ValueError(f"n_cells must be >= 1, got {n_cells}")
    if not x1 > x0:
        raise ValueError(f"degenerate interval [{x0}, {x1}]")
    verts = np.linspace(x0, x1, n_cells + 1)
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    boundary = np.zeros(n_cells + 1, dtype=bool)
    boundary[0] = boundary[-1] = True
    return Mesh(1, verts, cells, boundary, ("interval", n_cells, x0, x1))


def build_rect_mesh(nx: int, ny: int, rect=(0.0, 1.0, 0.0, 1.0)) -> Mesh:
    """Structured triangulation of a rectangle, 2 triangles per grid square.

    Every square is split along the same diagonal (lower-left to upper-right)
    so that refinement studies reproduce bit-identical golden values.
    """
    x0, x1, y0, y1 = (float(v) for v in rect)
    if nx < 1 or ny < 1:
        raise ValueError(f"nx, ny must be >= 1, got ({nx}, {ny})")
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle [{x0},{x1}]x[{y0},{y1}]")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    v00, v10 = vid(I, J), vid(I + 1, J)
    v11, v01 = vid(I + 1, J + 1), vid(I, J + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper

    gi = np.repeat(np.arange(nx + 1), ny + 1)
    gj = np.tile(np.arange(ny + 1), nx + 1)
    boundary = (gi == 0) | (gi == nx) | (gj == 0) | (gj == ny)
    return Mesh(2, verts, cells, boundary, ("rect", nx, ny, x0, x1, y0, y1))


def build_space(mesh: Mesh, rule: str = DIRICHLET) -> FeSpace:
    """Attach a dof map to a mesh under a boundary rule.

    ``dirichlet-zero`` assigns dofs to interior vertices only (conforming
    zero-trace subspace); ``periodic`` identifies opposite-face vertices of
    the structured cell, leaving ``n`` (1D) or ``nx*ny`` (2D) dofs.
    """
    nv = mesh.num_vertices
    dof_of_vertex = np.full(nv, -1, dtype=np.int64)
    if rule == DIRICHLET:
        interior = np.flatnonzero(~mesh.boundary)
        dof_of_vertex[interior] = np.arange(interior.size)
        return FeSpace(mesh, rule, dof_of_vertex, interior)
    if rule == PERIODIC:
        kind = mesh.structure[0]
        if kind == "interval":
            n = mesh.structure[1]
            dof_of_vertex[:n] = np.arange(n)
            dof_of_vertex[n] = 0
            return FeSpace(mesh, rule, dof_of_vertex, np.arange(n))
        if kind == "rect":
            nx, ny = mesh.structure[1], mesh.structure[2]
            gi = np.repeat(np.arange(nx + 1), ny + 1)
            gj = np.tile(np.arange(ny + 1), nx + 1)
            dof_of_vertex[:] = (gi % nx) * ny + (gj % ny)
            reps = np.flatnonzero((gi < nx) & (gj < ny))
            order = np.argsort(dof_of_vertex[reps])
            return FeSpace(mesh, rule, dof_of_vertex, reps[order])
        raise ValueError(f"periodic rule unsupported on '{kind}' mesh")
    raise ValueError(f"unknown boundary rule '{rule}'")
