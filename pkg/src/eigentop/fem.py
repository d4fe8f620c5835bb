"""Piecewise-linear finite elements on triangulated domains.

Fields come in two flavors: nodal (one value per vertex, the P1 space) and
elementwise (one value per triangle, used for two-phase coefficients and for
derived quantities like |grad u|^2).  Matrices are scipy CSR; stiffness and
mass are exactly symmetric by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import Mesh

# Nodal/element fields are plain float arrays of length n_vertices /
# n_triangles; symmetric sparse matrices are scipy CSR.
NodalField = np.ndarray
ElementField = np.ndarray
SymmetricSparseMatrix = sp.csr_matrix


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary treatment per edge tag.

    kinds maps tag -> "dirichlet" | "neumann" | "robin".  Untagged edges
    default to "neumann" (natural).  eta is the Robin coefficient in
    du/dn + eta u = 0 on edges whose tag maps to "robin".
    """

    kinds: dict
    eta: float = 0.0

    def dirichlet_tags(self):
        return {t for t, k in self.kinds.items() if k == "dirichlet"}

    def robin_tags(self):
        return {t for t, k in self.kinds.items() if k == "robin"}


def all_dirichlet() -> BoundaryCondition:
    return BoundaryCondition({"boundary": "dirichlet"})


def all_neumann() -> BoundaryCondition:
    return BoundaryCondition({"boundary": "neumann"})


# ---------------------------------------------------------------------------
# element geometry
# ---------------------------------------------------------------------------

def _hat_gradients(mesh: Mesh):
    """Coefficients (b_i, c_i) with grad(phi_i) = (b_i, c_i) on each triangle."""
    tri = mesh.triangles
    p = mesh.vertices
    x = p[tri, 0]                          # (m, 3)
    y = p[tri, 1]
    area2 = 2.0 * mesh.element_areas       # (m,)
    b = np.empty_like(x)
    c = np.empty_like(x)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        b[:, i] = (y[:, j] - y[:, k]) / area2
        c[:, i] = (x[:, k] - x[:, j]) / area2
    return b, c


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _scatter(mesh: Mesh, ke: np.ndarray) -> SymmetricSparseMatrix:
    """Accumulate per-element 3x3 blocks ke (m,3,3) into a global CSR matrix."""
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    mat = sp.coo_matrix((ke.ravel(), (rows, cols)),
                        shape=(mesh.n_vertices, mesh.n_vertices)).tocsr()
    # enforce exact symmetry against float addition-order noise
    return ((mat + mat.T) * 0.5).tocsr()


def assemble_stiffness(mesh: Mesh, coeff: ElementField | None = None) -> SymmetricSparseMatrix:
    """Global stiffness for -div(coeff grad u); coeff defaults to 1."""
    b, c = _hat_gradients(mesh)
    w = mesh.element_areas if coeff is None else mesh.element_areas * np.asarray(coeff)
    ke = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) * w[:, None, None]
    return _scatter(mesh, ke)


_MASS_REF = np.array([[2.0, 1.0, 1.0],
                      [1.0, 2.0, 1.0],
                      [1.0, 1.0, 2.0]]) / 12.0


def assemble_mass(mesh: Mesh, coeff: ElementField | None = None) -> SymmetricSparseMatrix:
    """Consistent P1 mass matrix, optionally weighted by an element field."""
    w = mesh.element_areas if coeff is None else mesh.element_areas * np.asarray(coeff)
    ke = _MASS_REF[None, :, :] * w[:, None, None]
    return _scatter(mesh, ke)


def assemble_robin_boundary(mesh: Mesh, eta: float, tag: str = "robin") -> SymmetricSparseMatrix:
    """Boundary mass eta * int_edge u v over edges carrying the given tag."""
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    block = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    for i, j, t in mesh.boundary_edges:
        if t != tag:
            continue
        length = float(np.hypot(*(mesh.vertices[j] - mesh.vertices[i])))
        e = eta * length * block
        for a, va in enumerate((i, j)):
            for bb, vb in enumerate((i, j)):
                rows.append(va)
                cols.append(vb)
                vals.append(e[a, bb])
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return ((mat + mat.T) * 0.5).tocsr()


def dirichlet_vertices(mesh: Mesh, tags) -> np.ndarray:
    """Sorted unique vertex indices lying on edges with a tag in tags."""
    idx = set()
    for i, j, t in mesh.boundary_edges:
        if t in tags:
            idx.add(i)
            idx.add(j)
    return np.array(sorted(idx), dtype=int)


def apply_dirichlet(K: SymmetricSparseMatrix, M: SymmetricSparseMatrix,
                    mesh: Mesh, tags) -> tuple:
    """Eliminate Dirichlet dofs.  Returns (K_red, M_red, dof_map) where
    dof_map holds the retained (free) vertex indices in order."""
    fixed = dirichlet_vertices(mesh, tags)
    keep = np.setdiff1d(np.arange(mesh.n_vertices), fixed)
    K_red = K[keep][:, keep].tocsr()
    M_red = M[keep][:, keep].tocsr()
    return K_red, M_red, keep


def expand_field(values: np.ndarray, dof_map: np.ndarray, n: int) -> NodalField:
    """Scatter a reduced vector back to all vertices (zeros on fixed dofs)."""
    full = np.zeros(n)
    full[dof_map] = values
    return full


# ---------------------------------------------------------------------------
# derived element quantities
# ---------------------------------------------------------------------------

def element_gradient(mesh: Mesh, u: NodalField) -> np.ndarray:
    """Constant per-triangle gradient of a P1 field, shape (m, 2)."""
    b, c = _hat_gradients(mesh)
    uv = u[mesh.triangles]
    return np.column_stack([(uv * b).sum(1), (uv * c).sum(1)])


def flux_magnitude_sq(mesh: Mesh, u: NodalField, rho: ElementField) -> ElementField:
    """Elementwise rho^2 |grad u|^2 (square of the flux rho grad u)."""
    g = element_gradient(mesh, u)
    return np.asarray(rho) ** 2 * (g ** 2).sum(1)


def element_mean(mesh: Mesh, u: NodalField) -> ElementField:
    """Vertex average per triangle = value of a P1 field at the centroid."""
    return u[mesh.triangles].mean(axis=1)


def integrate(mesh: Mesh, field: ElementField) -> float:
    return float(np.dot(mesh.element_areas, field))
