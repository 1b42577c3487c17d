"""Sparse P1 assembly on the hold-all domain and reusable direct factorizations.

Mass-type integrals use the edge-midpoint rule (three points, weights area/3,
exact for quadratics). Coefficients enter either as nodal vectors, which are
interpolated to the midpoints, or directly as ``(nt, 3)`` midpoint values.
"""

from __future__ import annotations

import logging
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh

logger = logging.getLogger(__name__)

# barycentric coordinates of the midpoints of edges (01), (12), (20)
MIDPOINT_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


class SolverError(RuntimeError):
    """A factorization or linear solve failed."""


@lru_cache(maxsize=8)
def _pattern(mesh: Mesh):
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    return rows, cols


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows, cols = _pattern(mesh)
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n, mesh.n)).tocsr()
    A.sum_duplicates()
    return A


def quad_points(mesh: Mesh) -> np.ndarray:
    """(nt, 3, 2) physical coordinates of the edge-midpoint quadrature nodes."""
    p = mesh.vertices[mesh.triangles]
    return np.einsum("qk,tkd->tqd", MIDPOINT_BARY, p)


def to_quad(mesh: Mesh, values) -> np.ndarray:
    """Coefficient values at the quadrature nodes, shape (nt, 3).

    Accepts a scalar, a nodal vector of length n, an (nt, 3) array of
    midpoint values, or a callable of an (m, 2) coordinate array.
    """
    if callable(values):
        pts = quad_points(mesh)
        return np.asarray(values(pts.reshape(-1, 2)), dtype=float).reshape(mesh.nt, 3)
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return np.full((mesh.nt, 3), float(values))
    if values.shape == (mesh.n,):
        return values[mesh.triangles] @ MIDPOINT_BARY.T
    if values.shape == (mesh.nt, 3):
        return values
    raise ValueError(f"cannot interpret coefficient of shape {values.shape}")


def stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Exact P1 Laplacian on W_h: sum over triangles of area * grad(phi_i).grad(phi_j)."""
    G = mesh.basis_gradients
    local = mesh.areas[:, None, None] * np.einsum("tid,tjd->tij", G, G)
    return _assemble(mesh, local)


def weighted_mass(mesh: Mesh, coeff, signed=False) -> sp.csr_matrix:
    """Matrix of the bilinear form (u, v) -> int coeff * u * v.

    A negative coefficient is logged unless ``signed`` says it is expected.
    """
    c = to_quad(mesh, coeff)
    if not signed and c.min(initial=0.0) < 0.0:
        logger.warning("weighted mass with negative coefficient (min %.3e)", c.min())
    # sum_q c_q * lam_i(q) * lam_j(q), weights area/3
    local = np.einsum("tq,qi,qj->tij", c, MIDPOINT_BARY, MIDPOINT_BARY)
    local *= (mesh.areas / 3.0)[:, None, None]
    return _assemble(mesh, local)


def load_vector(mesh: Mesh, f) -> np.ndarray:
    """Vector of int f * phi_i over all vertices of W_h."""
    c = to_quad(mesh, f)
    local = (c @ MIDPOINT_BARY) * (mesh.areas / 3.0)[:, None]
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n)


def quad_integral(mesh: Mesh, values) -> float:
    """Integral over D of a quantity given at the quadrature nodes."""
    c = to_quad(mesh, values)
    return float((c.sum(axis=1) * mesh.areas / 3.0).sum())


def restrict(mesh: Mesh, A: sp.spmatrix) -> sp.csc_matrix:
    """Rows and columns of the interior (V_h) degrees of freedom."""
    idx = mesh.interior
    return A.tocsr()[idx][:, idx].tocsc()


class Factorization:
    """Sparse LU factors of a nonsingular matrix, reusable across right-hand sides."""

    def __init__(self, A: sp.spmatrix):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise SolverError(f"matrix is not square: {A.shape}")
        self.shape = A.shape
        self.matrix = A
        try:
            # symmetric mode: pivot on the diagonal, ordering on A^T + A
            self._lu = spla.splu(
                A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
        if not np.all(np.isfinite(self._lu.U.data)):
            raise SolverError("factorization produced non-finite values")

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x = self._lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("solve produced non-finite values (singular matrix?)")
        return x


def factorize(A) -> Factorization:
    return Factorization(A)


def solve(factor: Factorization, rhs) -> np.ndarray:
    return factor.solve(rhs)
