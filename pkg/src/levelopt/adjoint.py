"""Regularized adjoint state with a mollified Dirac source, and the direction -y*p."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import assembly
from .mesh import Mesh
from .regfun import heaviside_reg_prime, mollifier
from .sensitivity import ObservationSpec, SensitivitySystem
from .state import GRAD_FLOOR, DegenerateGradientError, ProblemData, StateField

# Strang-Fix / Dunavant 7-point rule, degree 5: (barycentric, weight / area)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
DUNAVANT7_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
DUNAVANT7_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


@dataclass
class AdjointField:
    values: np.ndarray
    residual: float


def triangles_near(mesh: Mesh, center, radius) -> np.ndarray:
    """Triangles whose circumscribing disc around the centroid meets the disc (center, radius)."""
    p = mesh.vertices[mesh.triangles]
    cen = p.mean(axis=1)
    reach = np.linalg.norm(p - cen[:, None, :], axis=2).max(axis=1)
    dist = np.linalg.norm(cen - np.asarray(center, dtype=float), axis=1)
    return np.flatnonzero(dist < radius + reach)


def mollifier_masses(mesh: Mesh, center, eps1, tris=None) -> tuple[np.ndarray, np.ndarray]:
    """(triangles, int_T zeta_eps1(x - center) dx) by the 7-point rule."""
    if tris is None:
        tris = triangles_near(mesh, center, eps1)
    p = mesh.vertices[mesh.triangles[tris]]
    qp = np.einsum("qk,tkd->tqd", DUNAVANT7_POINTS, p)
    vals = mollifier(qp - np.asarray(center, dtype=float), eps1)
    return tris, (vals @ DUNAVANT7_WEIGHTS) * mesh.areas[tris]


def adjoint_rhs(mesh: Mesh, y, g, obs: ObservationSpec, eps1: float,
                grad_floor=GRAD_FLOOR) -> np.ndarray:
    """-sum_j int 2 (dy/dn - alpha_j) (dphi_v/dn) zeta_eps1(x - x_j) dx over W_h.

    On each triangle grad y, grad g and grad phi_v are constant, so only the
    mollifier mass of the triangle is integrated numerically.
    """
    y = y.values if isinstance(y, StateField) else np.asarray(y)
    rhs = np.zeros(mesh.n)
    for x0, alpha in zip(obs.points, obs.targets):
        tris, masses = mollifier_masses(mesh, x0, eps1)
        keep = masses > 0
        tris, masses = tris[keep], masses[keep]
        if tris.size == 0:
            continue
        dg = mesh.element_gradients(g)[tris]
        norm = np.linalg.norm(dg, axis=1)
        if np.any(norm <= grad_floor):
            raise DegenerateGradientError("|grad g| vanishes inside the mollifier support")
        n = dg / norm[:, None]
        dn = np.einsum("td,td->t", mesh.element_gradients(y)[tris], n)
        dphi = np.einsum("tkd,td->tk", mesh.basis_gradients[tris], n)
        local = -2.0 * ((dn - alpha) * masses)[:, None] * dphi
        np.add.at(rhs, mesh.triangles[tris], local)
    return rhs


def solve_adjoint(data: ProblemData, state: StateField, obs: ObservationSpec,
                  system: SensitivitySystem | None = None) -> AdjointField:
    """p_h with the matrix and dofs of the sensitivity problems and the mollified rhs."""
    system = system or SensitivitySystem(data, state)
    rhs = adjoint_rhs(data.mesh, state, data.g, obs, data.params.eps1)[system.dofs]
    p = system.solve(rhs)
    res = np.abs(system.matrix @ p - rhs).max(initial=0.0)
    scale = max(np.abs(rhs).max(initial=0.0), 1e-300)
    return AdjointField(system.lift(p), float(res / scale))


def simplified_direction(y, p, I0=()) -> np.ndarray:
    """Nodal h = -y * p with the frozen indices set to zero."""
    y = y.values if isinstance(y, StateField) else np.asarray(y)
    p = p.values if isinstance(p, AdjointField) else np.asarray(p)
    h = -y * p
    h[np.asarray(I0, dtype=int)] = 0.0
    return h


def descent_surrogate(data: ProblemData, y, p, h=None) -> float:
    """(1/eps) int H'(g) h y p dx; with h = -y p this is -(1/eps) int H'(g) (y p)^2 <= 0."""
    mesh = data.mesh
    y = y.values if isinstance(y, StateField) else np.asarray(y)
    p = p.values if isinstance(p, AdjointField) else np.asarray(p)
    hq = assembly.to_quad(mesh, h) if h is not None else None
    yq = assembly.to_quad(mesh, y)
    pq = assembly.to_quad(mesh, p)
    Hp = heaviside_reg_prime(assembly.to_quad(mesh, data.g), data.params.eta)
    if hq is None:
        hq = -yq * pq
    return assembly.quad_integral(mesh, Hp * hq * yq * pq) / data.params.eps


def sign_surrogate(data: ProblemData, y, p) -> float:
    """(1/eps) int H'(g) (y p)^2 dx, nonnegative by construction."""
    return -descent_surrogate(data, y, p)
