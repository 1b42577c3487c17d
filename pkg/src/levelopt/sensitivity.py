"""Pointwise boundary-observation costs and their discrete gradient in the nodal level values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import assembly
from .mesh import Mesh, ball_indices
from .regfun import heaviside_reg_prime
from .state import (
    GRAD_FLOOR,
    ProblemData,
    StateField,
    linearization,
    unit_normal,
)

BLOCK = 256


@dataclass(frozen=True)
class ObservationSpec:
    """Observation points on the zero level and their target normal derivatives."""

    points: np.ndarray
    targets: np.ndarray

    def __init__(self, points, targets=0.0):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != 2 or len(pts) < 1:
            raise ValueError("need at least one 2D observation point")
        tg = np.broadcast_to(np.asarray(targets, dtype=float), (len(pts),)).copy()
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "targets", tg)

    def __len__(self):
        return len(self.points)


@dataclass
class PointGeometry:
    """Located triangle and unit normal of g_h at one observation point."""

    triangle: int
    vertices: np.ndarray
    grad_g_norm: float
    normal: np.ndarray
    basis_grads: np.ndarray  # (3, 2) gradients of the hats of ``vertices``


def point_geometry(mesh: Mesh, g, x, grad_floor=GRAD_FLOOR) -> PointGeometry:
    t, _ = mesh.locate(x)
    dg = mesh.gradient(g, t)
    norm = float(np.hypot(*dg))
    n = unit_normal(mesh, g, t, grad_floor)
    return PointGeometry(t, mesh.triangles[t].copy(), norm, n, mesh.basis_gradients[t].copy())


def select_I0(mesh: Mesh, obs: ObservationSpec, mode="ball", C=2.0) -> np.ndarray:
    """Frozen vertex indices near the observation points.

    ``mode="ball"``: vertices closer than C*h to some point.
    ``mode="triangle"``: vertices of the triangles containing the points.
    """
    if mode == "ball":
        return ball_indices(mesh, obs.points, C * mesh.h)
    if mode == "triangle":
        idx = [mesh.triangles[mesh.locate(x)[0]] for x in obs.points]
        return np.unique(np.concatenate(idx))
    raise ValueError(f"unknown I0 mode {mode!r}")


def free_indices(mesh: Mesh, I0) -> np.ndarray:
    mask = np.ones(mesh.n, dtype=bool)
    mask[np.asarray(I0, dtype=int)] = False
    return np.flatnonzero(mask)


def normal_derivatives(mesh: Mesh, y, g, obs: ObservationSpec) -> np.ndarray:
    y = y.values if isinstance(y, StateField) else np.asarray(y)
    out = []
    for x in obs.points:
        geo = point_geometry(mesh, g, x)
        out.append(mesh.gradient(y, geo.triangle) @ geo.normal)
    return np.array(out)


def eval_cost(mesh: Mesh, y, g, obs: ObservationSpec) -> float:
    """Sum over points of (dy/dn(x_j) - alpha_j)^2."""
    dn = normal_derivatives(mesh, y, g, obs)
    return float(((dn - obs.targets) ** 2).sum())


def cost_of_level(data: ProblemData, obs: ObservationSpec, y0=None):
    """Solve the state for ``data`` and return (cost, state)."""
    from .state import solve_state

    st = solve_state(data, y0=y0)
    return eval_cost(data.mesh, st, data.g, obs), st


class SensitivitySystem:
    """Shared factorization of the linearized state problem and the rhs coupling.

    The right-hand side of the problem for u_i is the column i of
    -(1/eps) B restricted to the linearization dofs, where
    B[v, i] = int H'(g) y phi_i phi_v.
    """

    def __init__(self, data: ProblemData, state: StateField):
        self.data = data
        self.state = state
        mesh = data.mesh
        p = data.params
        self.dofs, self.matrix = linearization(data, state)
        self.factor = assembly.factorize(self.matrix)
        gq = assembly.to_quad(mesh, data.g)
        yq = assembly.to_quad(mesh, state.values)
        self.coupling = assembly.weighted_mass(
            mesh, heaviside_reg_prime(gq, p.eta) * yq, signed=True
        ).tocsc()
        self.scale = -1.0 / p.eps

    def rhs(self, indices) -> np.ndarray:
        cols = self.coupling[:, np.asarray(indices, dtype=int)]
        return self.scale * cols[self.dofs].toarray()

    def solve(self, rhs) -> np.ndarray:
        return self.factor.solve(rhs)

    def lift(self, values) -> np.ndarray:
        """Extend dof values by zero to W_h (last axis over dofs)."""
        values = np.asarray(values)
        out = np.zeros(values.shape[:-1] + (self.data.mesh.n,))
        out[..., self.dofs] = values
        return out


def solve_sensitivities(data: ProblemData, state: StateField, free, system=None) -> dict:
    """u_i for every i in ``free``, as nodal vectors over W_h, from one factorization."""
    system = system or SensitivitySystem(data, state)
    free = np.asarray(free, dtype=int)
    out = {}
    for start in range(0, len(free), BLOCK):
        block = free[start : start + BLOCK]
        rhs = system.rhs(block)
        nz = np.flatnonzero(np.abs(rhs).max(axis=0) > 0)
        sol = np.zeros_like(rhs)
        if nz.size:
            sol[:, nz] = system.solve(rhs[:, nz])
        full = system.lift(sol.T)
        for k, i in enumerate(block):
            out[int(i)] = full[k]
    return out


@dataclass
class GradientReport:
    """Partial derivatives over the free indices, with per-point contributions."""

    free: np.ndarray
    partials: np.ndarray
    per_point: np.ndarray  # (points, free)
    normal_derivatives: np.ndarray
    normals: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.partials))

    def full(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.free] = self.partials
        return out


def _shape_terms(geo: PointGeometry, grad_y, dn, n: int) -> np.ndarray:
    # -(dy/dn)(dphi_i/dn)/|grad g| + grad y . grad phi_i / |grad g| on the located triangle
    terms = np.zeros(n)
    dphi_n = geo.basis_grads @ geo.normal
    terms[geo.vertices] = (-dn * dphi_n + geo.basis_grads @ grad_y) / geo.grad_g_norm
    return terms


def grad_cost(data: ProblemData, state: StateField, obs: ObservationSpec, I0,
              sensitivities=None, system=None, indices=None) -> GradientReport:
    """Gradient of the observation cost with respect to the free nodal values of g.

    With ``sensitivities`` (a map i -> u_i) the formula is evaluated directly.
    Otherwise the normal-derivative functional is solved once per point
    against the same factorization and contracted with all right-hand sides,
    which is algebraically identical.
    """
    mesh = data.mesh
    y = state.values
    I0 = np.asarray(I0, dtype=int)
    free = free_indices(mesh, I0) if indices is None else np.asarray(indices, dtype=int)
    if np.intersect1d(free, I0).size:
        raise ValueError("gradient requested for frozen indices in I0")

    geos = [point_geometry(mesh, data.g, x) for x in obs.points]
    if sensitivities is None:
        system = system or SensitivitySystem(data, state)
    per_point = np.zeros((len(obs), len(free)))
    dns = np.zeros(len(obs))
    for j, (geo, alpha) in enumerate(zip(geos, obs.targets)):
        grad_y = mesh.gradient(y, geo.triangle)
        dn = float(grad_y @ geo.normal)
        dns[j] = dn
        weight = 2.0 * (dn - alpha)
        if sensitivities is not None:
            du = np.array([sensitivities[int(i)][geo.vertices] @ (geo.basis_grads @ geo.normal)
                           for i in free])
        else:
            ell = np.zeros(mesh.n)
            ell[geo.vertices] = geo.basis_grads @ geo.normal
            q = system.lift(system.solve(ell[system.dofs]))
            du_all = system.scale * (system.coupling.T @ q)
            du = du_all[free]
        shape = _shape_terms(geo, grad_y, dn, mesh.n)[free]
        per_point[j] = weight * (du + shape)
    return GradientReport(
        free=free,
        partials=per_point.sum(axis=0),
        per_point=per_point,
        normal_derivatives=dns,
        normals=np.array([geo.normal for geo in geos]),
    )


def check_gradient(data: ProblemData, obs: ObservationSpec, I0, indices, delta=1e-5,
                   state=None):
    """Analytic partials next to central differences of the full state-and-cost pipeline.

    Returns (analytic, finite_difference) arrays aligned with ``indices``.
    """
    from .state import solve_state

    if delta <= 0:
        raise ValueError("delta must be positive")
    indices = np.asarray(indices, dtype=int)
    state = state or solve_state(data)
    report = grad_cost(data, state, obs, I0, indices=indices)
    fd = np.zeros(len(indices))
    for k, i in enumerate(indices):
        vals = []
        for sgn in (1.0, -1.0):
            G = data.g.copy()
            G[i] += sgn * delta
            J, _ = cost_of_level(data.with_level(G), obs, y0=state.values)
            vals.append(J)
        fd[k] = (vals[0] - vals[1]) / (2.0 * delta)
    return report.partials, fd
