"""Penalized state problem on the hold-all domain.

Two discrete forms are available.

``"vi"`` (default): y_h in K_h = {v in V_h, v >= phi_h} solves the variational
inequality

    int grad y . grad (y - v) + (1/eps) int H(g) y (y - v) <= int f (y - v),

computed by a primal-dual active-set iteration.

``"regularized"``: y_h in V_h solves the semilinear equation

    int grad y . grad v + int beta(y - phi) v + (1/eps) int H(g) y v = int f v

by damped Newton, with the C^1 functions of :mod:`levelopt.regfun`.

Nonlinear terms use the edge-midpoint rule, so the linearizations returned by
:func:`linearization` are exact derivatives of the discrete state map.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import assembly
from .mesh import Mesh
from .regfun import RegParams, beta_reg, beta_reg_prime, heaviside_reg

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
MAX_NEWTON = 50
MAX_HALVINGS = 30
GRAD_FLOOR = 1e-8
MAX_ACTIVE_SET = 200
STATE_FORMS = ("vi", "regularized")


class ConvergenceError(RuntimeError):
    """Newton iteration failed to reach the residual tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateGradientError(ValueError):
    """|grad g| fell below the floor where a normal direction is needed."""


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Everything the state solve needs apart from the unknown.

    ``f`` and ``phi`` may be scalars, nodal vectors or callables of (m, 2)
    coordinates; ``g`` is the nodal level function.
    """

    mesh: Mesh
    g: np.ndarray
    phi: object = -0.5
    f: object = -100.0
    params: RegParams = field(default_factory=RegParams)
    form: str = "vi"

    def __post_init__(self):
        if self.form not in STATE_FORMS:
            raise ValueError(f"unknown state form {self.form!r}, expected one of {STATE_FORMS}")
        g = np.asarray(self.g, dtype=float)
        if g.shape != (self.mesh.n,):
            raise ValueError(f"level function has shape {g.shape}, expected ({self.mesh.n},)")
        object.__setattr__(self, "g", g)
        phi_nodal = self.phi_nodal
        if np.any(phi_nodal >= 0):
            raise ValueError("obstacle must be negative in D")

    @property
    def phi_nodal(self) -> np.ndarray:
        return _nodal(self.mesh, self.phi)

    def with_level(self, g) -> "ProblemData":
        return ProblemData(self.mesh, g, self.phi, self.f, self.params, self.form)

    def with_params(self, params: RegParams) -> "ProblemData":
        return ProblemData(self.mesh, self.g, self.phi, self.f, params, self.form)


def _nodal(mesh, values):
    if callable(values):
        return np.asarray(values(mesh.vertices), dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return np.full(mesh.n, float(values))
    return values


@dataclass
class StateField:
    """Nodal state over W_h plus solver diagnostics.

    ``active`` marks vertices in contact with the obstacle (``"vi"`` form only).
    """

    values: np.ndarray
    newton_iterations: int = 0
    residual: float = 0.0
    active: np.ndarray | None = None


class StateOperator:
    """Residual and Jacobian of the discrete state equation for fixed data.

    The linear parts (stiffness, penalty mass, load) are assembled once.
    """

    def __init__(self, data: ProblemData):
        self.data = data
        mesh = data.mesh
        p = data.params
        self.K = assembly.stiffness(mesh)
        self.g_q = assembly.to_quad(mesh, data.g)
        self.H_q = heaviside_reg(self.g_q, p.eta)
        self.MH = assembly.weighted_mass(mesh, self.H_q)
        self.F = assembly.load_vector(mesh, data.f)
        self.phi_q = assembly.to_quad(mesh, data.phi_nodal)
        self.linear = (self.K + self.MH / p.eps).tocsr()

    def shifted_quad(self, y) -> np.ndarray:
        return assembly.to_quad(self.data.mesh, y) - self.phi_q

    def residual(self, y) -> np.ndarray:
        p = self.data.params
        nb = assembly.load_vector(self.data.mesh, beta_reg(self.shifted_quad(y), p.eta, p.eps2))
        return self.linear @ y + nb - self.F

    def jacobian(self, y) -> sp.csr_matrix:
        """Full W_h Jacobian; its interior block is the sensitivity matrix."""
        p = self.data.params
        bp = beta_reg_prime(self.shifted_quad(y), p.eta, p.eps2)
        return (self.linear + assembly.weighted_mass(self.data.mesh, bp)).tocsr()


def solve_state(data: ProblemData, y0=None, tol=NEWTON_TOL, max_newton=MAX_NEWTON) -> StateField:
    """Solve the discrete state problem in the form selected by ``data.form``.

    ``y0`` is an optional initial guess (e.g. the previous optimizer iterate).
    Raises :class:`ConvergenceError` when the iteration stalls.
    """
    if data.form == "vi":
        return _solve_vi(data, y0, tol)
    return _solve_newton(data, y0, tol, max_newton)


def _solve_newton(data, y0, tol, max_newton):
    mesh = data.mesh
    op = StateOperator(data)
    inner = mesh.interior
    y = np.zeros(mesh.n) if y0 is None else np.array(y0, dtype=float)
    y[mesh.boundary] = 0.0
    r = op.residual(y)[inner]
    rnorm = np.abs(r).max() if r.size else 0.0
    it = 0
    while rnorm > tol:
        if it >= max_newton:
            raise ConvergenceError(
                f"Newton did not converge in {max_newton} iterations (residual {rnorm:.3e})",
                residual=rnorm,
            )
        J = assembly.restrict(mesh, op.jacobian(y))
        step = assembly.factorize(J).solve(-r)
        alpha = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = y.copy()
            trial[inner] += alpha * step
            r_trial = op.residual(trial)[inner]
            rn_trial = np.abs(r_trial).max()
            if rn_trial < rnorm:
                break
            alpha *= 0.5
        else:
            raise ConvergenceError(
                f"damping failed to reduce residual {rnorm:.3e} at Newton step {it}",
                residual=rnorm,
            )
        y, r, rnorm = trial, r_trial, rn_trial
        it += 1
        logger.debug("newton %d: residual %.3e (damping %g)", it, rnorm, alpha)
    return StateField(y, newton_iterations=it, residual=float(rnorm))


def _solve_vi(data, y0, tol):
    # primal-dual active set: A y - F = lam >= 0, y >= phi, lam * (y - phi) = 0
    mesh = data.mesh
    op = StateOperator(data)
    inner = mesh.interior
    A = op.linear[inner][:, inner].tocsr()
    F = op.F[inner]
    phi = data.phi_nodal[inner]
    c = A.diagonal()
    if y0 is None:
        y = assembly.factorize(A).solve(F)
        lam = np.zeros_like(F)
    else:
        y = np.asarray(y0, dtype=float)[inner].copy()
        lam = np.maximum(A @ y - F, 0.0)
    active = None
    for it in range(1, MAX_ACTIVE_SET + 1):
        new_active = lam + c * (phi - y) > 0
        if active is not None and np.array_equal(new_active, active):
            break
        active = new_active
        free = ~active
        y = np.where(active, phi, 0.0)
        if free.any():
            Aff = A[free][:, free]
            rhs = F[free] - A[free][:, active] @ phi[active]
            y[free] = assembly.factorize(Aff).solve(rhs)
        lam = np.where(active, A @ y - F, 0.0)
    else:
        raise ConvergenceError(f"active-set iteration did not settle in {MAX_ACTIVE_SET} sweeps")
    res = A @ y - F - lam
    kkt = max(
        np.abs(res).max(initial=0.0),
        np.max(phi - y, initial=0.0),
        np.max(-lam, initial=0.0),
    )
    if kkt > tol:
        raise ConvergenceError(f"complementarity residual {kkt:.3e} above {tol:g}", residual=kkt)
    full = np.zeros(mesh.n)
    full[inner] = y
    act = np.zeros(mesh.n, dtype=bool)
    act[inner] = active
    logger.debug("active set settled after %d sweeps, %d contact vertices", it, active.sum())
    return StateField(full, newton_iterations=it, residual=float(kkt), active=act)


def linearization(data: ProblemData, state: StateField) -> tuple[np.ndarray, sp.csc_matrix]:
    """Degrees of freedom and matrix of the linearized state problem at ``state``.

    The matrix is the V_h block of stiffness + beta'(y - phi) mass + (1/eps) H(g)
    mass. For the ``"vi"`` form the contact vertices are additionally removed
    (the derivative of the state vanishes there) and beta'(y - phi) is zero
    since y >= phi.
    """
    mesh = data.mesh
    op = StateOperator(data)
    J = op.jacobian(state.values)
    dofs = mesh.interior
    if data.form == "vi" and state.active is not None:
        dofs = dofs[~state.active[dofs]]
    return dofs, J[dofs][:, dofs].tocsc()


def unit_normal(mesh: Mesh, g, t: int, grad_floor=GRAD_FLOOR) -> np.ndarray:
    dg = mesh.gradient(g, t)
    norm = np.hypot(*dg)
    if norm <= grad_floor:
        raise DegenerateGradientError(
            f"|grad g| = {norm:.3e} on triangle {t} is below the floor {grad_floor:g}"
        )
    return dg / norm


def normal_derivative_at(mesh: Mesh, y, g, x, grad_floor=GRAD_FLOOR) -> float:
    """grad y . grad g / |grad g| at x, on the triangle chosen by ``mesh.locate``."""
    y = y.values if isinstance(y, StateField) else y
    t, _ = mesh.locate(x)
    return float(mesh.gradient(y, t) @ unit_normal(mesh, g, t, grad_floor))
