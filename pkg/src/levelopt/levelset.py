"""Level-function geometry.

Admissibility checks, marching-triangles contours, and the Hamiltonian
parameterization z' = (-d2 g, d1 g) of the zero level set with its period,
the system in variations and the period derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import Mesh, MeshError
from .state import GRAD_FLOOR

ZERO_SHIFT = 1e-14


class TraceError(RuntimeError):
    """The Hamiltonian trajectory could not be computed or did not close."""


# ---------------------------------------------------------------- level functions


@dataclass(frozen=True)
class AnalyticLevel:
    """Level function given by callables on (..., 2) arrays.

    ``grad`` returns (..., 2) and ``hess`` returns (..., 2, 2).
    """

    value: Callable
    grad: Callable
    hess: Callable

    def __add__(self, other: "AnalyticLevel") -> "AnalyticLevel":
        return AnalyticLevel(
            lambda x: self.value(x) + other.value(x),
            lambda x: self.grad(x) + other.grad(x),
            lambda x: self.hess(x) + other.hess(x),
        )

    def scaled(self, c: float) -> "AnalyticLevel":
        return AnalyticLevel(
            lambda x: c * self.value(x),
            lambda x: c * self.grad(x),
            lambda x: c * self.hess(x),
        )

    def nodal(self, mesh: Mesh) -> np.ndarray:
        return np.asarray(self.value(mesh.vertices), dtype=float)


def circle_level(center=(0.5, 0.5), radius=0.25) -> AnalyticLevel:
    """g(x) = |x - center|^2 - radius^2."""
    c = np.asarray(center, dtype=float)

    def value(x):
        d = np.asarray(x, dtype=float) - c
        return (d**2).sum(axis=-1) - radius**2

    def grad(x):
        return 2.0 * (np.asarray(x, dtype=float) - c)

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(2.0 * np.eye(2), x.shape[:-1] + (2, 2)).copy()

    return AnalyticLevel(value, grad, hess)


def quadratic_level(A, b=(0.0, 0.0), c=0.0) -> AnalyticLevel:
    """g(x) = x.A.x + b.x + c with symmetric A."""
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    b = np.asarray(b, dtype=float)

    def value(x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, A, x) + x @ b + c

    def grad(x):
        return 2.0 * np.asarray(x, dtype=float) @ A + b

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(2.0 * A, x.shape[:-1] + (2, 2)).copy()

    return AnalyticLevel(value, grad, hess)


class NodalLevel:
    """P1 level function g_h with a recovered, continuous gradient.

    Values are the P1 interpolant of the nodal vector. The gradient used for
    tracing is the linear interpolant of nodal gradients obtained by
    area-weighted averaging of the incident element gradients; its
    elementwise derivative stands in for the Hessian.
    """

    def __init__(self, mesh: Mesh, values):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (mesh.n,):
            raise ValueError(f"nodal level function must have length {mesh.n}")
        eg = mesh.element_gradients(self.values) * mesh.areas[:, None]
        acc = np.zeros((mesh.n, 2))
        wsum = np.zeros(mesh.n)
        for k in range(3):
            np.add.at(acc, mesh.triangles[:, k], eg)
            np.add.at(wsum, mesh.triangles[:, k], mesh.areas)
        self.nodal_gradient = acc / wsum[:, None]

    def _apply(self, x, fn):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        try:
            out = [fn(*self.mesh.locate(p)) for p in flat]
        except MeshError as exc:
            raise TraceError(f"trajectory left the mesh: {exc}") from exc
        return np.array(out).reshape(x.shape[:-1] + np.shape(out[0]))

    def value(self, x):
        return self._apply(x, lambda t, lam: self.values[self.mesh.triangles[t]] @ lam)

    def grad(self, x):
        return self._apply(x, lambda t, lam: lam @ self.nodal_gradient[self.mesh.triangles[t]])

    def hess(self, x):
        def element_hess(t, lam):
            G = self.mesh.basis_gradients[t]  # (3, 2): d lam_k / d x_j
            R = self.nodal_gradient[self.mesh.triangles[t]]  # (3, 2)
            return R.T @ G  # [i, j] = d(grad_i)/dx_j

        return self._apply(x, element_hess)


# ---------------------------------------------------------------- initial data


def pin_zero(mesh: Mesh, G, points) -> np.ndarray:
    """Minimum-norm nodal correction making g_h vanish at every point.

    Only vertices of the triangles containing the points are modified.
    """
    G = np.array(G, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rows = []
    for x in points:
        t, lam = mesh.locate(x)
        row = np.zeros(mesh.n)
        row[mesh.triangles[t]] = lam
        rows.append(row)
    P = np.array(rows)
    cols = np.flatnonzero(np.abs(P).sum(axis=0))
    Pc = P[:, cols]
    r = P @ G
    delta = Pc.T @ np.linalg.solve(Pc @ Pc.T, -r)
    G[cols] += delta
    # a second pass removes the rounding left by the first
    G[cols] -= Pc.T @ np.linalg.solve(Pc @ Pc.T, P @ G)
    return G


def disk_level(mesh: Mesh, center=(0.5, 0.5), radius=0.25, pin=None) -> np.ndarray:
    """Nodal interpolant of |x - center|^2 - radius^2, optionally pinned to zero at ``pin``."""
    G = circle_level(center, radius).nodal(mesh)
    if pin is not None:
        G = pin_zero(mesh, G, pin)
    return G


# ---------------------------------------------------------------- admissibility


@dataclass
class AdmissibilityReport:
    positive_on_boundary: bool
    gradient_nondegenerate: bool
    zero_at_observations: bool
    min_boundary_value: float
    min_crossed_gradient: float
    max_observation_value: float

    @property
    def ok(self) -> bool:
        return self.positive_on_boundary and self.gradient_nondegenerate and self.zero_at_observations


def crossed_triangles(mesh: Mesh, g) -> np.ndarray:
    """Triangles where the perturbed nodal signs of g are mixed or all zero."""
    g = np.asarray(g, dtype=float)
    vals = g[mesh.triangles]
    flat_zero = np.all(vals == 0.0, axis=1)
    pos = np.where(vals == 0.0, ZERO_SHIFT, vals) > 0
    mixed = pos.any(axis=1) & ~pos.all(axis=1)
    return np.flatnonzero(mixed | flat_zero)


def admissibility_check(g, mesh: Mesh, points=(), grad_floor=GRAD_FLOOR, zero_tol=1e-12):
    """Check g > 0 on the outer boundary, |grad g_h| on the contour, and g_h = 0 at the points."""
    g = np.asarray(g, dtype=float)
    bvals = g[mesh.boundary]
    min_b = float(bvals.min()) if bvals.size else np.inf
    tris = crossed_triangles(mesh, g)
    if tris.size:
        norms = np.linalg.norm(mesh.element_gradients(g)[tris], axis=1)
        min_grad = float(norms.min())
    else:
        min_grad = np.inf
    obs = [abs(mesh.evaluate(g, x)) for x in np.atleast_2d(np.asarray(points, dtype=float)) if len(x)]
    max_obs = max(obs) if obs else 0.0
    return AdmissibilityReport(
        positive_on_boundary=min_b > 0,
        gradient_nondegenerate=min_grad >= grad_floor,
        zero_at_observations=max_obs <= zero_tol,
        min_boundary_value=min_b,
        min_crossed_gradient=min_grad,
        max_observation_value=float(max_obs),
    )


# ---------------------------------------------------------------- contours


def extract_contour(mesh: Mesh, g) -> list[np.ndarray]:
    """Zero level set of the P1 interpolant as polylines.

    Closed polylines repeat their first point at the end. Nodal zeros are
    shifted by +1e-14 before sign tests.
    """
    g = np.asarray(g, dtype=float)
    gs = np.where(g == 0.0, ZERO_SHIFT, g)
    tri = mesh.triangles
    pos = gs[tri] > 0
    npos = pos.sum(axis=1)
    cut = np.flatnonzero((npos == 1) | (npos == 2))
    if cut.size == 0:
        return []

    point_of_edge: dict[tuple[int, int], int] = {}
    coords: list[np.ndarray] = []

    def crossing(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in point_of_edge:
            s = gs[a] / (gs[a] - gs[b])
            coords.append(mesh.vertices[a] + s * (mesh.vertices[b] - mesh.vertices[a]))
            point_of_edge[key] = len(coords) - 1
        return point_of_edge[key]

    # directed segments with the negative region on the left
    nxt: dict[int, int] = {}
    for t in cut:
        v = tri[t]
        p = pos[t]
        ends = []
        for k in range(3):
            a, b = v[k], v[(k + 1) % 3]
            if p[k] != p[(k + 1) % 3]:
                ends.append((crossing(a, b), p[k]))
        (e0, s0), (e1, _) = ends
        # walking along the CCW boundary, edge k leaves vertex k; a + -> - transition
        # on the first cut edge means the segment should start at the other point
        start, end = (e1, e0) if s0 else (e0, e1)
        nxt[start] = end

    prev = {b: a for a, b in nxt.items()}
    seen: set[int] = set()
    lines = []
    # open chains first (they start at points without a predecessor)
    starts = [a for a in nxt if a not in prev] + sorted(nxt)
    for s in starts:
        if s in seen:
            continue
        chain = [s]
        seen.add(s)
        cur = s
        while cur in nxt:
            cur = nxt[cur]
            chain.append(cur)
            if cur == s or cur in seen:
                break
            seen.add(cur)
        lines.append(np.array([coords[i] for i in chain]))
    return lines


def polyline_area(line) -> float:
    """Shoelace area of a closed polyline (positive when counter-clockwise)."""
    x, y = line[:, 0], line[:, 1]
    return 0.5 * float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))


# ---------------------------------------------------------------- Hamiltonian trace


def _field(level):
    def f(z):
        d = level.grad(z)
        return np.array([-d[1], d[0]])

    return f


def _rk4(f, z, dt):
    k1 = f(z)
    k2 = f(z + 0.5 * dt * k1)
    k3 = f(z + 0.5 * dt * k2)
    k4 = f(z + dt * k3)
    return z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class TraceResult:
    """Sampled orbit z(k dt), k = 0..N, the detected period and its closure defect."""

    points: np.ndarray
    dt: float
    period: float
    closure_defect: float
    end_point: np.ndarray
    end_velocity: np.ndarray
    level: object = field(repr=False, default=None)

    @property
    def x0(self) -> np.ndarray:
        return self.points[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.points))

    def at(self, t: float) -> np.ndarray:
        """z(t) by a partial RK4 step from the preceding stored sample."""
        if not 0.0 <= t <= self.period + 1e-12:
            raise TraceError(f"time {t} outside [0, T_g = {self.period}]")
        k = min(int(np.floor(t / self.dt)), len(self.points) - 1)
        tau = t - k * self.dt
        if tau <= 0.0:
            return self.points[k].copy()
        return _rk4(_field(self.level), self.points[k], tau)


def hamiltonian_trace(level, x0, dt: float = 1e-4, t_max=None, level_tol=1e-10,
                      perimeter=4.0, closing_fraction=0.1) -> TraceResult:
    """Integrate z' = (-d2 g, d1 g) from x0 with classical RK4 until the first return.

    The return is detected on the line through x0 orthogonal to the initial
    velocity, crossed in the initial direction, and refined by bisection on a
    partial RK4 step to 1e-12 in time. Without an explicit ``t_max`` the cap is
    10 * perimeter / (smallest speed met so far).
    """
    x0 = np.asarray(x0, dtype=float)
    if level_tol is not None:
        g0 = float(level.value(x0))
        if abs(g0) > level_tol:
            raise TraceError(f"x0 is not on the zero level: g(x0) = {g0:.3e}")
    f = _field(level)
    v0 = f(x0)
    speed0 = float(np.hypot(*v0))
    if speed0 <= GRAD_FLOOR:
        raise TraceError("zero initial velocity: grad g(x0) vanishes")

    def section(z):
        return float((z - x0) @ v0)

    pts = [x0.copy()]
    z = x0.copy()
    t = 0.0
    min_speed = speed0
    max_dist = 0.0
    s_prev = 0.0
    been_behind = False
    while True:
        z_new = _rk4(f, z, dt)
        s_new = section(z_new)
        dist = float(np.hypot(*(z_new - x0)))
        max_dist = max(max_dist, dist)
        if s_new < 0:
            been_behind = True
        if been_behind and s_prev <= 0 < s_new and dist < closing_fraction * max_dist + 2 * speed0 * dt:
            lo, hi = 0.0, dt
            while hi - lo > 1e-12:
                mid = 0.5 * (lo + hi)
                if section(_rk4(f, z, mid)) > 0:
                    hi = mid
                else:
                    lo = mid
            tau = 0.5 * (lo + hi)
            z_end = _rk4(f, z, tau)
            period = t + tau
            return TraceResult(
                points=np.array(pts),
                dt=dt,
                period=period,
                closure_defect=float(np.hypot(*(z_end - x0))),
                end_point=z_end,
                end_velocity=f(z_end),
                level=level,
            )
        pts.append(z_new)
        z = z_new
        t += dt
        s_prev = s_new
        min_speed = min(min_speed, float(np.hypot(*f(z))))
        cap = t_max if t_max is not None else 10.0 * perimeter / max(min_speed, GRAD_FLOOR)
        if t > cap:
            raise TraceError(f"no return to the section through x0 before t = {cap:.4g}")


def observation_points(trace: TraceResult, l: int, window=None) -> np.ndarray:
    """Points z(i T_g / l), i = 0..l-1, or i = l1..l2 for ``window=(l1, l2)``."""
    if l < 1:
        raise ValueError("l must be at least 1")
    if window is None:
        idx = range(l)
    else:
        l1, l2 = window
        if not 0 <= l1 <= l2 <= l - 1:
            raise ValueError(f"window {window} outside 0..{l - 1}")
        idx = range(l1, l2 + 1)
    return np.array([trace.at(i * trace.period / l) for i in idx])


def variation_ode(level, direction, trace: TraceResult) -> np.ndarray:
    """w(T_g) for the system in variations of the trace under g + lambda h, w(0) = 0.

    w1' = -grad(d2 g)(z) . w - d2 h(z),  w2' = grad(d1 g)(z) . w + d1 h(z)
    """
    if trace.period <= 0:
        raise TraceError("trace has no positive period")

    def rhs(state):
        z, w = state[:2], state[2:]
        dg = level.grad(z)
        Hg = level.hess(z)
        dh = direction.grad(z)
        # Hg[i, j] = d_j d_i g
        wp1 = -Hg[1] @ w - dh[1]
        wp2 = Hg[0] @ w + dh[0]
        return np.array([-dg[1], dg[0], wp1, wp2])

    state = np.concatenate([trace.x0, [0.0, 0.0]])
    nsteps = int(np.floor(trace.period / trace.dt))
    for _ in range(nsteps):
        state = _rk4(rhs, state, trace.dt)
    tau = trace.period - nsteps * trace.dt
    if tau > 0:
        state = _rk4(rhs, state, tau)
    return state[2:]


def period_derivative(trace: TraceResult, w, grad_floor=GRAD_FLOOR) -> float:
    """theta = -w_k(T_g) / z_k'(T_g) using the larger velocity component k."""
    v = trace.end_velocity
    if max(abs(v[0]), abs(v[1])) <= grad_floor:
        raise TraceError("both velocity components vanish at T_g")
    if abs(v[1]) >= abs(v[0]):
        return float(-w[1] / v[1])
    return float(-w[0] / v[0])
