"""Steepest descent on the free nodal values of the level function."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .adjoint import sign_surrogate, simplified_direction, solve_adjoint
from .sensitivity import (
    ObservationSpec,
    SensitivitySystem,
    eval_cost,
    free_indices,
    grad_cost,
    select_I0,
)
from .state import ProblemData, solve_state

logger = logging.getLogger(__name__)

GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)
DIRECTIONS = ("full_gradient", "simplified_yp")


class LineSearchError(RuntimeError):
    """No decrease of the cost was found along the search direction."""


@dataclass
class DescentConfig:
    tol: float = 1e-6
    max_iter: int = 50
    direction: str = "full_gradient"
    max_evals: int = 30
    growth: float = 2.0
    initial_step: float = 1e-3
    rtol: float = 1e-3
    max_change: float = 0.2
    keep_snapshots: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.max_evals < 2:
            raise ValueError("line search needs at least two evaluations")
        if not self.growth > 1:
            raise ValueError("growth factor must exceed 1")
        if not self.max_change > 0:
            raise ValueError("max_change must be positive")


def line_search(phi, phi0=None, scale=1.0, max_evals=30, growth=2.0, initial_step=1e-3,
                rtol=1e-3, lam_max=np.inf):
    """Approximate argmin over 0 < lambda <= lam_max of ``phi``.

    The step grows geometrically from ``initial_step * scale`` until phi rises
    (or ``lam_max`` is reached), then the bracket is shrunk by golden section
    to relative width ``rtol``. At most ``max_evals`` evaluations besides
    phi(0) are spent. Returns ``(lambda, phi(lambda))`` with
    phi(lambda) < phi(0), or raises :class:`LineSearchError`.
    """
    if phi0 is None:
        phi0 = phi(0.0)
    evals = 0
    cache = {0.0: phi0}

    def f(lam):
        nonlocal evals
        if lam not in cache:
            evals += 1
            cache[lam] = phi(lam)
        return cache[lam]

    # bracketing: a < b < c with phi(b) below both ends
    a, b = 0.0, None
    c = min(initial_step * scale, lam_max)
    fc = f(c)
    if not np.isfinite(fc) or fc >= phi0:
        a, c = 0.0, c
    else:
        b = c
        while evals < max_evals and b < lam_max:
            c = min(b * growth, lam_max)
            fc = f(c)
            if not np.isfinite(fc) or fc >= cache[b]:
                break
            a, b = b, c
        else:
            # still decreasing at the cap or out of budget
            return b, cache[b]

    # golden section on [a, c]
    x1 = c - GOLDEN * (c - a)
    x2 = a + GOLDEN * (c - a)
    while evals < max_evals - 1 and (c - a) > rtol * 0.5 * (a + c):
        if f(x1) < f(x2):
            c, x2 = x2, x1
            x1 = c - GOLDEN * (c - a)
        else:
            a, x1 = x1, x2
            x2 = a + GOLDEN * (c - a)
    best = min((v, lam) for lam, v in cache.items() if np.isfinite(v))
    if best[1] == 0.0 or not best[0] < phi0:
        raise LineSearchError(f"no decrease of the cost within {max_evals} evaluations")
    return best[1], best[0]


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    step: float
    gradient_norm: float
    wall_time: float
    normal_derivatives: np.ndarray
    normals: np.ndarray
    surrogate: float = float("nan")
    level: np.ndarray | None = None


@dataclass
class RunHistory:
    records: list[IterationRecord] = field(default_factory=list)
    I0: np.ndarray | None = None
    final_level: np.ndarray | None = None
    final_state: np.ndarray | None = None
    final_data: ProblemData | None = None
    stop_reason: str = ""

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    @property
    def iterations(self) -> int:
        return len(self.records) - 1


def descend(data: ProblemData, obs: ObservationSpec, config: DescentConfig | None = None,
            I0=None, i0_mode="ball", callback=None) -> RunHistory:
    """Run the descent loop from the level function in ``data``.

    Record 0 holds the initial cost; record k the cost after the k-th update.
    Values of g at the I0 vertices are never modified. ``callback`` receives
    ``(record, data, state)`` after each accepted iterate.
    """
    config = config or DescentConfig()
    mesh = data.mesh
    if I0 is None:
        I0 = select_I0(mesh, obs, i0_mode, data.params.C)
    I0 = np.asarray(I0, dtype=int)
    free = free_indices(mesh, I0)

    t0 = time.perf_counter()
    state = solve_state(data)
    cost = eval_cost(mesh, state, data.g, obs)
    history = RunHistory(I0=I0)

    def record(k, cost, step, gnorm, state, data, surrogate=float("nan")):
        from .sensitivity import normal_derivatives, point_geometry

        rec = IterationRecord(
            iteration=k, cost=cost, step=step, gradient_norm=gnorm,
            wall_time=time.perf_counter() - t0,
            normal_derivatives=normal_derivatives(mesh, state, data.g, obs),
            normals=np.array([point_geometry(mesh, data.g, x).normal for x in obs.points]),
            surrogate=surrogate,
            level=data.g.copy() if config.keep_snapshots else None,
        )
        history.records.append(rec)
        if callback is not None:
            callback(rec, data, state)
        logger.info("iter %d: J = %.6e, step = %.3e, |grad| = %.3e", k, cost, step, gnorm)

    record(0, cost, 0.0, float("nan"), state, data)
    for k in range(1, config.max_iter + 1):
        system = SensitivitySystem(data, state)
        surrogate = float("nan")
        if config.direction == "full_gradient":
            report = grad_cost(data, state, obs, I0, system=system)
            d = report.full(mesh.n)
        else:
            p = solve_adjoint(data, state, obs, system=system)
            surrogate = sign_surrogate(data, state, p)
            d = -simplified_direction(state, p, I0)
        history.records[-1].surrogate = surrogate
        gnorm = float(np.linalg.norm(d[free]))
        history.records[-1].gradient_norm = gnorm
        dmax = np.abs(d[free]).max(initial=0.0)
        if dmax == 0.0:
            history.stop_reason = "zero search direction"
            break

        cache = {}

        def phi(lam):
            G = data.g.copy()
            G[free] -= lam * d[free]
            trial = data.with_level(G)
            st = solve_state(trial, y0=state.values)
            J = eval_cost(mesh, st, G, obs)
            cache[lam] = (trial, st)
            return J

        try:
            lam, new_cost = line_search(
                phi, phi0=cost, scale=1.0 / dmax, max_evals=config.max_evals,
                growth=config.growth, initial_step=config.initial_step, rtol=config.rtol,
                lam_max=config.max_change / dmax,
            )
        except LineSearchError as exc:
            history.stop_reason = f"line search failed at iteration {k}: {exc}"
            logger.warning(history.stop_reason)
            break
        data, state = cache[lam]
        old_cost, cost = cost, new_cost
        record(k, cost, lam, float("nan"), state, data)
        if abs(old_cost - cost) < config.tol:
            history.stop_reason = "cost change below tol"
            break
    else:
        history.stop_reason = "max_iter reached"
    history.final_level = data.g.copy()
    history.final_state = state.values.copy()
    history.final_data = data
    return history
