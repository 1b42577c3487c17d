"""C^1 regularizations of the Heaviside function and the obstacle graph, plus a bump mollifier."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate


@dataclass(frozen=True)
class RegParams:
    """Penalization and smoothing parameters (defaults: the single-point disk setting).

    eps   : penalization of the exterior of the design domain
    eta   : width of the smoothed Heaviside and of the cubic branch of beta
    eps2  : inverse slope of beta below -eta
    eps1  : mollifier radius used by the regularized adjoint
    C     : ball factor for the frozen index set I0
    tol   : stopping tolerance on successive cost values
    """

    eps: float = 1e-4
    eta: float = 0.05
    eps2: float = 0.01
    eps1: float = 0.05
    C: float = 2.0
    tol: float = 1e-6

    def __post_init__(self):
        for name in ("eps", "eta", "eps2", "eps1", "C", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if not self.eta > self.eps:
            raise ValueError(f"eta must exceed eps (eta={self.eta}, eps={self.eps})")
        if not self.eps2 > self.eps:
            raise ValueError(f"eps2 must exceed eps (eps2={self.eps2}, eps={self.eps})")
        if self.C < 2:
            raise ValueError(f"C must be at least 2, got {self.C}")


def heaviside_reg(r, eta):
    r = np.asarray(r, dtype=float)
    mid = (-2.0 * r + 3.0 * eta) * r * r / eta**3
    return np.where(r > eta, 1.0, np.where(r < 0.0, 0.0, mid))


def heaviside_reg_prime(r, eta):
    r = np.asarray(r, dtype=float)
    inside = (r >= 0.0) & (r <= eta)
    return np.where(inside, (-6.0 * r * r + 6.0 * eta * r) / eta**3, 0.0)


def beta_reg(r, eta, eps2):
    """Smoothed obstacle graph: zero for r > 0, linear with slope 1/eps2 below -eta."""
    r = np.asarray(r, dtype=float)
    cubic = r * r * (-r / (eta * eta * eps2) - 2.0 / (eta * eps2))
    return np.where(r > 0.0, 0.0, np.where(r < -eta, r / eps2, cubic))


def beta_reg_prime(r, eta, eps2):
    r = np.asarray(r, dtype=float)
    cubic = -3.0 * r * r / (eta * eta * eps2) - 4.0 * r / (eta * eps2)
    return np.where(r > 0.0, 0.0, np.where(r < -eta, 1.0 / eps2, cubic))


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    return out


@lru_cache(maxsize=1)
def bump_normalization() -> float:
    """Constant c making c*exp(-1/(1-|x|^2)) a unit-mass density on the unit disk."""
    radial, _ = integrate.quad(
        lambda r: r * np.exp(-1.0 / (1.0 - r * r)) if r < 1.0 else 0.0,
        0.0, 1.0, epsabs=1e-15, epsrel=1e-13,
    )
    return 1.0 / (2.0 * np.pi * radial)


def mollifier(x, eps1):
    """zeta_{eps1}(x) = zeta(x / eps1) / eps1**2 for points x of shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    s = (x[..., 0] ** 2 + x[..., 1] ** 2) / (eps1 * eps1)
    return bump_normalization() * _bump(s) / (eps1 * eps1)
