"""SCAD fusion penalty and the penalty hyperparameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class PenaltyConfig:
    """Hyperparameters of the double penalty.

    Attributes
    ----------
    lam : float
        SCAD scale; gaps below ``lam`` feel the full linear penalty.
    c_n : float
        Weight of the log stationary-probability (occupancy) barrier.
    a : float
        SCAD shape constant, > 2.
    merge_tol : float
        Relative gap below which fitted states count as identical.
    m : float
        Multiplier of the SCAD derivative (number of individuals by default).
    """

    lam: float
    c_n: float
    a: float = 3.7
    merge_tol: float = 1e-3
    m: float = 1.0

    def __post_init__(self):
        if not self.a > 2:
            raise DomainError(f"SCAD shape a must exceed 2, got {self.a}")
        if not self.lam >= 0:
            raise DomainError(f"lambda must be >= 0, got {self.lam}")
        if not self.c_n >= 0:
            raise DomainError(f"C_N must be >= 0, got {self.c_n}")
        if not self.merge_tol > 0:
            raise DomainError("merge_tol must be positive")
        if not self.m >= 1:
            raise DomainError("the SCAD multiplier m must be >= 1")

    def derivative(self, eta):
        return scad_derivative(eta, self.lam, self.m, self.a)

    def value(self, eta):
        return scad_value(eta, self.lam, self.m, self.a)


def _check(eta, lam, m, a):
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        raise DomainError("SCAD is defined for non-negative gaps only")
    if not a > 2 or lam < 0 or m < 1:
        raise DomainError("need a > 2, lambda >= 0, m >= 1")
    return eta


def scad_derivative(eta, lam, m=1.0, a=3.7):
    """Derivative of the SCAD penalty at ``eta >= 0``."""
    eta = _check(eta, lam, m, a)
    if lam == 0:
        out = np.zeros_like(eta)
    else:
        tail = m * np.maximum(a * lam - eta, 0.0) / (a - 1.0)
        out = np.where(eta <= lam, m * lam, tail)
    return out if out.ndim else float(out)


def scad_value(eta, lam, m=1.0, a=3.7):
    """SCAD penalty with ``p(0) = 0``: linear, then quadratic, then flat beyond ``a * lam``."""
    eta = _check(eta, lam, m, a)
    mid = m * (lam**2 + (a * lam * (eta - lam) - 0.5 * (eta**2 - lam**2)) / (a - 1.0))
    flat = m * lam**2 * (a + 1.0) / 2.0
    out = np.where(eta <= lam, m * lam * eta, np.where(eta <= a * lam, mid, flat))
    return out if out.ndim else float(out)
