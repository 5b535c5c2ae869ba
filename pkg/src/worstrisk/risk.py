"""Quadratic risks, the penalized per-environment risks and their envelope.

With ``tau = (gamma - 1) / 2`` the penalized risk of shifted environment
``i`` is ``h_i = (1 + tau) R_i - tau R_O`` and the worst risk over the shift
ball is ``f = max_i h_i``. The public API takes ``gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .moments import EnvironmentMoments

TIE_TOL = 1e-9


@dataclass(frozen=True)
class QuadraticRisk:
    """``R(beta) = beta G beta - 2 beta z + c``."""

    G: np.ndarray
    z: np.ndarray
    c: float

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).ravel()
        G = np.atleast_2d(np.asarray(self.G, dtype=float)).reshape(z.size, z.size)
        object.__setattr__(self, "G", 0.5 * (G + G.T))
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "c", float(self.c))

    @property
    def p(self) -> int:
        return self.z.size

    def __call__(self, beta) -> float:
        return risk_eval(self, beta)

    def grad(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        return 2.0 * (self.G @ beta - self.z)

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(self.G, self.z)

    def combine(self, a: float, other: "QuadraticRisk", b: float) -> "QuadraticRisk":
        """The quadratic ``a*self + b*other``."""
        return QuadraticRisk(a * self.G + b * other.G, a * self.z + b * other.z, a * self.c + b * other.c)


def risk_eval(R: QuadraticRisk, beta) -> float:
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size != R.p:
        raise ValueError(f"beta has length {beta.size}, risk has dimension {R.p}")
    return float(beta @ R.G @ beta - 2.0 * beta @ R.z + R.c)


def risk_eval_many(R: QuadraticRisk, betas: np.ndarray) -> np.ndarray:
    """Vectorised ``risk_eval`` over the rows of ``betas``."""
    B = np.atleast_2d(betas)
    return np.einsum("ij,jk,ik->i", B, R.G, B) - 2.0 * B @ R.z + R.c


def from_moments(m: EnvironmentMoments) -> QuadraticRisk:
    return QuadraticRisk(m.G, m.Z, m.g_Y)


def gamma_to_tau(gamma: float) -> float:
    return (gamma - 1.0) / 2.0


@dataclass(frozen=True)
class WorstRiskObjective:
    risks: tuple[QuadraticRisk, ...]
    risk_O: QuadraticRisk
    gamma: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative (tau >= -1/2)")
        risks = tuple(self.risks)
        if not risks:
            raise ValueError("need at least one shifted environment")
        if any(R.p != self.risk_O.p for R in risks):
            raise ValueError("all risks must share one dimension")
        object.__setattr__(self, "risks", risks)

    @classmethod
    def from_moments(cls, shifted: Sequence[EnvironmentMoments], observational: EnvironmentMoments, gamma: float):
        return cls(tuple(from_moments(m) for m in shifted), from_moments(observational), gamma)

    @property
    def tau(self) -> float:
        return gamma_to_tau(self.gamma)

    @property
    def k(self) -> int:
        return len(self.risks)

    @property
    def p(self) -> int:
        return self.risk_O.p

    def penalized(self, i: int) -> QuadraticRisk:
        """``h_i`` as a quadratic in its own right."""
        return self.risks[i].combine(1.0 + self.tau, self.risk_O, -self.tau)

    def h(self, beta) -> np.ndarray:
        r = np.array([risk_eval(R, beta) for R in self.risks])
        return (1.0 + self.tau) * r - self.tau * risk_eval(self.risk_O, beta)

    def h_grad(self, i: int, beta) -> np.ndarray:
        return self.penalized(i).grad(beta)

    def f(self, beta) -> float:
        return float(np.max(self.h(beta)))

    def f_many(self, betas: np.ndarray) -> np.ndarray:
        out = None
        for i in range(self.k):
            v = risk_eval_many(self.penalized(i), betas)
            out = v if out is None else np.maximum(out, v)
        return out


def _argmax_set(values: np.ndarray, tie_tol: float) -> tuple[int, ...]:
    top = values.max()
    band = tie_tol * (1.0 + abs(top))
    return tuple(int(i) for i in np.nonzero(values >= top - band)[0])


def worst_risk(obj: WorstRiskObjective, beta, tie_tol: float = TIE_TOL):
    """``(max_i h_i(beta), indices attaining the max within tie_tol)``."""
    h = obj.h(beta)
    return float(h.max()), _argmax_set(h, tie_tol)


def optimal_weights(obj: WorstRiskObjective, beta, tie_tol: float = TIE_TOL) -> np.ndarray:
    """Unit-norm weights concentrated on the maximal shifted risks.

    Tied maxima share the squared weight uniformly.
    """
    r = np.array([risk_eval(R, beta) for R in obj.risks])
    active = list(_argmax_set(r, tie_tol))
    w = np.zeros(obj.k)
    w[active] = 1.0 / np.sqrt(len(active))
    return w


def decomposition_value(obj: WorstRiskObjective, beta, weights=None) -> float:
    """``R_+^w / 2 + (1 + 2 tau) R_Delta^w / 2`` at the optimal weights.

    ``R_+^w = sum w_i^2 R_i + R_O`` and ``R_Delta^w = sum w_i^2 R_i - R_O``.
    """
    w = optimal_weights(obj, beta) if weights is None else np.asarray(weights, dtype=float)
    r = np.array([risk_eval(R, beta) for R in obj.risks])
    rw = float(np.sum(w**2 * r))
    rO = risk_eval(obj.risk_O, beta)
    return 0.5 * (rw + rO) + 0.5 * (1.0 + 2.0 * obj.tau) * (rw - rO)
