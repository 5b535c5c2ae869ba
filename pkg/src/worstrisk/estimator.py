"""Finite candidate enumeration for the worst-risk minimizer.

The envelope ``f = max_i h_i`` is minimized either at the unconstrained
minimizer (inflexion point) of a single ``h_i``, or on a set where several
``h_i`` coincide. Pairwise coincidences are handled with the Lagrange
system ``M(lam) beta = C(lam)``: an affine matrix pencil whose admissible
multipliers are the real roots of ``det(M)^2 * g(beta(lam))``, a polynomial
assembled from Cramer numerators.

Where three or more penalized risks meet (possible once ``p >= 2`` and
``k >= 3``) the multiplier system has more than one parameter. Those
"junction" candidates are the stationary points of the concave dual
``phi(mu) = min_beta sum_s mu_s h_s(beta)`` restricted to the open face of
the simplex spanned by the meeting environments, found by damped Newton
steps. On a pair face this dual weight is exactly the pencil multiplier
(rescaled by ``1 + tau``), so junctions extend the pairwise construction
rather than replace it.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, asdict
from typing import Literal, Sequence

import numpy as np
import scipy.linalg

from .moments import EnvironmentMoments
from .polyalg import (
    AffinePencil,
    Polynomial,
    RootMode,
    cramer_numerators,
    isolate_real_roots,
    pencil_det_polynomial,
)
from .risk import QuadraticRisk, WorstRiskObjective, from_moments, risk_eval, worst_risk

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class SingularCombination(ArithmeticError):
    pass


class ZeroPolynomial(ArithmeticError):
    pass


class NoCandidate(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class EstimatorConfig:
    gamma: float = 1.0
    root_mode: RootMode = "exact"
    c_n: int = 60
    det_exclusion_tol: float = 1e-7
    envelope_tol: float = 1e-6
    singular_tol: float = 1e-10
    tie_tol: float = 1e-9
    # "all" keeps every verified multiplier of a pair; "argmin" keeps only the
    # one minimizing h_i along the coincidence set.
    pair_selection: Literal["all", "argmin"] = "all"
    junctions: bool = True
    newton_max_iter: int = 200

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.c_n < 1:
            raise ValueError("c_n must be at least 1")
        for name in ("det_exclusion_tol", "envelope_tol", "singular_tol", "tie_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Candidate:
    beta: np.ndarray
    kind: Literal["inflexion", "intersection", "junction"]
    envs: tuple[int, ...]
    lam: float | None = None
    objective: float = float("nan")
    active: tuple[int, ...] = ()
    kept: bool = False
    reason: str = ""
    pair_argmin: bool = False

    @property
    def provenance(self) -> str:
        names = ",".join(str(i + 1) for i in self.envs)
        if self.kind == "intersection":
            return f"intersection({names}; lam={self.lam:.12g})"
        return f"{self.kind}({names})"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = self.beta.tolist()
        d["envs"] = [i + 1 for i in self.envs]
        d["active"] = [i + 1 for i in self.active]
        d["provenance"] = self.provenance
        return d


@dataclass
class EstimationReport:
    beta: np.ndarray | None
    objective: float | None
    candidates: list[Candidate]
    config: EstimatorConfig
    chosen: int | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "beta": None if self.beta is None else self.beta.tolist(),
            "objective": self.objective,
            "chosen": self.chosen,
            "config": asdict(self.config),
            "candidates": [c.to_dict() for c in self.candidates],
            "notes": list(self.notes),
        }


def _quad(env) -> QuadraticRisk:
    return from_moments(env) if isinstance(env, EnvironmentMoments) else env


def _sym_solve(M: np.ndarray, rhs: np.ndarray, singular_tol: float) -> np.ndarray | None:
    s = np.abs(np.linalg.eigvalsh(M))
    if s.max() == 0.0 or s.min() < singular_tol * s.max():
        return None
    return scipy.linalg.solve(M, rhs, assume_a="sym")


# -- inflexion points ---------------------------------------------------

def inflexion_candidates(obj: WorstRiskObjective, cfg: EstimatorConfig | None = None, notes=None) -> list[Candidate]:
    """Stationary point of every ``h_i``.

    Solves ``((1+gamma) G_i + (1-gamma) G_O) beta = (1+gamma) Z_i + (1-gamma) Z_O``,
    which is ``grad h_i = 0`` up to a factor 2. Environments with a
    numerically singular combination are skipped.
    """
    cfg = cfg or EstimatorConfig(gamma=obj.gamma)
    out = []
    for i in range(obj.k):
        h = obj.penalized(i)
        beta = _sym_solve(h.G, h.z, cfg.singular_tol)
        if beta is None:
            msg = f"SingularCombination({i + 1}): inflexion skipped"
            log.warning(msg)
            if notes is not None:
                notes.append(msg)
            continue
        out.append(Candidate(beta=beta, kind="inflexion", envs=(i,)))
    return out


# -- pairwise Lagrange systems ------------------------------------------

def build_lagrange_system(env_i, env_j, base=None):
    """Pencil and right-hand side of the multiplier system for ``R_i = R_j``.

    Returns ``(AffinePencil(M0, M1), C0, C1)`` with
    ``M(lam) = M0 + lam*M1`` and ``C(lam) = C0 + lam*C1``. ``base`` is the
    quadratic being minimized along the coincidence set; it defaults to
    ``R_i`` so that ``M(0) = G_i`` and ``M(1) = G_j``. Passing the penalized
    ``h_i`` gives the system for general ``gamma``.
    """
    Ri, Rj = _quad(env_i), _quad(env_j)
    b = Ri if base is None else _quad(base)
    M1 = -(Ri.G - Rj.G)
    C1 = -(Ri.z - Rj.z)
    return AffinePencil(b.G, M1), b.z.copy(), C1


def intersection_polynomial(env_i, env_j, base=None) -> Polynomial:
    """``det(M)^2 * g(beta(lam))`` with ``g = R_i - R_j`` as explicit coefficients."""
    Ri, Rj = _quad(env_i), _quad(env_j)
    pencil, C0, C1 = build_lagrange_system(Ri, Rj, base)
    D = pencil_det_polynomial(pencil)
    N = cramer_numerators(pencil, C0, C1)
    dG = Ri.G - Rj.G
    dz = Ri.z - Rj.z
    dc = Ri.c - Rj.c
    p = len(N)
    quad = Polynomial.constant(0.0)
    lin = Polynomial.constant(0.0)
    for u in range(p):
        lin = lin + N[u] * float(dz[u])
        for v in range(p):
            if dG[u, v] != 0.0:
                quad = quad + N[u] * N[v] * float(dG[u, v])
    P = quad - 2.0 * (D * lin) + (D * D) * dc
    if P.is_zero:
        raise ZeroPolynomial("g(beta(lam)) vanishes identically along the multiplier path")
    return P


def _pair_polynomials(Ri, Rj, base):
    pencil, C0, C1 = build_lagrange_system(Ri, Rj, base)
    return pencil, C0, C1, pencil_det_polynomial(pencil)


def intersection_candidates(obj: WorstRiskObjective, i: int, j: int, cfg: EstimatorConfig, notes=None) -> list[Candidate]:
    """Critical points of ``h_i`` on the coincidence set ``{R_i = R_j}``."""
    if i == j:
        raise ValueError("intersection needs two distinct environments")
    Ri, Rj = obj.risks[i], obj.risks[j]
    base = obj.penalized(i)
    try:
        P = intersection_polynomial(Ri, Rj, base)
    except ZeroPolynomial:
        msg = f"intersection({i + 1},{j + 1}): zero polynomial, no candidates"
        log.warning(msg)
        if notes is not None:
            notes.append(msg)
        return []
    if P.degree < 1:
        return []
    pencil, C0, C1, D = _pair_polynomials(Ri, Rj, base)
    lams = isolate_real_roots(P, c_n=cfg.c_n, mode=cfg.root_mode).roots
    if D.is_zero:
        return []
    det_roots = isolate_real_roots(D, c_n=cfg.c_n, mode=cfg.root_mode).roots if D.degree >= 1 else np.empty(0)

    found = []
    for lam in lams:
        if det_roots.size and np.min(np.abs(det_roots - lam)) <= cfg.det_exclusion_tol * (1.0 + abs(lam)):
            continue
        beta = _sym_solve(pencil.at(lam), C0 + lam * C1, cfg.singular_tol)
        if beta is None:
            continue
        ri, rj = risk_eval(Ri, beta), risk_eval(Rj, beta)
        if abs(ri - rj) > cfg.envelope_tol * (1.0 + abs(ri)):
            continue
        found.append(Candidate(beta=beta, kind="intersection", envs=(i, j), lam=float(lam)))
    if not found:
        return []
    vals = np.array([risk_eval(base, c.beta) for c in found])
    best = vals.min()
    for c, v in zip(found, vals):
        c.pair_argmin = bool(v <= best + cfg.tie_tol * (1.0 + abs(best)))
    if cfg.pair_selection == "argmin":
        found = [c for c in found if c.pair_argmin]
    return found


# -- junctions of three or more envelopes -------------------------------

def _face_state(quads: Sequence[QuadraticRisk], mu: np.ndarray):
    H = sum(m * q.G for m, q in zip(mu, quads))
    c = sum(m * q.z for m, q in zip(mu, quads))
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return None
    beta = scipy.linalg.cho_solve((L, True), c)
    hv = np.array([risk_eval(q, beta) for q in quads])
    J = np.array([q.grad(beta) for q in quads])
    HinvJt = scipy.linalg.cho_solve((L, True), J.T)
    hess = -0.5 * J @ HinvJt
    return beta, hv, float(mu @ hv), hess


def junction_point(quads: Sequence[QuadraticRisk], max_iter: int = 200, tol: float = 1e-13):
    """Point where all ``quads`` are equal and a positive combination of their gradients vanishes.

    Maximizes the concave dual over the open simplex by damped Newton
    steps that never leave it. Returns ``(beta, mu)`` or ``None`` when the
    maximizer sits on the boundary of the face or the face is degenerate.
    """
    m = len(quads)
    mu = np.full(m, 1.0 / m)
    Q = np.vstack([-np.ones((1, m - 1)), np.eye(m - 1)])
    state = _face_state(quads, mu)
    if state is None:
        return None
    for _ in range(max_iter):
        beta, hv, phi, hess = state
        g = Q.T @ hv
        if np.max(np.abs(g)) <= tol * (1.0 + np.max(np.abs(hv))):
            return beta, mu
        Hq = Q.T @ hess @ Q
        try:
            step = -np.linalg.solve(Hq, g)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        dmu = Q @ step
        neg = dmu < 0
        t = 1.0
        if np.any(neg):
            t = min(1.0, 0.95 * float(np.min(-mu[neg] / dmu[neg])))
        slope = float(g @ step)
        if slope <= 0:
            return None
        for _ in range(60):
            trial = _face_state(quads, mu + t * dmu)
            if trial is not None and trial[2] >= phi + 1e-4 * t * slope - 1e-15 * abs(phi):
                break
            t *= 0.5
        else:
            return None
        mu = mu + t * dmu
        state = trial
        if mu.min() < 1e-12:
            return None
    beta, hv, _, _ = state
    if np.max(np.abs(Q.T @ hv)) <= 1e-9 * (1.0 + np.max(np.abs(hv))):
        return beta, mu
    return None


def junction_candidates(obj: WorstRiskObjective, cfg: EstimatorConfig) -> list[Candidate]:
    out = []
    for size in range(3, min(obj.k, obj.p + 1) + 1):
        for S in itertools.combinations(range(obj.k), size):
            res = junction_point([obj.penalized(s) for s in S], max_iter=cfg.newton_max_iter)
            if res is None:
                continue
            beta, _ = res
            r = np.array([risk_eval(obj.risks[s], beta) for s in S])
            if np.ptp(r) > cfg.envelope_tol * (1.0 + np.max(np.abs(r))):
                continue
            out.append(Candidate(beta=beta, kind="junction", envs=S))
    return out


# -- assembly -----------------------------------------------------------

def _filter(obj: WorstRiskObjective, cand: Candidate, cfg: EstimatorConfig) -> None:
    value, active = worst_risk(obj, cand.beta, cfg.tie_tol)
    cand.objective = value
    cand.active = active
    if cand.kind == "inflexion":
        cand.kept = cand.envs[0] in active
        cand.reason = "active on envelope" if cand.kept else "h_i below envelope"
    else:
        cand.kept = bool(set(cand.envs) & set(active))
        cand.reason = "pair on envelope" if cand.kept else "no generating environment active"


def enumerate_candidates(obj: WorstRiskObjective, cfg: EstimatorConfig, notes=None) -> list[Candidate]:
    cands = inflexion_candidates(obj, cfg, notes)
    for i, j in itertools.combinations(range(obj.k), 2):
        cands.extend(intersection_candidates(obj, i, j, cfg, notes))
    if cfg.junctions and obj.k >= 3 and obj.p >= 2:
        cands.extend(junction_candidates(obj, cfg))
    for c in cands:
        _filter(obj, c, cfg)
    return cands


def minimize_worst_risk(obj: WorstRiskObjective, cfg: EstimatorConfig | None = None):
    """Minimize ``max_i h_i`` over the finite candidate set.

    Returns ``(beta_hat, report)``. Raises ``NoCandidate`` (carrying the
    report) when every candidate was skipped or filtered.
    """
    if cfg is None:
        cfg = EstimatorConfig(gamma=obj.gamma)
    elif cfg.gamma != obj.gamma:
        raise ValueError(f"config gamma {cfg.gamma} differs from objective gamma {obj.gamma}")
    notes: list[str] = []
    cands = enumerate_candidates(obj, cfg, notes)
    report = EstimationReport(beta=None, objective=None, candidates=cands, config=cfg, notes=notes)
    kept = [u for u, c in enumerate(cands) if c.kept]
    if not kept:
        raise NoCandidate("no candidate survived the envelope filter", report)
    best = min(cands[u].objective for u in kept)
    band = cfg.tie_tol * (1.0 + abs(best))
    tied = [u for u in kept if cands[u].objective <= best + band]
    chosen = min(tied, key=lambda u: (cands[u].objective, u, tuple(cands[u].beta)))
    report.chosen = chosen
    report.beta = cands[chosen].beta.copy()
    report.objective = cands[chosen].objective
    return report.beta, report


def estimate_from_moments(
    shifted: Sequence[EnvironmentMoments],
    observational: EnvironmentMoments,
    cfg: EstimatorConfig,
):
    obj = WorstRiskObjective.from_moments(shifted, observational, cfg.gamma)
    return minimize_worst_risk(obj, cfg)
