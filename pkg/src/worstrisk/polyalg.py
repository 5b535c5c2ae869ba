"""Real polynomials, affine pencil determinants and real-root isolation.

Root isolation follows a grid-then-bisect scheme: every real root lies in
``[-R, R]`` with ``R`` the Lagrange bound, the interval is cut into pieces
narrower than a root-separation bound, and each piece whose endpoints
differ in sign is bisected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

RootMode = Literal["exact", "bisect"]

TRIM_TOL = 1e-12
MAX_INTERVALS = 2**20
FALLBACK_DEPTH = 60
RESIDUAL_TOL = 1e-8
_EPS = np.finfo(float).eps


class DegenerateSeparation(ArithmeticError):
    """Root separation could not be established (near-multiple roots)."""


def _trim(coeffs: np.ndarray, tol: float = TRIM_TOL) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float).ravel()
    if c.size == 0:
        return np.zeros(1)
    scale = np.max(np.abs(c))
    if scale == 0.0:
        return np.zeros(1)
    keep = np.nonzero(np.abs(c) > tol * scale)[0]
    return c[: keep[-1] + 1].copy()


@dataclass(frozen=True, eq=False)
class Polynomial:
    """Real polynomial with coefficients in ascending degree.

    ``coeffs[u]`` multiplies ``lam**u``. Trailing coefficients at or below
    ``TRIM_TOL`` times the largest magnitude are dropped on construction.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = _trim(self.coeffs)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def constant(cls, value: float) -> "Polynomial":
        return cls(np.array([float(value)]))

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    @property
    def is_zero(self) -> bool:
        return self.coeffs.size == 1 and self.coeffs[0] == 0.0

    def __call__(self, lam):
        return eval_poly(self, lam)

    def __add__(self, other):
        other = _as_poly(other)
        n = max(self.coeffs.size, other.coeffs.size)
        out = np.zeros(n)
        out[: self.coeffs.size] += self.coeffs
        out[: other.coeffs.size] += other.coeffs
        return Polynomial(out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(-self.coeffs)

    def __sub__(self, other):
        return self + (-_as_poly(other))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __mul__(self, other):
        if np.isscalar(other):
            return Polynomial(self.coeffs * float(other))
        return Polynomial(np.convolve(self.coeffs, _as_poly(other).coeffs))

    __rmul__ = __mul__

    def derivative(self) -> "Polynomial":
        if self.degree == 0:
            return Polynomial.constant(0.0)
        return Polynomial(self.coeffs[1:] * np.arange(1, self.coeffs.size))

    def __repr__(self):
        return f"Polynomial({self.coeffs.tolist()})"


def _as_poly(x) -> Polynomial:
    if isinstance(x, Polynomial):
        return x
    return Polynomial.constant(float(x))


def eval_poly(P: Polynomial, lam):
    """Evaluate ``P`` at ``lam`` (scalar or array) by Horner's scheme."""
    return _horner(P.coeffs, lam)


def _horner(coeffs: np.ndarray, lam):
    lam = np.asarray(lam, dtype=float)
    acc = np.full(lam.shape, coeffs[-1])
    for e in coeffs[-2::-1]:
        acc = acc * lam + e
    return acc if acc.ndim else float(acc)


def _horner_error(P: Polynomial, lam: np.ndarray) -> np.ndarray:
    # Standard a-priori rounding bound for Horner evaluation.
    d = max(P.degree, 1)
    return 2.0 * d * _EPS * _horner(np.abs(P.coeffs), np.abs(lam))


@dataclass(frozen=True)
class AffinePencil:
    """Matrix-valued map ``lam -> M0 + lam * M1``."""

    M0: np.ndarray
    M1: np.ndarray

    def __post_init__(self):
        M0 = np.atleast_2d(np.asarray(self.M0, dtype=float))
        M1 = np.atleast_2d(np.asarray(self.M1, dtype=float))
        if M0.shape != M1.shape or M0.shape[0] != M0.shape[1] or M0.shape[0] < 1:
            raise ValueError(f"pencil needs two equal square matrices, got {M0.shape} and {M1.shape}")
        object.__setattr__(self, "M0", M0)
        object.__setattr__(self, "M1", M1)

    @property
    def dim(self) -> int:
        return self.M0.shape[0]

    def at(self, lam: float) -> np.ndarray:
        return self.M0 + lam * self.M1


def _interpolate(values: np.ndarray, nodes: np.ndarray) -> Polynomial:
    V = np.polynomial.polynomial.polyvander(nodes, nodes.size - 1)
    return Polynomial(np.linalg.solve(V, values))


def pencil_det_polynomial(A: AffinePencil) -> Polynomial:
    """Coefficients of ``det(M0 + lam*M1)`` by evaluation at ``0..p`` and interpolation."""
    nodes = np.arange(A.dim + 1, dtype=float)
    vals = np.array([np.linalg.det(A.at(t)) for t in nodes])
    return _interpolate(vals, nodes)


def cramer_numerators(A: AffinePencil, C0, C1) -> list[Polynomial]:
    """Numerator polynomials of Cramer's rule for ``M(lam) beta = C0 + lam*C1``.

    ``N[u](lam)`` is the determinant of ``M(lam)`` with column ``u`` replaced
    by ``C(lam)``, so ``beta_u = N[u] / det M`` wherever the determinant is
    nonzero.
    """
    C0 = np.asarray(C0, dtype=float).ravel()
    C1 = np.asarray(C1, dtype=float).ravel()
    p = A.dim
    if C0.size != p or C1.size != p:
        raise ValueError("right-hand side does not match pencil dimension")
    nodes = np.arange(p + 1, dtype=float)
    vals = np.empty((p, nodes.size))
    for t_idx, t in enumerate(nodes):
        M = A.at(t)
        rhs = C0 + t * C1
        for u in range(p):
            Mu = M.copy()
            Mu[:, u] = rhs
            vals[u, t_idx] = np.linalg.det(Mu)
    return [_interpolate(vals[u], nodes) for u in range(p)]


def lagrange_bound(P: Polynomial) -> float:
    """``max(1, sum_{u<d} |e_u / e_d|)``; every real root lies within it."""
    c = P.coeffs
    return max(1.0, float(np.sum(np.abs(c[:-1] / c[-1]))))


def discriminant(P: Polynomial) -> float:
    """Discriminant via the Sylvester resultant of ``P`` and ``P'``."""
    d = P.degree
    if d < 1:
        raise ValueError("discriminant needs degree >= 1")
    if d == 1:
        return 1.0
    a = P.coeffs[::-1]
    b = P.derivative().coeffs[::-1]
    n = 2 * d - 1
    S = np.zeros((n, n))
    for r in range(d - 1):
        S[r, r : r + d + 1] = a
    for r in range(d):
        S[d - 1 + r, r : r + d] = b
    res = np.linalg.det(S)
    sign = -1.0 if (d * (d - 1) // 2) % 2 else 1.0
    return sign * res / a[0]


def log_mahler_separation(P: Polynomial) -> float:
    """Log of ``sqrt(3 |D|) d^(-(d+2)/2) |P|_2^(-(d-1))``.

    A valid lower bound on the distance between any two complex roots
    (Mahler measure bounded by the coefficient 2-norm).
    """
    d = P.degree
    D = abs(discriminant(P))
    if D == 0.0:
        return -math.inf
    norm2 = float(np.linalg.norm(P.coeffs))
    return 0.5 * math.log(3.0 * D) - 0.5 * (d + 2) * math.log(d) - (d - 1) * math.log(norm2)


def log_separation_bound(P: Polynomial) -> float:
    """Natural log of the Rump-type minimum root separation bound.

    For degree ``d`` with leading coefficient ``e_d``, discriminant ``D``
    and ``s = sum |e_u|``::

        (1 v |e_d|)^(d (ln d + 1)) |D| (2d)^(d-1) / s^(d (ln d + 3))

    Returned in log space because the bound underflows for modest degrees.
    """
    d = P.degree
    lead = abs(P.coeffs[-1])
    s = float(np.sum(np.abs(P.coeffs)))
    D = abs(discriminant(P))
    if D == 0.0:
        return -math.inf
    lnd = math.log(d)
    return (
        d * (lnd + 1.0) * math.log(max(1.0, lead))
        + math.log(D)
        + (d - 1) * math.log(2.0 * d)
        - d * (lnd + 3.0) * math.log(s)
    )


@dataclass
class RootIsolationReport:
    roots: np.ndarray
    bound_R: float
    separation: float
    intervals_scanned: int
    bisections_per_root: int
    method: RootMode
    brackets: list[tuple[float, float]] = field(default_factory=list)
    capped: bool = False
    unresolved: int = 0


def _taylor_coeffs(P: Polynomial, c: np.ndarray) -> np.ndarray:
    """Row ``u`` holds ``P^(u)(c) / u!`` for every centre in ``c``."""
    d = P.degree
    e = P.coeffs
    out = np.zeros((d + 1, c.size))
    for u in range(d + 1):
        acc = np.zeros(c.size)
        for v in range(d, u - 1, -1):
            acc = acc * c + math.comb(v, u) * e[v]
        out[u] = acc
    return out


def _excluded(P: Polynomial, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # P has no root on [a, b] if |P(c)| beats the Taylor bound of the remainder.
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    t = _taylor_coeffs(P, c)
    rest = np.zeros(c.size)
    hp = np.ones(c.size)
    for u in range(1, t.shape[0]):
        hp = hp * h
        rest += np.abs(t[u]) * hp
    return np.abs(t[0]) > rest * (1.0 + 8 * _EPS) + _horner_error(P, c)


def _bisect(P: Polynomial, a: float, b: float, fa: float, steps: int | None):
    limit = 4000 if steps is None else steps
    done = 0
    while done < limit:
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        fm = eval_poly(P, m)
        done += 1
        if fm == 0.0:
            return m, done
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b), done


def isolate_real_roots(
    P: Polynomial,
    c_n: int = 60,
    mode: RootMode = "exact",
    max_intervals: int = MAX_INTERVALS,
    fallback_depth: int = FALLBACK_DEPTH,
    strict: bool = False,
) -> RootIsolationReport:
    """Find the real roots of odd multiplicity of ``P``.

    ``mode="bisect"`` performs exactly ``c_n`` bisections per sign-change
    interval; ``mode="exact"`` bisects until the bracket cannot shrink in
    floating point. Both modes walk the same bracket sequence, so the
    budgeted answer lies within ``2**-c_n`` times the initial width of the
    refined one.
    """
    if mode not in ("exact", "bisect"):
        raise ValueError(f"unknown root mode {mode!r}")
    if P.is_zero or P.degree < 1:
        raise ValueError("root isolation needs a polynomial of degree >= 1")
    if c_n < 1:
        raise ValueError("c_n must be positive")

    R = lagrange_bound(P)
    # The Rump-type expression is not scale invariant and can exceed the true
    # gap for small coefficients; the Mahler bound keeps the grid honest.
    log_sep = min(log_separation_bound(P), log_mahler_separation(P))
    sep = math.exp(log_sep) if log_sep > -700 else 0.0
    log_needed = math.log(2.0 * R) - log_sep
    capped = log_needed > math.log(max_intervals)
    m = max_intervals if capped else max(2, 2 * math.ceil(R / sep))

    nodes = np.linspace(-R, R, m + 1)
    vals = eval_poly(P, nodes)
    hit = np.abs(vals) <= _horner_error(P, nodes)
    sgn = np.where(hit, 0.0, np.sign(vals))

    roots = list(nodes[hit])
    brackets = [(nodes[u], nodes[u + 1], vals[u]) for u in np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]]
    unresolved = 0

    if capped:
        quiet = np.nonzero(sgn[:-1] * sgn[1:] > 0)[0]
        a, b = nodes[quiet], nodes[quiet + 1]
        for _ in range(fallback_depth):
            keep = ~_excluded(P, a, b)
            a, b = a[keep], b[keep]
            if a.size == 0:
                break
            mid = 0.5 * (a + b)
            fm = eval_poly(P, mid)
            fa = eval_poly(P, a)
            fb = eval_poly(P, b)
            mhit = np.abs(fm) <= _horner_error(P, mid)
            roots.extend(mid[mhit])
            sm = np.where(mhit, 0.0, np.sign(fm))
            left = sm * np.sign(fa) < 0
            right = sm * np.sign(fb) < 0
            brackets.extend(zip(a[left], mid[left], fa[left]))
            brackets.extend(zip(mid[right], b[right], fm[right]))
            same = ~mhit & ~left & ~right
            a, b = np.concatenate([a[same], mid[same]]), np.concatenate([mid[same], b[same]])
        unresolved = int(a.size)
        if unresolved and strict:
            raise DegenerateSeparation(
                f"{unresolved} intervals could not be cleared after {fallback_depth} subdivisions"
            )

    steps = None if mode == "exact" else c_n
    n_bis = 0
    for lo, hi, flo in brackets:
        r, done = _bisect(P, lo, hi, flo, steps)
        roots.append(r)
        n_bis = max(n_bis, done)

    roots = np.unique(np.asarray(roots, dtype=float))
    return RootIsolationReport(
        roots=roots,
        bound_R=R,
        separation=sep,
        intervals_scanned=int(m),
        bisections_per_root=c_n if mode == "bisect" else n_bis,
        method=mode,
        brackets=sorted((float(lo), float(hi)) for lo, hi, _ in brackets),
        capped=capped,
        unresolved=unresolved,
    )


def poly_from_roots(roots: Sequence[float], lead: float = 1.0) -> Polynomial:
    return Polynomial(np.polynomial.polynomial.polyfromroots(roots) * lead)
