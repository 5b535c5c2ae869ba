"""Brute-force validators for the estimator and the worst-risk decomposition."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .risk import WorstRiskObjective, risk_eval

GRID_GUARD = 10**8
_CHUNK = 2**20


class GridGuardExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    radius: float
    step: float
    dim: int

    def __post_init__(self):
        if self.radius <= 0 or self.step <= 0:
            raise ValueError("radius and step must be positive")
        if self.step > self.radius:
            raise ValueError("step must not exceed radius")
        if self.points_per_axis ** self.dim > GRID_GUARD:
            raise GridGuardExceeded(f"{self.points_per_axis}^{self.dim} lattice points exceed {GRID_GUARD}")

    @property
    def points_per_axis(self) -> int:
        return int(math.floor(2 * self.radius / self.step + 1e-9)) + 1


def _lattice_argmin(obj, anchor, step, idx_ranges):
    """Lexicographically first minimizer of ``f`` on ``anchor + step * t``.

    ``idx_ranges`` lists one integer index array per coordinate.
    """
    shape = tuple(len(r) for r in idx_ranges)
    total = int(np.prod(shape))
    if total > GRID_GUARD:
        raise GridGuardExceeded(f"{total} lattice points exceed {GRID_GUARD}")
    best_val, best_flat = math.inf, -1
    for start in range(0, total, _CHUNK):
        flat = np.arange(start, min(total, start + _CHUNK))
        multi = np.unravel_index(flat, shape)
        pts = np.column_stack([anchor + step * np.asarray(r)[m] for r, m in zip(idx_ranges, multi)])
        vals = obj.f_many(pts)
        u = int(np.argmin(vals))
        if vals[u] < best_val:
            best_val, best_flat = float(vals[u]), int(flat[u])
    multi = np.unravel_index(best_flat, shape)
    tidx = np.array([r[m] for r, m in zip(idx_ranges, multi)])
    return tidx, best_val


def grid_minimize(obj: WorstRiskObjective, grid: GridSpec):
    """Exhaustive lattice argmin of ``f`` over ``{-r, -r + step, ..., r}^p``."""
    if grid.dim != obj.p:
        raise ValueError("grid dimension differs from objective dimension")
    n = grid.points_per_axis
    tidx, val = _lattice_argmin(obj, -grid.radius, grid.step, [np.arange(n)] * obj.p)
    return -grid.radius + grid.step * tidx, val


def coercive_radius(obj: WorstRiskObjective) -> float:
    """Radius of a ball certified to contain the minimizer of ``f``.

    Uses ``h_i(beta) >= lmin_i |beta|^2 - 2 |z_i| |beta| + c_i`` and
    ``min f <= f(0)``; requires some ``h_i`` with positive definite Hessian.
    """
    f0 = obj.f(np.zeros(obj.p))
    best = math.inf
    for i in range(obj.k):
        h = obj.penalized(i)
        lmin = float(np.linalg.eigvalsh(h.G).min())
        if lmin <= 0:
            continue
        zn = float(np.linalg.norm(h.z))
        disc = zn * zn + lmin * max(0.0, f0 - h.c)
        best = min(best, (zn + math.sqrt(disc)) / lmin)
    if not math.isfinite(best):
        raise ValueError("no penalized risk is strictly convex; no finite radius")
    return max(best, 1e-6)


def heuristic_radius(obj: WorstRiskObjective) -> float:
    """``2 max_i (|z_i| + sqrt(c_i)) / lmin(G_i)`` over the raw shifted risks."""
    vals = []
    for R in obj.risks:
        lmin = float(np.linalg.eigvalsh(R.G).min())
        vals.append(math.inf if lmin <= 0 else 2 * (np.linalg.norm(R.z) + math.sqrt(max(R.c, 0.0))) / lmin)
    return float(max(vals))


@dataclass
class GridResult:
    beta: np.ndarray
    value: float
    radius: float
    step: float
    stages: list[tuple[float, int]]


def dual_lower_bound(obj: WorstRiskObjective, per_axis: int = 200, seed: int = 0) -> float:
    """Weak-duality lower bound ``max_mu min_beta sum_i mu_i h_i(beta) <= min f``.

    Scans a simplex lattice for ``k <= 3`` and random simplex points
    otherwise; every evaluated ``mu`` yields a valid bound.
    """
    Hs = [obj.penalized(i) for i in range(obj.k)]
    k = obj.k
    if k == 1:
        mus = np.ones((1, 1))
    elif k == 2:
        t = np.linspace(0, 1, per_axis + 1)
        mus = np.column_stack([1 - t, t])
    elif k == 3:
        a, b = np.meshgrid(np.arange(per_axis + 1), np.arange(per_axis + 1), indexing="ij")
        keep = a + b <= per_axis
        a, b = a[keep] / per_axis, b[keep] / per_axis
        mus = np.column_stack([1 - a - b, a, b])
    else:
        mus = np.vstack([np.eye(k), np.random.default_rng(seed).dirichlet(np.ones(k), 20000)])
    best = -math.inf
    for mu in mus:
        H = sum(m * h.G for m, h in zip(mu, Hs))
        z = sum(m * h.z for m, h in zip(mu, Hs))
        c = sum(m * h.c for m, h in zip(mu, Hs))
        w = np.linalg.eigvalsh(H)
        if w.min() <= 1e-14 * max(1.0, w.max()):
            continue
        best = max(best, float(c - z @ np.linalg.solve(H, z)))
    return best


def certified_grid_minimize(obj: WorstRiskObjective, step: float, radius: float | None = None, coarse_points: int | None = None):
    """Argmin of ``f`` on the full lattice of spacing ``step``, searched coarse to fine.

    Every coarse lattice point ``c`` is also a fine lattice point, so both the
    continuous minimizer and the fine-lattice minimizer lie within
    ``sqrt(2 (f(c) - LB) / m)`` of the minimizer, ``m`` being the strong
    convexity modulus of ``f`` and ``LB`` a dual lower bound on ``min f``.
    Refinement windows of twice that radius therefore return exactly the
    point an exhaustive scan of the whole lattice would. Requires every
    ``h_i`` to be strictly convex.
    """
    Hs = [obj.penalized(i) for i in range(obj.k)]
    lmins = [float(np.linalg.eigvalsh(h.G).min()) for h in Hs]
    if min(lmins) <= 0:
        raise ValueError("certified search needs strictly convex penalized risks")
    r = coercive_radius(obj) if radius is None else radius
    m_sc = 2.0 * min(lmins)
    lb = dual_lower_bound(obj)
    p = obj.p
    N = int(math.floor(2 * r / step + 1e-9))

    if coarse_points is None:
        coarse_points = int(round(2e5 ** (1.0 / p)))
    stride = 1
    while N // stride > coarse_points:
        stride *= 10
    lo = np.zeros(p, dtype=np.int64)
    hi = np.full(p, N, dtype=np.int64)
    stages = []
    while True:
        ranges = [np.arange(math.ceil(l / stride) * stride, h + 1, stride) for l, h in zip(lo, hi)]
        tidx, val = _lattice_argmin(obj, -r, step, ranges)
        stages.append((stride * step, int(np.prod([len(x) for x in ranges]))))
        if stride == 1:
            break
        gap = max(val - lb, 0.0) * (1.0 + 1e-9) + 1e-12 * (1.0 + abs(val))
        rho = 2.0 * math.sqrt(2.0 * gap / m_sc)
        width = int(math.ceil(rho / step)) + 1
        lo = np.maximum(tidx - width, 0)
        hi = np.minimum(tidx + width, N)
        stride //= 10
    return GridResult(beta=-r + step * tidx, value=val, radius=r, step=step, stages=stages)


def sphere_max_risk(obj: WorstRiskObjective, beta, n_dirs: int, seed: int = 0, include_axes: bool = True) -> float:
    """Max over unit ``w`` of ``(1 + tau) sum w_i^2 R_i(beta) - tau R_O(beta)``."""
    if n_dirs < 1:
        raise ValueError("n_dirs must be positive")
    r = np.array([risk_eval(R, beta) for R in obj.risks])
    rO = risk_eval(obj.risk_O, beta)
    W = np.random.default_rng(seed).standard_normal((n_dirs, obj.k))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    if include_axes:
        W = np.vstack([W, np.eye(obj.k)])
    vals = (1.0 + obj.tau) * (W**2 @ r) - obj.tau * rO
    return float(vals.max())
