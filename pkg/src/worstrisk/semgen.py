"""Random-coefficient SEM simulation and exact population moments.

Each environment solves ``v = B v + eps + A`` for ``v = (Y, X)``, so
``v = (I - B)^{-1} (eps + A)`` with ``A = 0`` in the observational
environment. ``B`` is a finite mixture of fixed matrices shared by all
environments; noise and shifts are zero-mean and drawn independently of
``B`` and of each other.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np

from .moments import EnvironmentMoments, EnvironmentSample

MAX_COND = 1e12


class SpecError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


class SingularD(ArithmeticError):
    pass


class FixedPointDivergence(ArithmeticError):
    pass


def _psd(M, key) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise SpecError(key, f"expected a square matrix, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=1e-12):
        raise SpecError(key, "matrix is not symmetric")
    if np.linalg.eigvalsh(M).min() < -1e-10 * max(1.0, np.abs(M).max()):
        raise SpecError(key, "matrix is not positive semi-definite")
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class SEMSpec:
    p: int
    k: int
    B: tuple[np.ndarray, ...]
    probs: tuple[float, ...]
    noise_cov: np.ndarray
    shift_covs: tuple[np.ndarray, ...]
    seed: int = 0
    distribution: Literal["gaussian", "uniform"] = "gaussian"
    shift_means: tuple | None = None
    cond: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        p, k = int(self.p), int(self.k)
        if p < 1:
            raise SpecError("p", "must be at least 1")
        if k < 1:
            raise SpecError("k", "must be at least 1")
        d = p + 1
        Bs = tuple(np.asarray(b, dtype=float).reshape(d, d) if np.size(b) == d * d else None for b in self.B)
        if not Bs or any(b is None for b in Bs):
            raise SpecError("B", f"every realization must have {d * d} entries")
        probs = tuple(float(x) for x in self.probs)
        if len(probs) != len(Bs):
            raise SpecError("probs", f"{len(probs)} probabilities for {len(Bs)} B realizations")
        if any(x < 0 for x in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise SpecError("probs", f"must be non-negative and sum to 1 (sum is {sum(probs):.12g})")
        conds = []
        for u, b in enumerate(Bs):
            c = np.linalg.cond(np.eye(d) - b)
            if not np.isfinite(c) or c > MAX_COND:
                raise SpecError("B", f"I - B[{u}] is singular or ill-conditioned (cond {c:.3e})")
            conds.append(float(c))
        noise = _psd(self.noise_cov, "noise_cov")
        if noise.shape != (d, d):
            raise SpecError("noise_cov", f"expected shape {(d, d)}")
        if len(self.shift_covs) != k:
            raise SpecError("shift_covs", f"expected {k} matrices, got {len(self.shift_covs)}")
        shifts = tuple(_psd(S, f"shift_covs[{u}]") for u, S in enumerate(self.shift_covs))
        if any(S.shape != (d, d) for S in shifts):
            raise SpecError("shift_covs", f"every matrix must have shape {(d, d)}")
        if self.shift_means is not None and np.any(np.asarray(self.shift_means, dtype=float) != 0):
            raise SpecError(
                "shift_means",
                "shifts must have zero mean; a nonzero mean breaks the noise/shift orthogonality given B",
            )
        if self.distribution not in ("gaussian", "uniform"):
            raise SpecError("distribution", "must be 'gaussian' or 'uniform'")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "B", Bs)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "noise_cov", noise)
        object.__setattr__(self, "shift_covs", shifts)
        object.__setattr__(self, "cond", tuple(conds))

    @property
    def transfers(self) -> list[np.ndarray]:
        d = self.p + 1
        return [np.linalg.inv(np.eye(d) - b) for b in self.B]

    def shift_cov(self, env) -> np.ndarray:
        i = env_index(env)
        return np.zeros_like(self.noise_cov) if i == 0 else self.shift_covs[i - 1]

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "k": self.k,
            "B": [b.ravel().tolist() for b in self.B],
            "probs": list(self.probs),
            "noise_cov": self.noise_cov.ravel().tolist(),
            "shift_covs": [S.ravel().tolist() for S in self.shift_covs],
            "seed": self.seed,
            "distribution": self.distribution,
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "SEMSpec":
        for key in ("p", "k", "B", "noise_cov", "shift_covs"):
            if key not in raw:
                raise SpecError(key, "missing")
        p = int(raw["p"])
        if p < 1:
            raise SpecError("p", "must be at least 1")
        d = p + 1

        def mat(x, key):
            a = np.asarray(x, dtype=float)
            if a.size != d * d:
                raise SpecError(key, f"expected {d * d} entries, got {a.size}")
            return a.reshape(d, d)

        Bs = [mat(b, f"B[{u}]") for u, b in enumerate(raw["B"])]
        probs = raw.get("probs", [1.0 / len(Bs)] * len(Bs))
        return cls(
            p=p,
            k=int(raw["k"]),
            B=tuple(Bs),
            probs=tuple(probs),
            noise_cov=mat(raw["noise_cov"], "noise_cov"),
            shift_covs=tuple(mat(S, f"shift_covs[{u}]") for u, S in enumerate(raw["shift_covs"])),
            seed=int(raw.get("seed", 0)),
            distribution=raw.get("distribution", "gaussian"),
            shift_means=raw.get("shift_means"),
        )


def load_spec(path) -> SEMSpec:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        raw = yaml.safe_load(text)
    else:
        raw = json.loads(text)
    if not isinstance(raw, dict):
        raise SpecError("<root>", "spec file must hold a mapping")
    return SEMSpec.from_dict(raw)


def env_index(env) -> int:
    """``"O"`` -> 0, ``"A3"``/``3`` -> 3."""
    if isinstance(env, (int, np.integer)):
        return int(env)
    s = str(env)
    if s == "O":
        return 0
    if s.startswith("A") and s[1:].isdigit():
        return int(s[1:])
    raise ValueError(f"unknown environment {env!r}")


def env_name(i: int) -> str:
    return "O" if i == 0 else f"A{i}"


def _draw(rng: np.random.Generator, cov: np.ndarray, n: int, distribution: str) -> np.ndarray:
    d = cov.shape[0]
    w, V = np.linalg.eigh(cov)
    root = V * np.sqrt(np.clip(w, 0, None))
    if distribution == "gaussian":
        u = rng.standard_normal((n, d))
    else:
        u = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), (n, d))
    return u @ root.T


@dataclass
class LatentDraw:
    component: np.ndarray
    noise: np.ndarray
    shift: np.ndarray


def sample_environment(spec: SEMSpec, env, n: int, seed=None, return_latent: bool = False):
    """Draw ``n`` observations of ``(Y, X)`` from environment ``env``.

    The stream is keyed on ``(seed, env)`` so each environment is
    reproducible on its own; ``seed`` may be an int or a sequence of ints
    and defaults to ``spec.seed``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    i = env_index(env)
    if i > spec.k:
        raise ValueError(f"environment {env} does not exist (k={spec.k})")
    base = [spec.seed] if seed is None else [int(x) for x in np.atleast_1d(seed)]
    rng = np.random.default_rng(np.random.SeedSequence([*base, i]))
    comp = rng.choice(len(spec.B), size=n, p=spec.probs)
    eps = _draw(rng, spec.noise_cov, n, spec.distribution)
    shift = _draw(rng, spec.shift_cov(i), n, spec.distribution) if i else np.zeros_like(eps)
    v = eps + shift
    out = np.empty_like(v)
    for l, T in enumerate(spec.transfers):
        rows = comp == l
        out[rows] = v[rows] @ T.T
    sample = EnvironmentSample(out[:, 1:], out[:, 0], env_name(i))
    if return_latent:
        return sample, LatentDraw(comp, eps, shift)
    return sample


def second_moment_matrix(spec: SEMSpec, env) -> np.ndarray:
    """``E[v v^T]`` for ``v = (Y, X)`` in environment ``env``."""
    S = spec.noise_cov + spec.shift_cov(env)
    return sum(pi * T @ S @ T.T for pi, T in zip(spec.probs, spec.transfers))


def population_moments(spec: SEMSpec, env) -> EnvironmentMoments:
    S = second_moment_matrix(spec, env)
    return EnvironmentMoments(G=S[1:, 1:], Z=S[1:, 0], g_Y=float(S[0, 0]), n=None)


def strata_orthogonality(spec: SEMSpec, env, n: int, seed: int | None = None) -> list[float]:
    """Largest |z-score| of the mean of ``eps A^T`` within each ``B`` stratum.

    Values of a few units are consistent with conditional orthogonality.
    """
    _, lat = sample_environment(spec, env, n, seed, return_latent=True)
    scores = []
    for l in range(len(spec.B)):
        rows = lat.component == l
        nl = int(rows.sum())
        if nl < 2:
            continue
        prod = lat.noise[rows][:, :, None] * lat.shift[rows][:, None, :]
        mean = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / np.sqrt(nl)
        z = np.divide(np.abs(mean), se, out=np.zeros_like(mean), where=se > 0)
        scores.append(float(z.max()))
    return scores


# -- nonlinear embedding ------------------------------------------------

@dataclass
class NonlinearEmbedding:
    """Per-draw matrices with ``(I - B) D = C``.

    ``D[u]`` stacks the nonlinear solutions of every environment as columns.
    """

    C: np.ndarray
    D: np.ndarray
    B: np.ndarray
    rejected: int
    max_reconstruction_error: float


def solve_fixed_point(f, shift, eta, damping=0.5, max_iter=500, tol=1e-10, v0=None):
    """Solve ``v = f(v + shift) + eta`` by damped iteration."""
    v = np.array(eta, dtype=float) if v0 is None else np.array(v0, dtype=float)
    for _ in range(max_iter):
        nxt = (1.0 - damping) * v + damping * (np.asarray(f(v + shift), dtype=float) + eta)
        if np.max(np.abs(nxt - v)) <= tol * (1.0 + np.max(np.abs(nxt))):
            v = nxt
            if np.max(np.abs(np.asarray(f(v + shift)) + eta - v)) <= 1e-8 * (1.0 + np.max(np.abs(v))):
                return v
        v = nxt
    raise FixedPointDivergence(f"no fixed point within {max_iter} iterations")


def embedding_design(p: int) -> np.ndarray:
    """``C`` with columns ``eps, eps + A_1, ..., eps + A_p`` for ``eps = e_1`` and ``A_i = e_{i+1}``."""
    d = p + 1
    C = np.zeros((d, d))
    C[0, :] = 1.0
    for i in range(1, d):
        C[i, i] = 1.0
    return C


def embed_nonlinear(
    f: Callable[[np.ndarray], np.ndarray],
    shift_values: Sequence,
    noise_sampler: Callable[[np.random.Generator], np.ndarray],
    n: int,
    p: int,
    seed: int = 0,
    det_tol: float = 1e-10,
    max_rejections: int = 10_000,
    damping: float = 0.5,
) -> NonlinearEmbedding:
    """Random-``B`` linear representation of up to ``p + 1`` nonlinear environments.

    ``shift_values`` holds at most ``p`` shifts (fixed vectors or callables
    taking a generator); the observational environment is implicit. Missing
    environments up to ``p + 1`` are filled with unshifted systems driven by
    independent noise so that ``D`` is square. ``noise_sampler(rng)`` returns
    one noise vector of length ``p + 1``.
    """
    d = p + 1
    if len(shift_values) > p:
        raise ValueError(f"at most {p} shifted environments can be embedded, got {len(shift_values)}")
    rng = np.random.default_rng(seed)
    C = embedding_design(p)
    Ds, Bs = [], []
    rejected = 0
    worst = 0.0
    while len(Ds) < n:
        cols = []
        for e in range(d):
            if e == 0 or e > len(shift_values):
                a = np.zeros(d)
            else:
                sv = shift_values[e - 1]
                a = np.asarray(sv(rng) if callable(sv) else sv, dtype=float)
            eta = np.asarray(noise_sampler(rng), dtype=float)
            cols.append(solve_fixed_point(f, a, eta, damping=damping))
        D = np.column_stack(cols)
        if abs(np.linalg.det(D)) <= det_tol * max(1.0, np.abs(D).max()) ** d:
            rejected += 1
            if rejected > max_rejections:
                raise SingularD(f"{rejected} singular draws of D")
            continue
        B = np.eye(d) - C @ np.linalg.inv(D)
        recon = np.linalg.solve(np.eye(d) - B, C)
        worst = max(worst, float(np.max(np.abs(recon - D)) / max(1.0, np.abs(D).max())))
        Ds.append(D)
        Bs.append(B)
    return NonlinearEmbedding(C=C, D=np.array(Ds), B=np.array(Bs), rejected=rejected, max_reconstruction_error=worst)
