"""Second-moment summaries of per-environment samples.

Everything downstream of data ingestion consumes only these summaries, so
empirical and population moments share all estimation code.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

POPULATION = None  # sentinel for ``n`` on exact population moments
PSD_TOL = 1e-10


class NonFiniteInput(ValueError):
    pass


@dataclass(frozen=True)
class EnvironmentSample:
    X: np.ndarray
    Y: np.ndarray
    env_id: str = "O"

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.shape[0] != Y.size:
            raise ValueError(f"{X.shape[0]} covariate rows but {Y.size} targets")
        if Y.size < 1:
            raise ValueError("sample needs at least one observation")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class EnvironmentMoments:
    """``G = E[X X^T]``, ``Z = E[X Y]``, ``g_Y = E[Y^2]``; ``n=None`` marks population values."""

    G: np.ndarray
    Z: np.ndarray
    g_Y: float
    n: int | None = POPULATION

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        Z = np.asarray(self.Z, dtype=float).ravel()
        if G.shape != (Z.size, Z.size):
            raise ValueError(f"G has shape {G.shape}, expected {(Z.size, Z.size)}")
        if not np.allclose(G, G.T, rtol=0, atol=1e-12 * max(1.0, np.abs(G).max())):
            raise ValueError("G is not symmetric")
        G = 0.5 * (G + G.T)
        w, V = np.linalg.eigh(G)
        floor = -PSD_TOL * max(np.trace(G) / G.shape[0], 1e-300)
        if w.min() < floor:
            raise ValueError(f"G is not positive semi-definite (min eigenvalue {w.min():.3e})")
        if w.min() < 0:
            G = (V * np.clip(w, 0, None)) @ V.T
            G = 0.5 * (G + G.T)
        if self.g_Y < 0:
            raise ValueError("g_Y must be non-negative")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "g_Y", float(self.g_Y))

    @property
    def p(self) -> int:
        return self.Z.size

    def scaled(self, s: float) -> "EnvironmentMoments":
        return EnvironmentMoments(s * self.G, s * self.Z, s * self.g_Y, self.n)

    def to_dict(self) -> dict:
        return {
            "G": self.G.ravel().tolist(),
            "Z": self.Z.tolist(),
            "g_Y": self.g_Y,
            "n": "POPULATION" if self.n is None else self.n,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentMoments":
        Z = np.asarray(d["Z"], dtype=float)
        G = np.asarray(d["G"], dtype=float).reshape(Z.size, Z.size)
        n = d.get("n", "POPULATION")
        return cls(G, Z, float(d["g_Y"]), None if n in (None, "POPULATION") else int(n))


def estimate_moments(s: EnvironmentSample) -> EnvironmentMoments:
    """Plug-in moments with divisor ``n``."""
    if not (np.all(np.isfinite(s.X)) and np.all(np.isfinite(s.Y))):
        raise NonFiniteInput(f"environment {s.env_id} contains non-finite entries")
    n = s.n
    G = s.X.T @ s.X / n
    return EnvironmentMoments(
        G=0.5 * (G + G.T),
        Z=s.X.T @ s.Y / n,
        g_Y=float(s.Y @ s.Y) / n,
        n=n,
    )


def combine_plusdelta(env_i: EnvironmentMoments, env_O: EnvironmentMoments, gamma: float):
    """``G_+ + gamma*G_Delta`` and ``Z_+ + gamma*Z_Delta`` for environment ``i``.

    With ``G_+ = G_i + G_O`` and ``G_Delta = G_i - G_O`` this is
    ``(1+gamma) G_i + (1-gamma) G_O`` (likewise for ``Z``).
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if env_i.p != env_O.p:
        raise ValueError("environments have different dimensions")
    Gc = (1 + gamma) * env_i.G + (1 - gamma) * env_O.G
    Zc = (1 + gamma) * env_i.Z + (1 - gamma) * env_O.Z
    return Gc, Zc


# -- file formats ---------------------------------------------------------

def read_sample_csv(path, env_id: str | None = None) -> EnvironmentSample:
    """Read ``x1,...,xp,y`` CSV with a header row."""
    path = Path(path)
    with path.open(newline="") as fh:
        header = next(csv.reader(fh))
    header = [h.strip() for h in header]
    if not header or header[-1] != "y" or any(h != f"x{u + 1}" for u, h in enumerate(header[:-1])):
        raise ValueError(f"{path}: header must be x1,...,xp,y, got {','.join(header)}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: rows have {data.shape[1]} fields, header has {len(header)}")
    return EnvironmentSample(data[:, :-1], data[:, -1], env_id or path.stem.removeprefix("env_"))


def write_sample_csv(path, s: EnvironmentSample) -> None:
    header = ",".join([f"x{u + 1}" for u in range(s.p)] + ["y"])
    np.savetxt(path, np.column_stack([s.X, s.Y]), delimiter=",", header=header, comments="", fmt="%.17g")


def save_moments(path, moments: dict[str, EnvironmentMoments]) -> None:
    payload = {env: m.to_dict() for env, m in moments.items()}
    Path(path).write_text(json.dumps(payload, indent=2))


def load_moments(path) -> dict[str, EnvironmentMoments]:
    raw = json.loads(Path(path).read_text())
    return {env: EnvironmentMoments.from_dict(d) for env, d in raw.items()}
