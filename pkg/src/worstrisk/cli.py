"""Command-line entry point: simulate, estimate, sweep, validate, oracle-check.

Exit codes: 0 ok, 2 configuration error, 3 degenerate estimation, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import oracle
from .estimator import FORMAT_VERSION, EstimatorConfig, NoCandidate, minimize_worst_risk
from .moments import (
    EnvironmentMoments,
    NonFiniteInput,
    estimate_moments,
    load_moments,
    read_sample_csv,
    write_sample_csv,
)
from .polyalg import DegenerateSeparation
from .risk import WorstRiskObjective, gamma_to_tau, worst_risk
from .semgen import SEMSpec, SpecError, env_name, load_spec, population_moments, sample_environment

log = logging.getLogger("worstrisk")

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_IO = 0, 2, 3, 4
DEFAULT_LADDER = (100, 1000, 10_000, 100_000)


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    command: str
    spec_path: Path | None = None
    data: Path | None = None
    gammas: tuple[float, ...] = (1.0,)
    root_mode: str = "exact"
    c_n: int = 60
    seed: int | None = None
    n: int | None = None
    ladder: tuple[int, ...] = DEFAULT_LADDER
    out: Path | None = None
    step: float = 1e-3

    def __post_init__(self):
        if not self.gammas:
            raise ConfigError("gamma-grid", "must not be empty")
        if any(not math.isfinite(g) or g < 0 for g in self.gammas):
            raise ConfigError("gamma", "values must be finite and non-negative")
        if any(b <= a for a, b in zip(self.gammas, self.gammas[1:])):
            raise ConfigError("gamma-grid", "must be strictly ascending")
        if self.c_n < 1:
            raise ConfigError("cn", "must be a positive integer")
        if any(n < 1 for n in self.ladder):
            raise ConfigError("ladder", "sample sizes must be positive")

    def estimator_config(self, gamma: float) -> EstimatorConfig:
        return EstimatorConfig(gamma=gamma, root_mode=self.root_mode, c_n=self.c_n)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _env_sort_key(name: str):
    return (0, 0) if name == "O" else (1, int(name[1:]))


def load_inputs(data: Path) -> tuple[list[EnvironmentMoments], EnvironmentMoments, dict[str, str]]:
    """Moments of ``O`` and ``A1..Ak`` from a CSV directory or a moments JSON file.

    Also returns the sha256 of every file read.
    """
    if data.is_dir():
        files = {}
        for path in sorted(data.glob("env_*.csv")):
            name = path.stem.removeprefix("env_")
            if re.fullmatch(r"O|A[1-9]\d*", name):
                files[name] = path
        moments = {name: estimate_moments(read_sample_csv(path, name)) for name, path in files.items()}
        hashes = {path.name: _sha256(path) for path in files.values()}
    elif data.is_file():
        moments = load_moments(data)
        hashes = {data.name: _sha256(data)}
    else:
        raise FileNotFoundError(f"{data} does not exist")
    if "O" not in moments:
        raise ConfigError("data", "observational environment O is missing")
    names = sorted((m for m in moments if m != "O"), key=_env_sort_key)
    if not names:
        raise ConfigError("data", "need at least one shifted environment A1..Ak")
    expected = [env_name(i) for i in range(1, len(names) + 1)]
    if names != expected:
        raise ConfigError("data", f"shifted environments must be {','.join(expected)}, got {','.join(names)}")
    return [moments[m] for m in names], moments["O"], hashes


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _spec_and_seed(cfg: RunConfig) -> tuple[SEMSpec, int]:
    if cfg.spec_path is None:
        raise ConfigError("spec", "required")
    spec = load_spec(cfg.spec_path)
    return spec, spec.seed if cfg.seed is None else cfg.seed


def cmd_simulate(cfg: RunConfig) -> int:
    spec, seed = _spec_and_seed(cfg)
    if cfg.n is None or cfg.n < 1:
        raise ConfigError("n", "a positive sample size is required")
    if cfg.out is None:
        raise ConfigError("out", "an output directory is required")
    cfg.out.mkdir(parents=True, exist_ok=True)
    files = {}
    for i in range(spec.k + 1):
        path = cfg.out / f"env_{env_name(i)}.csv"
        write_sample_csv(path, sample_environment(spec, i, cfg.n, seed=seed))
        files[path.name] = _sha256(path)
    _write_json(
        cfg.out / "manifest.json",
        {
            "format_version": FORMAT_VERSION,
            "command": "simulate",
            "seed": seed,
            "n": cfg.n,
            "spec_path": str(cfg.spec_path),
            "spec_sha256": spec.digest(),
            "files": files,
        },
    )
    log.info("wrote %d environments of %d rows to %s", spec.k + 1, cfg.n, cfg.out)
    return EXIT_OK


def cmd_estimate(cfg: RunConfig) -> int:
    if cfg.data is None:
        raise ConfigError("data", "required")
    shifted, obs, hashes = load_inputs(cfg.data)
    gamma = cfg.gammas[0]
    ecfg = cfg.estimator_config(gamma)
    obj = WorstRiskObjective.from_moments(shifted, obs, gamma)
    status, code = "ok", EXIT_OK
    try:
        _, report = minimize_worst_risk(obj, ecfg)
    except NoCandidate as exc:
        report, status, code = exc.report, "no_candidate", EXIT_DEGENERATE
    payload = report.to_dict()
    payload.update(status=status, command="estimate", inputs=hashes, gamma=gamma, tau=gamma_to_tau(gamma), k=obj.k, p=obj.p)
    if report.beta is not None:
        payload["active"] = [i + 1 for i in worst_risk(obj, report.beta)[1]]
    if cfg.out is not None:
        _write_json(cfg.out, payload)
    else:
        json.dump(payload, sys.stdout, indent=2, default=_json_default)
        sys.stdout.write("\n")
    return code


def sweep_rows(shifted, obs, cfg: RunConfig) -> list[dict]:
    rows = []
    for gamma in cfg.gammas:
        obj = WorstRiskObjective.from_moments(shifted, obs, gamma)
        row = {"gamma": gamma, "tau": gamma_to_tau(gamma)}
        try:
            beta, report = minimize_worst_risk(obj, cfg.estimator_config(gamma))
        except (NoCandidate, DegenerateSeparation, ArithmeticError) as exc:
            row.update(beta=[math.nan] * obj.p, f=math.nan, active="", status=type(exc).__name__)
        else:
            active = worst_risk(obj, beta)[1]
            row.update(beta=list(beta), f=report.objective, active=" ".join(str(i + 1) for i in active), status="ok")
        rows.append(row)
    return rows


def is_nondecreasing(values: Sequence[float], rtol: float = 1e-9) -> bool:
    vals = [v for v in values if math.isfinite(v)]
    return all(b >= a - rtol * (1 + abs(a)) for a, b in zip(vals, vals[1:]))


def cmd_sweep(cfg: RunConfig) -> int:
    if cfg.data is None:
        raise ConfigError("data", "required")
    shifted, obs, _ = load_inputs(cfg.data)
    rows = sweep_rows(shifted, obs, cfg)
    p = obs.p
    header = ["gamma", "tau"] + [f"beta{u + 1}" for u in range(p)] + ["f", "active", "status"]
    lines = [[r["gamma"], r["tau"], *r["beta"], r["f"], r["active"], r["status"]] for r in rows]
    _emit_csv(cfg.out, header, lines)
    mono = is_nondecreasing([r["f"] for r in rows])
    log.info("f(beta_gamma) nondecreasing in gamma: %s", mono)
    print(f"monotone_f={'yes' if mono else 'no'}", file=sys.stderr)
    return EXIT_OK


def _emit_csv(out: Path | None, header, rows) -> None:
    def fmt(x):
        return repr(float(x)) if isinstance(x, (float, np.floating)) else x

    if out is None:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows([[fmt(x) for x in r] for r in rows])
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows([[fmt(x) for x in r] for r in rows])


def validation_ladder(spec: SEMSpec, gamma: float, ladder: Sequence[int], seed: int, ecfg: EstimatorConfig):
    """``[(n, beta_hat(n), dist to beta_pop)]`` and the population minimizer.

    Each rung uses fresh samples keyed on ``(seed, n)``.
    """
    pop = [population_moments(spec, i) for i in range(spec.k + 1)]
    beta_pop, _ = minimize_worst_risk(WorstRiskObjective.from_moments(pop[1:], pop[0], gamma), ecfg)
    rows = []
    for n in ladder:
        mom = [estimate_moments(sample_environment(spec, i, n, seed=(seed, n))) for i in range(spec.k + 1)]
        beta, _ = minimize_worst_risk(WorstRiskObjective.from_moments(mom[1:], mom[0], gamma), ecfg)
        rows.append((n, beta, float(np.linalg.norm(beta - beta_pop))))
    return rows, beta_pop


def cmd_validate(cfg: RunConfig) -> int:
    spec, seed = _spec_and_seed(cfg)
    gamma = cfg.gammas[0]
    rows, beta_pop = validation_ladder(spec, gamma, cfg.ladder, seed, cfg.estimator_config(gamma))
    header = ["n"] + [f"beta{u + 1}" for u in range(spec.p)] + ["dist"]
    _emit_csv(cfg.out, header, [[n, *b, d] for n, b, d in rows])
    print(f"beta_population={' '.join(f'{x:.12g}' for x in beta_pop)}", file=sys.stderr)
    if len(rows) > 1:
        dists = [d for _, _, d in rows]
        trend = all(b < a for a, b in zip(dists, dists[1:]))
        print(f"strictly_decreasing={'yes' if trend else 'no'}", file=sys.stderr)
    return EXIT_OK


def cmd_oracle_check(cfg: RunConfig) -> int:
    """Compare the estimator with the lattice oracle and the sphere sup."""
    if cfg.data is None:
        raise ConfigError("data", "required")
    shifted, obs, hashes = load_inputs(cfg.data)
    gamma = cfg.gammas[0]
    obj = WorstRiskObjective.from_moments(shifted, obs, gamma)
    if obj.p > 3:
        raise ConfigError("data", "oracle-check supports p <= 3")
    try:
        beta, report = minimize_worst_risk(obj, cfg.estimator_config(gamma))
    except NoCandidate:
        return EXIT_DEGENERATE
    grid = oracle.certified_grid_minimize(obj, cfg.step)
    payload = {
        "format_version": FORMAT_VERSION,
        "command": "oracle-check",
        "inputs": hashes,
        "gamma": gamma,
        "beta_hat": beta,
        "f_hat": report.objective,
        "beta_grid": grid.beta,
        "f_grid": grid.value,
        "grid_step": cfg.step,
        "grid_radius": grid.radius,
        "heuristic_radius": oracle.heuristic_radius(obj),
        "sup_norm_gap": float(np.max(np.abs(beta - grid.beta))),
        "within_2_step": bool(np.max(np.abs(beta - grid.beta)) <= 2 * cfg.step),
        "f_hat_le_f_grid": bool(report.objective <= grid.value + 1e-12 * (1 + abs(grid.value))),
        "sphere_sup": oracle.sphere_max_risk(obj, beta, 1000, seed=0 if cfg.seed is None else cfg.seed),
    }
    if cfg.out is not None:
        _write_json(cfg.out, payload)
    else:
        json.dump(payload, sys.stdout, indent=2, default=_json_default)
        sys.stdout.write("\n")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "oracle-check": cmd_oracle_check,
}


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(float(x)) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="worstrisk", description="Worst-case risk minimization across shifted environments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=False, spec=False, grid=False):
        if spec:
            p.add_argument("--spec", type=Path, required=True, help="SEM spec (JSON or YAML)")
        if data:
            p.add_argument("--data", type=Path, required=True, help="directory of env_*.csv or a moments JSON file")
        if grid:
            p.add_argument("--gamma-grid", type=_float_list, required=True, help="ascending gammas, comma separated")
        else:
            p.add_argument("--gamma", type=float, default=1.0)
        p.add_argument("--root-mode", choices=("exact", "bisect"), default="exact")
        p.add_argument("--cn", type=int, default=60, help="bisection budget in bisect mode")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=Path, default=None)

    s = sub.add_parser("simulate", help="draw samples from an SEM spec")
    common(s, spec=True)
    s.add_argument("--n", type=int, required=True)
    common(sub.add_parser("estimate", help="estimate the worst-risk minimizer"), data=True)
    common(sub.add_parser("sweep", help="estimate over a gamma grid"), data=True, grid=True)
    v = sub.add_parser("validate", help="consistency ladder against population moments")
    common(v, spec=True)
    v.add_argument("--ladder", type=_int_list, default=DEFAULT_LADDER)
    o = sub.add_parser("oracle-check", help="compare with brute-force oracles")
    common(o, data=True)
    o.add_argument("--step", type=float, default=1e-3)
    return ap


def config_from_args(args: argparse.Namespace) -> RunConfig:
    gammas = args.gamma_grid if getattr(args, "gamma_grid", None) is not None else (args.gamma,)
    return RunConfig(
        command=args.command,
        spec_path=getattr(args, "spec", None),
        data=getattr(args, "data", None),
        gammas=tuple(gammas),
        root_mode=args.root_mode,
        c_n=args.cn,
        seed=args.seed,
        n=getattr(args, "n", None),
        ladder=tuple(getattr(args, "ladder", DEFAULT_LADDER)),
        out=args.out,
        step=getattr(args, "step", 1e-3),
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except (SpecError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonFiniteInput, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, NonFiniteInput) else EXIT_CONFIG
    except (DegenerateSeparation, ArithmeticError, NoCandidate) as exc:
        print(f"degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
