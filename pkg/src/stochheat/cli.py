"""Command-line front end: allocate | simulate | converge.

Configuration comes from a flat key=value file, with individual overrides
via repeatable --set KEY=VALUE flags (and dedicated flags for seed,
workers and the output directory).  Every run is fully determined by its
configuration and seed; convergence runs emit a CSV of per-budget rows
plus a JSON summary that parses back into the originating configuration.
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .allocation import plan_nonuniform, plan_uniform, rate_exponents
from .experiment import ConvergenceRecord, convergence_study
from .nemytskij import Nonlinearity
from .reference import ReferenceConfig
from .scheme import run_scheme
from .spectral import CovarianceProfile, InitialValue, validate_profile


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "d": (int, 1),
    "gamma": (float, None),
    "L": (str, "const"),
    "g": (str, "one"),
    "xi": (str, "zero"),
    "regime": (str, "nonuniform"),
    "N": (int, 0),
    "N_list": (str, ""),
    "R": (int, 200),
    "seed": (int, 0),
    "rho": (int, 16),
    "I_ref": (float, 0.0),
    "M_s": (int, 0),
    "workers": (int, 1),
    "time_quad": (int, 1),
    "slope_tol": (float, 0.1),
    "snapshot_times": (str, "0,0.25,0.5,0.75,1"),
    "out": (str, ""),
}


@dataclass
class RunConfig:
    d: int = 1
    gamma: float = None
    L: str = "const"
    g: str = "one"
    xi: str = "zero"
    regime: str = "nonuniform"
    N: int = 0
    N_list: str = ""
    R: int = 200
    seed: int = 0
    rho: int = 16
    I_ref: float = 0.0
    M_s: int = 0
    workers: int = 1
    time_quad: int = 1
    slope_tol: float = 0.1
    snapshot_times: str = "0,0.25,0.5,0.75,1"
    out: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        cfg = RunConfig()
        problems = []
        for key, value in data.items():
            if key not in _SCHEMA:
                problems.append(f"unknown key {key!r}")
                continue
            typ, _ = _SCHEMA[key]
            try:
                setattr(cfg, key, typ(value))
            except (TypeError, ValueError):
                problems.append(f"key {key!r}: cannot parse {value!r} as {typ.__name__}")
        if problems:
            raise ConfigError("; ".join(problems))
        return cfg


def read_config_file(path) -> dict:
    data = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected KEY = VALUE")
        key, value = (part.strip() for part in line.split("=", 1))
        data[key] = value
    return data


def build_profile(cfg: RunConfig) -> CovarianceProfile:
    spec = cfg.L.strip()
    if spec in ("const", "1", ""):
        power = 0.0
    elif spec.startswith("logpow:"):
        power = float(spec.split(":", 1)[1])
    else:
        raise ConfigError(f"L must be 'const' or 'logpow:<p>', got {spec!r}")
    return CovarianceProfile(gamma=cfg.gamma, log_power=power)


def build_nonlinearity(cfg: RunConfig) -> Nonlinearity:
    spec = cfg.g.strip()
    if spec in ("one", "1"):
        return Nonlinearity.constant(1.0)
    if spec == "zero":
        return Nonlinearity.constant(0.0)
    if spec.startswith("const:"):
        return Nonlinearity.constant(float(spec.split(":", 1)[1]))
    if spec == "identity":
        return Nonlinearity.identity()
    if spec == "sin":
        return Nonlinearity.sine()
    if spec == "tanh":
        return Nonlinearity.tanh()
    if spec.startswith("table:"):
        path = spec.split(":", 1)[1]
        rows = np.loadtxt(path, delimiter=",", ndmin=2)
        return Nonlinearity.from_table(rows[:, 0], rows[:, 1])
    raise ConfigError(f"unrecognized nonlinearity spec {spec!r}")


def build_initial_value(cfg: RunConfig) -> InitialValue:
    spec = cfg.xi.strip()
    if spec == "zero":
        return InitialValue.zero()
    if spec.startswith("parabola"):
        amp = float(spec.split(":", 1)[1]) if ":" in spec else 1.0
        if cfg.d == 1:
            return InitialValue.sampled(lambda u: amp * 4.0 * u * (1.0 - u))
        return InitialValue.sampled(
            lambda u, v: amp * 16.0 * u * (1.0 - u) * v * (1.0 - v)
        )
    if spec.startswith("spectral:"):
        coeffs = {}
        for item in spec.split(":", 1)[1].split(","):
            label, value = item.split("=")
            coords = tuple(int(c) for c in label.strip().split("-"))
            coeffs[coords] = float(value)
        return InitialValue.spectral(coeffs)
    raise ConfigError(f"unrecognized initial value spec {spec!r}")


def validate_config(cfg: RunConfig, need_budget: bool, need_list: bool) -> List[str]:
    problems = []
    if cfg.gamma is None:
        problems.append("gamma is required")
    elif cfg.gamma < cfg.d:
        problems.append(f"gamma={cfg.gamma} must be >= d={cfg.d}")
    if cfg.d < 1 or cfg.d > 2:
        problems.append("d must be 1 or 2 for simulation runs")
    if cfg.regime not in ("nonuniform", "uniform", "both"):
        problems.append("regime must be nonuniform, uniform or both")
    if need_budget and cfg.N < 1:
        problems.append("N must be a positive integer")
    if need_list:
        try:
            budgets = parse_int_list(cfg.N_list)
        except ValueError:
            budgets = []
        if len(budgets) < 4:
            problems.append("N_list needs at least 4 comma-separated budgets")
    if cfg.R < 2:
        problems.append("R must be >= 2")
    if cfg.rho < 1:
        problems.append("rho must be >= 1")
    if cfg.workers < 1:
        problems.append("workers must be >= 1")
    if cfg.time_quad < 1:
        problems.append("time_quad must be >= 1")
    if not problems:
        try:
            validate_profile(build_profile(cfg), cfg.d)
            build_nonlinearity(cfg)
            build_initial_value(cfg)
        except (ConfigError, ValueError) as exc:
            problems.append(str(exc))
    return problems


def parse_int_list(text: str) -> List[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def parse_float_list(text: str) -> List[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _mode_label(mode) -> str:
    return "-".join(str(c) for c in mode.coords)


def _plan_for(cfg: RunConfig, regime: str, budget: int):
    profile = build_profile(cfg)
    if regime == "uniform":
        return plan_uniform(profile, cfg.d, budget)
    return plan_nonuniform(profile, cfg.d, budget)


def cmd_allocate(cfg: RunConfig) -> int:
    regime = "uniform" if cfg.regime == "uniform" else "nonuniform"
    plan = _plan_for(cfg, regime, cfg.N)
    exps = rate_exponents(plan.profile, cfg.d)
    print(f"regime: {plan.regime}")
    print(f"I = {plan.inner_radius:.6g}   J = {plan.outer_radius:.6g}")
    print(f"{'mode':>8} {'|i|_2':>10} {'lambda_i':>14} {'n_i':>8}")
    for mode in plan.modes:
        print(
            f"{_mode_label(mode):>8} {mode.norm2:>10.6g} {mode.lam:>14.8g} "
            f"{plan.steps[mode]:>8d}"
        )
    print(f"total evaluations: {plan.total_evals}")
    print(f"predicted error: {plan.predicted_error:.6g}")
    print(f"exponents: nonuniform {exps.alpha_star:.6g}, uniform {exps.alpha_uniform:.6g}")
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "allocation.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["mode", "norm2", "lambda", "steps"])
            for mode in plan.modes:
                writer.writerow([_mode_label(mode), mode.norm2, mode.lam, plan.steps[mode]])
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    times = parse_float_list(cfg.snapshot_times)
    if any(not 0.0 <= t <= 1.0 for t in times):
        raise ConfigError("snapshot times must lie in [0,1]")
    times = sorted(times)
    regime = "uniform" if cfg.regime == "uniform" else "nonuniform"
    plan = _plan_for(cfg, regime, cfg.N)
    run = run_scheme(
        plan,
        build_initial_value(cfg),
        build_nonlinearity(cfg),
        cfg.seed,
        [0],
        resolution=cfg.M_s or None,
    )
    states = run.sample(times)
    header = ["t"] + [_mode_label(m) for m in plan.state_modes]
    rows = [[f"{st.t:.17g}"] + [f"{v:.17g}" for v in st.coefficients[0]] for st in states]
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "simulate.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(row))
    return 0


def _study_payload(record: ConvergenceRecord, tol: float) -> dict:
    ok = abs(record.fit.slope + record.theory_exponent) <= tol
    return {
        "slope": record.fit.slope,
        "ci95": record.fit.ci95,
        "theory_exponent": record.theory_exponent,
        "dropped": record.fit.dropped,
        "pass": bool(ok),
        "rows": [
            {
                "N": r.budget,
                "regime": r.regime,
                "gamma": r.gamma,
                "d": r.d,
                "error": r.error,
                "stderr": r.stderr,
                "total_evals": r.total_evals,
                "wall_ms": r.wall_ms,
                "excluded": r.excluded,
            }
            for r in record.rows
        ],
    }


def cmd_converge(cfg: RunConfig) -> int:
    budgets = parse_int_list(cfg.N_list)
    profile = build_profile(cfg)
    g = build_nonlinearity(cfg)
    xi = build_initial_value(cfg)
    ref = ReferenceConfig(rho=cfg.rho, inner_radius=cfg.I_ref or None)
    regimes = ["nonuniform", "uniform"] if cfg.regime == "both" else [cfg.regime]
    studies = {}
    for regime in regimes:
        record = convergence_study(
            profile,
            cfg.d,
            regime,
            g,
            xi,
            budgets,
            cfg.R,
            cfg.seed,
            ref=ref,
            time_quad=cfg.time_quad,
            workers=cfg.workers,
        )
        studies[regime] = record
        print(
            f"{regime}: slope {record.fit.slope:+.4f} (ci95 {record.fit.ci95:.4f}), "
            f"theory {-record.theory_exponent:+.4f}"
        )

    payload = {
        "config": cfg.to_dict(),
        "studies": {name: _study_payload(rec, cfg.slope_tol) for name, rec in studies.items()},
    }
    payload["pass"] = all(s["pass"] for s in payload["studies"].values())
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "converge.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["N", "regime", "gamma", "d", "error", "stderr", "total_evals", "wall_ms"]
            )
            for record in studies.values():
                for r in record.rows:
                    writer.writerow(
                        [r.budget, r.regime, r.gamma, r.d,
                         f"{r.error:.17g}", f"{r.stderr:.17g}", r.total_evals,
                         f"{r.wall_ms:.3f}"]
                    )
        with open(out / "summary.json", "w") as fh:
            json.dump(payload, fh, indent=2)
    else:
        print(json.dumps(payload, indent=2))
    return 0 if payload["pass"] else 1


def parse_summary(path):
    """Re-parse an emitted JSON summary into (RunConfig, results)."""
    payload = json.loads(Path(path).read_text())
    cfg = RunConfig.from_dict(payload["config"])
    return cfg, payload["studies"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochheat",
        description="Spectral implicit-Euler solver with per-mode time steps",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("allocate", "simulate", "converge"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="master seed (64-bit)")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override any config key",
        )
    return parser


def load_config(args) -> RunConfig:
    data = {}
    if args.config:
        data.update(read_config_file(args.config))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        data[key.strip()] = value.strip()
    for key in ("seed", "workers", "out"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        problems = validate_config(
            cfg,
            need_budget=args.command in ("allocate", "simulate"),
            need_list=args.command == "converge",
        )
        if problems:
            raise ConfigError("invalid configuration: " + "; ".join(problems))
        if args.command == "allocate":
            return cmd_allocate(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_converge(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
