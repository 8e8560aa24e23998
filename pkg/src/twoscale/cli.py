"""Command-line entry point: ``python -m twoscale <command> ...``.

Commands: ``simulate``, ``estimate``, ``theory``, ``experiment``, ``verify``.
Each accepts ``--config PATH`` (flat ``key = value`` file whose keys are the
long option names, underscores or dashes), ``--seed``, ``--threads``,
``--out`` and ``--format {csv,txt}``; flags override the config file.

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure,
4 acceptance-check failure (``verify``).
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from .asymptotics import (
    asymptotic_sigma,
    dense_cov_qq,
    estimator_cov,
    fd_predictions,
    finite_cov_qq,
    torus_cov_qq,
)
from .bench import DEFAULT_SEED, EXPERIMENTS, ESTIMATORS, ExperimentConfig, render_csv, render_text, run_experiment
from .errors import (
    ConfigError,
    DegenerateFieldError,
    MaskError,
    NumericalError,
    ParameterError,
    SingularityError,
    SizeError,
    TwoScaleError,
)
from .estimate import laplacian_estimate, mom_estimate, reml_estimate, whittle_estimate
from .fieldsim import JitterSpec, SimPlan, read_csv, read_rsf1, simulate, write_csv, write_rsf1
from .gcmodel import MaternParams, ModelSpec, PowerLawParams
from .lattice import TRIM_MODES, quadratic_variations

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# option plumbing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file (flags override)")
    p.add_argument("--seed", type=int, help=f"master seed, unsigned 64-bit (default {DEFAULT_SEED})")
    p.add_argument("--threads", type=int, help="worker threads (default 1)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--format", choices=("csv", "txt"), help="output format (default txt on stdout)")


def _config_pairs(path: Optional[str]):
    if not path:
        return []
    try:
        with open(path, encoding="utf-8") as fh:
            return ExperimentConfig.parse_pairs(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def _merge(args, defaults: Dict[str, object], lists=()):
    """Fill unset options from the config file, then from ``defaults``."""
    pairs = _config_pairs(args.config)
    conf: Dict[str, object] = {}
    for k, v in pairs:
        k = k.replace("-", "_")
        if k in lists:
            conf.setdefault(k, []).append(v)
        else:
            conf[k] = v
    for k, d in defaults.items():
        if getattr(args, k, None) is not None:
            continue
        if k in conf:
            typ = type(d) if d is not None else str
            try:
                val = [typ(x) for x in conf[k]] if k in lists else typ(conf[k])
            except ValueError as e:
                raise ConfigError(f"bad config value for {k!r}: {conf[k]!r}") from e
            setattr(args, k, val)
        else:
            setattr(args, k, d)
    unknown = set(conf) - set(defaults) - {"config"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return args


def _emit(args, name: str, columns: List[str], rows: List[dict]) -> None:
    text = render_csv(columns, rows) if args.format == "csv" else render_text(columns, rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        ext = "csv" if args.format == "csv" else "txt"
        with open(os.path.join(args.out, f"{name}.{ext}"), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _model(args):
    if args.model == "powerlaw":
        return PowerLawParams(args.phi1, args.phi2)
    if args.model == "matern":
        return MaternParams(args.sigma2, args.nu, args.rho)
    raise ConfigError("model must be powerlaw or matern")


# ---------------------------------------------------------------------------
# commands

_SIM_DEFAULTS = dict(model="powerlaw", n=32, phi1=1.0, phi2=0.5, sigma2=1.0, nu=0.5, rho=1.0,
                     mode="anchored", m=1, domain="ID", replicates=1, c=0.0,
                     seed=DEFAULT_SEED, threads=1, out=None, format="csv")


def cmd_simulate(args) -> int:
    _merge(args, _SIM_DEFAULTS)
    model = _model(args)
    spec = ModelSpec.fd(model, args.n) if args.domain == "FD" else ModelSpec(model)
    jit = JitterSpec(args.c) if args.mode == "jittered" else None
    if args.replicates < 1:
        raise ConfigError("replicates must be >= 1")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    for r in range(args.replicates):
        plan = SimPlan(spec, args.n, args.mode, args.seed, r, args.m, jit)
        s = simulate(plan)
        if args.out:
            base = os.path.join(args.out, f"field_{r:04d}")
            if args.format == "csv":
                write_csv(base + ".csv", s.values)
            else:
                np.savetxt(base + ".txt", s.values, fmt="%r")
            write_rsf1(base + ".rsf1", s)
        else:
            if args.format == "csv":
                sys.stdout.write("t1,t2,value\n")
                for (i, j), x in np.ndenumerate(s.values):
                    sys.stdout.write(f"{i},{j},{float(x)!r}\n")
            else:
                np.savetxt(sys.stdout, s.values, fmt="%.10g")
    return EXIT_OK


def _load_field(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise ConfigError(f"no such file: {path}")
    if path.endswith(".rsf1"):
        return read_rsf1(path)[0]
    if path.endswith(".csv"):
        return read_csv(path)
    try:
        return np.loadtxt(path, ndmin=2)
    except ValueError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e


_EST_DEFAULTS = dict(estimator=["bilinear"], m=1, trim="per_step", domain="ID",
                     seed=DEFAULT_SEED, threads=1, out=None, format="txt")
_EST_COLUMNS = ["file", "estimator", "n", "m", "domain", "phi2_hat", "phi1_hat", "log_phi1_hat", "in_domain",
                "phi1_hat_fd_unstabilized"]


def cmd_estimate(args) -> int:
    _merge(args, {**_EST_DEFAULTS, "estimator": None}, lists=("estimator",))
    ests = args.estimator or ["bilinear"]
    for e in ests:
        if e not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {e!r}; choose from {ESTIMATORS}")
    if args.trim not in TRIM_MODES:
        raise ConfigError(f"trim must be one of {TRIM_MODES}")
    rows = []
    for path in args.fields:
        x = _load_field(path)
        n = x.shape[0]
        for e in ests:
            if e == "bilinear":
                est = mom_estimate(quadratic_variations(x, args.m, args.trim), args.m, args.domain)
                p2, p1 = est.phi2_hat, est.phi1_hat
            elif e == "laplacian":
                est = laplacian_estimate(x)
                p2, p1 = est.phi2_hat, est.phi1_hat
            elif e == "whittle":
                w = whittle_estimate(x, args.m)
                p2, p1 = w.phi2_hat, w.phi1_hat
            else:
                w = reml_estimate(x, args.m)
                p2, p1 = w.phi2_hat, w.phi1_hat
            row = {"file": path, "estimator": e, "n": n, "m": args.m, "domain": args.domain, "phi2_hat": p2,
                   "phi1_hat": p1 if p1 is not None else float("nan"),
                   "log_phi1_hat": math.log(p1) if p1 else float("nan"), "in_domain": p1 is not None,
                   "phi1_hat_fd_unstabilized": float("nan")}
            if args.domain == "FD" and p1:
                row["phi1_hat_fd_unstabilized"] = (n * n) ** p2 * p1
            rows.append(row)
    _emit(args, "estimates", _EST_COLUMNS, rows)
    return EXIT_OK


_TH_DEFAULTS = dict(n=40, phi1=1.0, phi2=0.5, m=1, kind="finite", trim="per_step", alias_radius=6,
                    seed=DEFAULT_SEED, threads=1, out=None, format="txt")


def cmd_theory(args) -> int:
    _merge(args, _TH_DEFAULTS)
    model = PowerLawParams(args.phi1, args.phi2)
    if args.kind == "finite":
        pred = finite_cov_qq(args.n, args.m, model, args.trim)
    elif args.kind == "dense":
        C = dense_cov_qq(args.n, args.m, model, args.trim)
        ref = finite_cov_qq(args.n, args.m, model, args.trim)
        pred = type(ref)(C, ref.q1, ref.q2, args.m, "finite-lattice", args.n, ref.scale_size, args.trim)
    elif args.kind == "torus":
        pred = torus_cov_qq(args.n, args.m, model, args.alias_radius)
    elif args.kind == "asymptotic":
        pred = asymptotic_sigma(args.m, model)
    else:
        raise ConfigError("kind must be finite, dense, torus or asymptotic")
    O, s = estimator_cov(pred)
    S = pred.sigma_qq
    rows = [
        {"quantity": "q1", "value": pred.q1, "kind": pred.kind},
        {"quantity": "q2", "value": pred.q2, "kind": pred.kind},
        {"quantity": "Sigma_11", "value": S[0, 0], "kind": pred.kind},
        {"quantity": "Sigma_12", "value": S[0, 1], "kind": pred.kind},
        {"quantity": "Sigma_22", "value": S[1, 1], "kind": pred.kind},
        {"quantity": "Omega_11", "value": O[0, 0] * s.scale, "kind": pred.kind},
        {"quantity": "Omega_12", "value": O[0, 1] * s.scale, "kind": pred.kind},
        {"quantity": "Omega_22", "value": O[1, 1] * s.scale, "kind": pred.kind},
        {"quantity": "scaled_sd_log_phi1", "value": s.sd_log_phi1, "kind": pred.kind},
        {"quantity": "scaled_sd_phi2", "value": s.sd_phi2, "kind": pred.kind},
        {"quantity": "corr", "value": s.corr, "kind": pred.kind},
        {"quantity": "scale_size", "value": s.scale, "kind": pred.kind},
    ]
    if args.kind != "asymptotic":
        fd = fd_predictions(pred, args.n * args.n)
        rows.append({"quantity": "fd_corr_unstabilized", "value": fd.corr_unstabilized, "kind": pred.kind})
    _emit(args, "theory", ["quantity", "value", "kind"], rows)
    return EXIT_OK


def cmd_experiment(args) -> int:
    pairs = _config_pairs(args.config)
    exp = args.experiment or next((v for k, v in reversed(pairs) if k == "experiment"), None)
    if exp is None:
        raise ConfigError("experiment name required (--experiment or config key)")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; choose from {EXPERIMENTS}")
    cfg = ExperimentConfig.from_pairs(pairs, ExperimentConfig.default(exp))
    flags = []
    for key, val in (("experiment", args.experiment), ("R", args.R), ("seed", args.seed),
                     ("threads", args.threads), ("out", args.out), ("m", args.m), ("trim", args.trim),
                     ("domain", args.domain), ("phi1", args.phi1), ("c", args.c), ("a", args.a)):
        if val is not None:
            flags.append((key, str(val)))
    for key, vals in (("n", args.n), ("param", args.param), ("estimator", args.estimator)):
        flags += [(key, str(v)) for v in (vals or [])]
    cfg = ExperimentConfig.from_pairs(flags, cfg)
    summary = run_experiment(cfg, write=True)
    rows = summary.extra.get("summary_rows", summary.rows) if cfg.experiment in ("fig1", "fig2") else summary.rows
    cols = list(rows[0].keys()) if rows and cfg.experiment in ("fig1", "fig2") else summary.columns
    text = render_csv(cols, rows) if args.format == "csv" else render_text(cols, rows)
    sys.stdout.write(text)
    with open(os.path.join(cfg.out, f"{cfg.experiment}.config"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    return EXIT_NUMERIC if summary.failed else EXIT_OK


def cmd_verify(args) -> int:
    from .checks import CRITERIA, QUICK, run_checks

    _merge(args, dict(seed=DEFAULT_SEED, threads=1, out=None, format="txt", criteria=None, all=False),
           lists=("criteria",))
    nums = list(CRITERIA) if args.all else [int(c) for c in (args.criteria or QUICK)]
    bad = [c for c in nums if c not in CRITERIA]
    if bad:
        raise ConfigError(f"unknown criteria {bad}")
    results = run_checks(nums, seed=args.seed, threads=args.threads)
    rows = [{"criterion": r.number, "name": r.name, "passed": r.passed, "detail": r.detail} for r in results]
    for r in results:
        print(r.summary())
        for line in r.lines:
            print("    " + line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        ext = "csv" if args.format == "csv" else "txt"
        text = render_csv(list(rows[0]), rows) if ext == "csv" else render_text(list(rows[0]), rows)
        with open(os.path.join(args.out, f"verify.{ext}"), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twoscale", description="Two-scale quadratic-variation estimation of "
                                 "power-law random fields: simulation, estimation, theory and experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate fields")
    _common(p)
    p.add_argument("--model", choices=("powerlaw", "matern"))
    p.add_argument("--n", type=int)
    p.add_argument("--phi1", type=float)
    p.add_argument("--phi2", type=float)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--mode", choices=("anchored", "filtered-direct", "matern-direct", "jittered"))
    p.add_argument("--m", type=int)
    p.add_argument("--domain", choices=("ID", "FD"))
    p.add_argument("--replicates", type=int)
    p.add_argument("--c", type=float, help="jitter bound in lattice units")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate (phi1, phi2) from field files (.csv, .rsf1 or text grid)")
    _common(p)
    p.add_argument("fields", nargs="+")
    p.add_argument("--estimator", action="append", choices=ESTIMATORS)
    p.add_argument("--m", type=int)
    p.add_argument("--trim", choices=TRIM_MODES)
    p.add_argument("--domain", choices=("ID", "FD"))
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("theory", help="covariance predictions for (Q1, Q2) and the estimates")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--phi1", type=float)
    p.add_argument("--phi2", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--kind", choices=("finite", "dense", "torus", "asymptotic"))
    p.add_argument("--trim", choices=TRIM_MODES)
    p.add_argument("--alias-radius", dest="alias_radius", type=int)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    _common(p)
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--n", type=int, action="append")
    p.add_argument("--param", type=float, action="append")
    p.add_argument("--estimator", action="append", choices=ESTIMATORS)
    p.add_argument("--R", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--trim", choices=TRIM_MODES)
    p.add_argument("--domain", choices=("ID", "FD"))
    p.add_argument("--phi1", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--a", type=float)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("verify", help="run acceptance checks (exit 4 on failure)")
    _common(p)
    p.add_argument("--criteria", type=int, action="append", help="criterion number (repeatable)")
    p.add_argument("--all", action="store_true", default=None, help="run every criterion, including slow ones")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError, SizeError, MaskError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SingularityError, DegenerateFieldError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except TwoScaleError as e:  # pragma: no cover - all subclasses handled above
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
