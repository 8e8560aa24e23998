"""Seeded Monte Carlo harness: experiment configs, per-cell runs, CSV/text output.

Every cell ``(n, parameter)`` draws its fields from its own seed,
``hash64(master_seed, n, parameter bits, estimator-set id)``, so cells can
be added or removed without disturbing the others, and all estimators of
a cell consume the same draws (common random numbers).  Replicates are
simulated in fixed chunks and estimators always see the whole replicate
batch of a cell, so the numbers do not depend on the thread budget.

The config format is flat ``key = value`` text; list-valued keys are
repeated, e.g.::

    experiment = table1
    n = 30
    n = 60
    param = 0.5
    R = 400
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .asymptotics import estimator_cov, fd_predictions, finite_cov_qq, table1_theory, table2_theory
from .errors import ConfigError, ParameterError, SizeError
from .estimate import (
    _in_domain,
    empirical_variogram,
    laplacian_arrays,
    mom_arrays,
    reml_batch,
    reml_fisher_sd,
    whittle_batch,
)
from .fieldsim import CHUNK, AnchoredSampler, FilteredSampler
from .gcmodel import MaternParams, ModelSpec, PowerLawParams, semivariogram_powerlaw
from .lattice import TRIM_MODES, apply_filter, qv_from_increments
from .robust import (
    JitterConfig,
    MisspecConfig,
    ThinningConfig,
    jitter_experiment,
    misspecification_experiment,
    thinning_experiment,
)

__all__ = [
    "EXPERIMENTS",
    "ESTIMATORS",
    "DEFAULT_SEED",
    "ExperimentConfig",
    "McSummary",
    "cell_seed",
    "run_experiment",
    "emit_fig1_data",
    "emit_fig2_data",
    "format_float",
    "render_csv",
    "render_text",
]

EXPERIMENTS = ("table1", "table2", "table3", "fig1", "fig2", "thinning", "jitter", "matern", "custom")
ESTIMATORS = ("bilinear", "laplacian", "whittle", "reml")
DEFAULT_SEED = 20240917
FAIL_RATE = 0.01

# design grids of the published tables and figures
_DEFAULTS = {
    "table1": dict(ns=(30, 40, 50, 60), params=(0.5, 0.8), m=1, trim="common"),
    "table2": dict(ns=(30, 35, 40, 45, 50, 60), params=(1.2, 1.5, 1.8), m=2),
    "table3": dict(ns=(30, 40, 50), params=(0.2, 0.4, 0.6, 0.8), m=1, estimators=ESTIMATORS),
    "fig1": dict(ns=(60,), params=(0.8,), m=1, R=25),
    "fig2": dict(ns=(60,), params=(0.5,), m=1, domain="FD", trim="common"),
    "thinning": dict(ns=(24, 40, 60), params=(0.5,), m=1),
    "jitter": dict(ns=(16, 32), params=(1.5,), m=2, R=200),
    "matern": dict(ns=(30, 60), params=(0.5,), m=1),
    "custom": dict(ns=(30,), params=(0.5,), m=1),
}


def format_float(x) -> str:
    """Shortest round-trip decimal (``repr``), locale independent."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def cell_seed(master: int, n: int, param: float, estimator_set: Sequence[str]) -> int:
    """``hash64(master, n, parameter bits, estimator-set id)`` via BLAKE2b."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<QQd", int(master), int(n), float(param)))
    h.update("+".join(estimator_set).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


# ---------------------------------------------------------------------------
# configuration

_LIST_KEYS = {"ns": ("n", int), "params": ("param", float), "estimators": ("estimator", str)}
_SCALAR_KEYS = {
    "experiment": str, "R": int, "seed": int, "out": str, "threads": int, "m": int,
    "phi1": float, "domain": str, "trim": str, "c": float, "a": float, "rho": float,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: design grid, replicates, seed, estimators and output.

    ``params`` are roughness values (``phi2``, or ``nu`` for ``matern``).
    ``c`` is the jitter bound, ``a`` the thinning exponent and ``rho`` the
    Matérn range.
    """

    experiment: str = "custom"
    ns: Tuple[int, ...] = (30,)
    params: Tuple[float, ...] = (0.5,)
    R: int = 400
    seed: int = DEFAULT_SEED
    estimators: Tuple[str, ...] = ("bilinear",)
    out: str = "results"
    threads: int = 1
    m: int = 1
    phi1: float = 1.0
    domain: str = "ID"
    trim: str = "per_step"
    c: float = 0.4
    a: float = 0.75
    rho: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "ns", tuple(int(v) for v in self.ns))
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        self.validate()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.R < 1:
            raise ConfigError("R must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not self.ns or not self.params:
            raise ConfigError("need at least one grid size and one parameter")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.domain not in ("ID", "FD"):
            raise ConfigError("domain must be ID or FD")
        if self.trim not in TRIM_MODES:
            raise ConfigError(f"trim must be one of {TRIM_MODES}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ConfigError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
        if self.phi1 <= 0:
            raise ConfigError("phi1 must be positive")
        for n in self.ns:
            if n < 2 * self.m + 2:
                raise ConfigError(f"grid size {n} too small for m={self.m}")
        for p in self.params:
            if self.experiment == "matern":
                if p <= 0:
                    raise ConfigError("Matérn smoothness must be positive")
            elif not (0 < p < self.m) or p == round(p):
                raise ConfigError(f"phi2={p} outside the estimator domain (0, {self.m}) minus integers")
        if "laplacian" in self.estimators and any(p >= 1 for p in self.params):
            raise ConfigError("the Laplacian estimator needs phi2 < 1")
        if not 0 <= self.c < 0.5:
            raise ConfigError("jitter bound c must lie in [0, 1/2)")
        if not 0 < self.a:
            raise ConfigError("thinning exponent a must be positive")

    @classmethod
    def default(cls, experiment: str, **overrides) -> "ExperimentConfig":
        """The published design for ``experiment`` with optional overrides."""
        if experiment not in _DEFAULTS:
            raise ConfigError(f"unknown experiment {experiment!r}")
        kw = dict(_DEFAULTS[experiment])
        kw.update(overrides)
        return cls(experiment=experiment, **kw)

    # -- serialization -------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in _LIST_KEYS:
                key = _LIST_KEYS[f.name][0]
                lines += [f"{key} = {format_float(x)}" for x in v]
            else:
                lines.append(f"{f.name} = {format_float(v)}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_pairs(text: str) -> List[Tuple[str, str]]:
        pairs = []
        for no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {no}: expected key = value, got {raw!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            pairs.append((k, v))
        return pairs

    @classmethod
    def from_pairs(cls, pairs, base: Optional["ExperimentConfig"] = None) -> "ExperimentConfig":
        """Build from ``(key, value)`` pairs.  Lists given here replace the
        base lists; scalars override.  When ``experiment`` is set and no
        base is given, the experiment's published design is the base."""
        pairs = list(pairs)
        exp = [v for k, v in pairs if k == "experiment"]
        if base is None:
            base = cls.default(exp[-1]) if exp else cls()
        kw, lists = {}, {}
        rev = {v[0]: (k, v[1]) for k, v in _LIST_KEYS.items()}
        for k, v in pairs:
            try:
                if k in rev:
                    name, typ = rev[k]
                    lists.setdefault(name, []).append(typ(v))
                elif k in _SCALAR_KEYS:
                    kw[k] = _SCALAR_KEYS[k](v)
                else:
                    raise ConfigError(f"unknown config key {k!r}")
            except ValueError as e:
                raise ConfigError(f"bad value for {k!r}: {v!r}") from e
        kw.update({k: tuple(v) for k, v in lists.items()})
        try:
            return replace(base, **kw)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e

    @classmethod
    def from_text(cls, text: str, base=None) -> "ExperimentConfig":
        return cls.from_pairs(cls.parse_pairs(text), base)

    @classmethod
    def from_file(cls, path, base=None) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_text(fh.read(), base)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e

    def estimator_id(self) -> Tuple[str, ...]:
        return tuple(sorted(self.estimators))


# ---------------------------------------------------------------------------
# summaries


@dataclass
class McSummary:
    """Per-cell rows with a fixed column order, plus the raw draws.

    ``draws[(n, param, estimator)]`` holds ``(phi2_hat, log_phi1_hat,
    in_domain)`` arrays indexed by replicate.
    """

    config: ExperimentConfig
    columns: List[str]
    rows: List[dict]
    draws: Dict[tuple, tuple] = field(default_factory=dict)
    extra: Dict[str, object] = field(default_factory=dict)
    files: List[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(r.get("status") == "FAIL" for r in self.rows)

    def cell(self, n, param, estimator="bilinear") -> dict:
        for r in self.rows:
            if r["n"] == n and r["param"] == param and r.get("estimator", estimator) == estimator:
                return r
        raise KeyError((n, param, estimator))


def render_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_float(r.get(c, "")) for c in columns])
    return buf.getvalue()


def render_text(columns, rows, digits: int = 5) -> str:
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.{digits}f}" if math.isfinite(v) else "nan"
        return format_float(v)

    cells = [[fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    out = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    out.append("  ".join("-" * w for w in widths))
    out += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(out) + "\n"


def _write(cfg: ExperimentConfig, name: str, columns, rows) -> List[str]:
    os.makedirs(cfg.out, exist_ok=True)
    paths = []
    for ext, text in (("csv", render_csv(columns, rows)), ("txt", render_text(columns, rows))):
        p = os.path.join(cfg.out, f"{name}.{ext}")
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# per-cell Monte Carlo

CELL_COLUMNS = [
    "experiment", "n", "param", "estimator", "domain", "R", "n_ok", "n_out_of_domain", "n_error", "status",
    "mean_log_phi1", "mean_phi2", "bias_phi2", "se_mean_phi2",
    "sd_log_phi1", "sd_phi2", "se_sd_phi2", "corr",
    "scale", "scaled_sd_log_phi1", "scaled_sd_phi2", "se_scaled_sd_phi2",
    "emp_ratio", "se_emp_ratio",
    "th_kind", "th_scaled_sd_log_phi1", "th_scaled_sd_phi2", "th_corr", "th_ratio", "th_ratio_taylor",
]


def _chunks(R):
    return [np.arange(s, min(s + CHUNK, R)) for s in range(0, R, CHUNK)]


def _needs_field(cfg) -> bool:
    return "laplacian" in cfg.estimators or cfg.experiment == "fig1"


def _model_spec(cfg, n, param) -> ModelSpec:
    model = PowerLawParams(cfg.phi1, param)
    return ModelSpec.fd(model, n) if cfg.domain == "FD" else ModelSpec(model)


def _simulate_cell(cfg, n, param, seed, pool):
    """Fields (if needed) and step-1 filtered values for all replicates."""
    spec = _model_spec(cfg, n, param)
    if _needs_field(cfg):
        sampler = AnchoredSampler(spec, n)
        parts = list(pool.map(lambda reps: sampler.sample(seed, reps), _chunks(cfg.R)))
        x = np.concatenate(parts)
        return x, apply_filter(x, cfg.m, 1)
    sampler = FilteredSampler(spec, n, cfg.m)
    parts = list(pool.map(lambda reps: sampler.sample(seed, reps), _chunks(cfg.R)))
    return None, np.concatenate(parts)


def _run_estimator(name, cfg, x, z1, pool):
    """``(phi2, log_phi1, in_domain, error)`` arrays for all replicates."""
    R = z1.shape[0]
    err = np.zeros(R, bool)
    if name == "bilinear":
        q1, q2, _, _ = qv_from_increments(z1, cfg.m, cfg.trim)
        bad = (q1 <= 0) | (q2 <= 0) | ~np.isfinite(q1) | ~np.isfinite(q2)
        err |= bad
        q1, q2 = np.where(bad, 1.0, q1), np.where(bad, 1.0, q2)
        p2, lp1, ok = mom_arrays(q1, q2, cfg.m)
    elif name == "laplacian":
        p2, lp1, ok = laplacian_arrays(x)
    elif name in ("whittle", "reml"):
        fn = whittle_batch if name == "whittle" else reml_batch
        p2, lp1 = fn(z1, cfg.m, pmap=pool.map)
        ok = _in_domain(p2, cfg.m)
    else:  # pragma: no cover - guarded by config validation
        raise ConfigError(name)
    p2 = np.where(err, np.nan, p2)
    lp1 = np.where(err | ~ok, np.nan, lp1)
    return p2, lp1, ok & ~err, err


def _sd_se(x):
    """Sample SD and its Gaussian MC standard error."""
    R = x.size
    sd = float(np.std(x, ddof=1)) if R > 1 else float("nan")
    return sd, sd / math.sqrt(2.0 * (R - 1)) if R > 1 else float("nan")


def _cell_stats(cfg, n, param, est, p2, lp1, ok, err, scale, ratio=None):
    R = p2.size
    good = ok & np.isfinite(lp1)
    a, b = p2[good], lp1[good]
    k = a.size
    sd2, se2 = _sd_se(a)
    sd1, _ = _sd_se(b)
    row = {
        "experiment": cfg.experiment, "n": n, "param": param, "estimator": est, "domain": cfg.domain,
        "R": R, "n_ok": int(k), "n_out_of_domain": int(np.sum(~ok & ~err)), "n_error": int(err.sum()),
        "status": "FAIL" if err.sum() > FAIL_RATE * R else "ok",
        "mean_log_phi1": float(b.mean()) if k else float("nan"),
        "mean_phi2": float(a.mean()) if k else float("nan"),
        "bias_phi2": float(a.mean() - param) if k else float("nan"),
        "se_mean_phi2": sd2 / math.sqrt(k) if k > 1 else float("nan"),
        "sd_log_phi1": sd1, "sd_phi2": sd2, "se_sd_phi2": se2,
        "corr": float(np.corrcoef(a, b)[0, 1]) if k > 2 else float("nan"),
        "scale": scale,
        "scaled_sd_log_phi1": math.sqrt(scale) * sd1,
        "scaled_sd_phi2": math.sqrt(scale) * sd2,
        "se_scaled_sd_phi2": math.sqrt(scale) * se2,
        "emp_ratio": float("nan"), "se_emp_ratio": float("nan"),
        "th_kind": "", "th_scaled_sd_log_phi1": float("nan"), "th_scaled_sd_phi2": float("nan"),
        "th_corr": float("nan"), "th_ratio": float("nan"), "th_ratio_taylor": float("nan"),
    }
    if ratio is not None:
        row["emp_ratio"] = float(ratio.mean())
        row["se_emp_ratio"] = float(ratio.std(ddof=1) / math.sqrt(R)) if R > 1 else float("nan")
    return row


def _theory(cfg, n, param, est, row):
    """Fill theory columns; every value is tagged by ``th_kind``."""
    if est == "bilinear" and cfg.experiment in ("table1", "fig2") or (
            cfg.experiment == "custom" and est == "bilinear" and cfg.trim == "common"):
        s = table1_theory(n, param, cfg.phi1, cfg.m)
        row.update(th_kind="finite-lattice", th_scaled_sd_log_phi1=s.sd_log_phi1,
                   th_scaled_sd_phi2=s.sd_phi2, th_corr=s.corr)
    elif est == "bilinear" and cfg.experiment == "table2":
        s, rt, rtay = table2_theory(n, param, cfg.phi1, cfg.m)
        row.update(th_kind="torus", th_scaled_sd_log_phi1=s.sd_log_phi1, th_scaled_sd_phi2=s.sd_phi2,
                   th_corr=s.corr, th_ratio=rt, th_ratio_taylor=rtay)
    elif est == "bilinear":
        pred = finite_cov_qq(n, cfg.m, PowerLawParams(cfg.phi1, param), cfg.trim)
        _, s = estimator_cov(pred, size=row["scale"])
        row.update(th_kind="finite-lattice", th_scaled_sd_log_phi1=s.sd_log_phi1,
                   th_scaled_sd_phi2=s.sd_phi2, th_corr=s.corr)
    elif est == "reml":
        row.update(th_kind="fisher-expected",
                   th_scaled_sd_phi2=math.sqrt(row["scale"]) * reml_fisher_sd(n, cfg.m, param, profile=True))


def _scale_for(cfg, n):
    if cfg.experiment == "table3":
        return 1.0
    if cfg.experiment == "table2":
        return float(n * n)
    if cfg.trim == "common" or cfg.experiment in ("table1", "fig2"):
        return float((n - 2 * cfg.m) ** 2)
    return float(n * n)


def _run_cell(cfg, n, param, pool):
    seed = cell_seed(cfg.seed, n, param, cfg.estimator_id())
    try:
        x, z1 = _simulate_cell(cfg, n, param, seed, pool)
    except (SizeError, ParameterError) as e:
        raise ConfigError(f"cell (n={n}, param={param}): {e}") from e
    rows, draws = [], {}
    ratio = None
    for est in cfg.estimators:
        p2, lp1, ok, err = _run_estimator(est, cfg, x, z1, pool)
        if est == "bilinear":
            q1, q2, _, _ = qv_from_increments(z1, cfg.m, cfg.trim)
            ratio = q2 / q1
        row = _cell_stats(cfg, n, param, est, p2, lp1, ok, err, _scale_for(cfg, n),
                          ratio if est == "bilinear" else None)
        _theory(cfg, n, param, est, row)
        rows.append(row)
        draws[(n, param, est)] = (p2, lp1, ok)
    return rows, draws


def _run_cells(cfg) -> McSummary:
    rows, draws = [], {}
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for n in cfg.ns:
            for p in cfg.params:
                r, d = _run_cell(cfg, n, p, pool)
                rows += r
                draws.update(d)
    return McSummary(cfg, list(CELL_COLUMNS), rows, draws)


# ---------------------------------------------------------------------------
# robustness wrappers

def _run_thinning(cfg):
    cols = ["experiment", "n", "param", "a", "R", "p", "mean_k", "mean_abs_dphi2", "sd_phi2",
            "half_sd_phi2", "sqrtN_mean_abs_dq1", "status"]
    rows = []
    for param in cfg.params:
        res = thinning_experiment(ThinningConfig(cfg.ns, PowerLawParams(cfg.phi1, param), cfg.m, cfg.a, cfg.R,
                                                 cell_seed(cfg.seed, 0, param, ("thinning",))))
        for n in cfg.ns:
            c = res[n]
            rows.append({"experiment": "thinning", "n": n, "param": param, "a": cfg.a, "R": cfg.R, "p": c["p"],
                         "mean_k": c["mean_k"], "mean_abs_dphi2": c["mean_abs_dphi2"], "sd_phi2": c["sd_phi2"],
                         "half_sd_phi2": 0.5 * c["sd_phi2"], "sqrtN_mean_abs_dq1": c["sqrtN_mean_abs_dq1"],
                         "status": "ok" if c["mean_abs_dphi2"] < 0.5 * c["sd_phi2"] else "FAIL"})
    return McSummary(cfg, cols, rows)


def _run_jitter(cfg):
    cols = ["experiment", "n", "param", "c", "R", "mean_abs_dq1", "mean_abs_dq2", "mean_q1", "mean_phi2_clean",
            "mean_phi2_jit", "sd_phi2_clean", "sd_phi2_jit", "ratio_dq1_to_next", "th_ratio"]
    rows = []
    extra = {}
    for param in cfg.params:
        res = jitter_experiment(JitterConfig(cfg.ns, PowerLawParams(cfg.phi1, param), cfg.m, cfg.c, cfg.R,
                                             cell_seed(cfg.seed, 0, param, ("jitter",))))
        ns = list(cfg.ns)
        for i, n in enumerate(ns):
            c = res[n]
            nxt = res[ns[i + 1]]["mean_abs_dq1"] / c["mean_abs_dq1"] if i + 1 < len(ns) else float("nan")
            th = (ns[i + 1] / n) ** (-param) if i + 1 < len(ns) else float("nan")
            rows.append({"experiment": "jitter", "n": n, "param": param, "c": cfg.c, "R": cfg.R,
                         **{k: c[k] for k in cols[5:12]}, "ratio_dq1_to_next": nxt, "th_ratio": th})
        extra[param] = res
    return McSummary(cfg, cols, rows, extra=extra)


def _run_matern(cfg):
    cols = ["experiment", "n", "param", "rho", "R", "mean_phi2", "bias_phi2", "se_phi2", "sqrtN_sd_phi2",
            "th_kind", "th_sqrtN_sd_phi2", "mean_scaled_phi1", "kappa_nu", "domination_pass", "domination_max_ratio",
            "in_domain"]
    rows, extra = [], {}
    for nu in cfg.params:
        q = MaternParams(1.0, nu, cfg.rho)
        res = misspecification_experiment(MisspecConfig(cfg.ns, q, cfg.m, cfg.R,
                                                        cell_seed(cfg.seed, 0, nu, ("matern",))))
        dom = res["domination"]
        for n in cfg.ns:
            c = res["cells"][n]
            rows.append({"experiment": "matern", "n": n, "param": nu, "rho": cfg.rho, "R": cfg.R,
                         "mean_phi2": c["mean_phi2"], "bias_phi2": c["bias_phi2"], "se_phi2": c["se_phi2"],
                         "sqrtN_sd_phi2": c["sqrtN_sd_phi2"], "th_kind": "asymptotic",
                         "th_sqrtN_sd_phi2": res["theory_sd_phi2"], "mean_scaled_phi1": c["mean_scaled_phi1"],
                         "kappa_nu": res["kappa_nu"], "domination_pass": bool(dom.all_pass),
                         "domination_max_ratio": dom.max_ratio, "in_domain": c["in_domain"]})
        extra[nu] = res
    return McSummary(cfg, cols, rows, extra=extra)


# ---------------------------------------------------------------------------
# entry points


def run_experiment(config: ExperimentConfig, write: bool = True) -> McSummary:
    """Run ``config`` and (optionally) write ``<out>/<experiment>.csv`` and ``.txt``."""
    if config.experiment == "fig1":
        return emit_fig1_data(config, write)
    if config.experiment == "fig2":
        return emit_fig2_data(config, write)
    if config.experiment == "thinning":
        summary = _run_thinning(config)
    elif config.experiment == "jitter":
        summary = _run_jitter(config)
    elif config.experiment == "matern":
        summary = _run_matern(config)
    else:
        summary = _run_cells(config)
    if write:
        summary.files += _write(config, config.experiment, summary.columns, summary.rows)
    return summary


FIG1_COLUMNS = ["replicate", "h", "log2_h", "log2_h_fd", "gamma_hat", "gamma_true", "half_log2_ratio"]
FIG1_SUMMARY_COLUMNS = ["replicate", "slope", "phi2_hat"]


def emit_fig1_data(config: ExperimentConfig, write: bool = True, max_lag: int = 10) -> McSummary:
    """Variogram discrepancy lines ``(log2 h, 0.5 log2(gamma_hat/gamma_true))``.

    Each replicate's least-squares slope estimates ``phi2_hat - phi2``; the
    summary holds the per-replicate slopes and their mean with MC SE.
    """
    cfg = config
    if len(cfg.ns) != 1 or len(cfg.params) != 1:
        raise ConfigError("fig1 takes a single (n, phi2) cell")
    n, phi2 = cfg.ns[0], cfg.params[0]
    if not 0 < phi2 < 1:
        raise ConfigError("fig1 needs IRF-0 parameters (0 < phi2 < 1)")
    if max_lag > n // 2:
        raise SizeError("max_lag exceeds n/2")
    p = PowerLawParams(cfg.phi1, phi2)
    seed = cell_seed(cfg.seed, n, phi2, ("variogram",))
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        sampler = AnchoredSampler(ModelSpec(p), n)
        x = np.concatenate(list(pool.map(lambda reps: sampler.sample(seed, reps), _chunks(cfg.R))))
    h = np.arange(1, max_lag + 1)
    g_true = semivariogram_powerlaw(h.astype(float), p)
    g_hat = empirical_variogram(x, max_lag)
    y = 0.5 * np.log2(g_hat / g_true)
    lx = np.log2(h)
    X = np.stack([np.ones_like(lx), lx], 1)
    coef = np.linalg.lstsq(X, y.T, rcond=None)[0]
    slopes = coef[1]
    rows = []
    for r in range(cfg.R):
        for i, hh in enumerate(h):
            rows.append({"replicate": r, "h": int(hh), "log2_h": float(lx[i]),
                         "log2_h_fd": float(lx[i] - math.log2(n)), "gamma_hat": float(g_hat[r, i]),
                         "gamma_true": float(g_true[i]), "half_log2_ratio": float(y[r, i])})
    srows = [{"replicate": r, "slope": float(slopes[r]), "phi2_hat": float(phi2 + slopes[r])} for r in range(cfg.R)]
    mean, se = float(slopes.mean()), float(slopes.std(ddof=1) / math.sqrt(cfg.R))
    srows.append({"replicate": "mean", "slope": mean, "phi2_hat": phi2 + mean})
    srows.append({"replicate": "se", "slope": se, "phi2_hat": se})
    summary = McSummary(cfg, list(FIG1_COLUMNS), rows,
                        extra={"slopes": slopes, "mean_slope": mean, "se_slope": se, "summary_rows": srows,
                               "gamma_true_h1": float(g_true[0])})
    if write:
        summary.files += _write(cfg, "fig1", FIG1_COLUMNS, rows)
        summary.files += _write(cfg, "fig1_summary", FIG1_SUMMARY_COLUMNS, srows)
    return summary


FIG2_COLUMNS = ["n", "param", "replicate", "log_phi1_fd", "log_tau1_hat", "phi2_hat"]
FIG2_SUMMARY_COLUMNS = [
    "n", "param", "R", "n_ok", "corr_fd", "corr_id", "th_corr_fd", "th_corr_id", "th_kind",
    "sqrt_Mint_sd_phi2", "th_sqrt_Mint_sd_phi2",
    "stab_cov_11", "stab_cov_12", "stab_cov_22", "omega_11", "omega_12", "omega_22", "max_rel_dev",
]


def emit_fig2_data(config: ExperimentConfig, write: bool = True) -> McSummary:
    """FD scatter of ``(log(N^tau2_hat tau1_hat), tau2_hat)`` per cell.

    ``log_phi1_fd`` is the unstabilized FD scale estimate; applying
    ``A_N = [[1, -log N], [0, 1]]`` gives back ``(log tau1_hat/tau1, V)``,
    whose covariance is compared entrywise with the finite-lattice
    ``Omega`` (both unscaled).
    """
    cfg = config if config.domain == "FD" else replace(config, domain="FD")
    if cfg.estimators != ("bilinear",):
        cfg = replace(cfg, estimators=("bilinear",))
    base = replace(cfg, experiment="fig2")
    rows, srows, draws = [], [], {}
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for n in cfg.ns:
            for phi2 in cfg.params:
                seed = cell_seed(cfg.seed, n, phi2, cfg.estimator_id())
                _, z1 = _simulate_cell(base, n, phi2, seed, pool)
                q1, q2, _, _ = qv_from_increments(z1, cfg.m, cfg.trim)
                p2, lt1, ok = mom_arrays(q1, q2, cfg.m)
                N = n * n
                lN = math.log(N)
                good = ok & np.isfinite(lt1)
                tau2, tau1 = phi2, cfg.phi1 * N ** (-phi2)
                unst = lt1 + lN * p2                     # log(N^tau2_hat tau1_hat)
                stab = np.stack([lt1 - math.log(tau1), p2 - tau2])[:, good]
                for r in range(cfg.R):
                    rows.append({"n": n, "param": phi2, "replicate": r, "log_phi1_fd": float(unst[r]),
                                 "log_tau1_hat": float(lt1[r]), "phi2_hat": float(p2[r])})
                pred = finite_cov_qq(n, cfg.m, PowerLawParams(cfg.phi1, phi2), cfg.trim)
                O = pred.omega
                fdp = fd_predictions(pred, N)
                S = np.cov(stab)
                M_int = (n - 2 * cfg.m) ** 2
                dev = np.abs(S - O) / np.abs(O)
                srows.append({
                    "n": n, "param": phi2, "R": cfg.R, "n_ok": int(good.sum()),
                    "corr_fd": float(np.corrcoef(unst[good], p2[good])[0, 1]),
                    "corr_id": float(np.corrcoef(stab[0], stab[1])[0, 1]),
                    "th_corr_fd": fdp.corr_unstabilized,
                    "th_corr_id": float(O[0, 1] / math.sqrt(O[0, 0] * O[1, 1])), "th_kind": "finite-lattice",
                    "sqrt_Mint_sd_phi2": math.sqrt(M_int) * float(np.std(p2[good], ddof=1)),
                    "th_sqrt_Mint_sd_phi2": math.sqrt(M_int * O[1, 1]),
                    "stab_cov_11": float(S[0, 0]), "stab_cov_12": float(S[0, 1]), "stab_cov_22": float(S[1, 1]),
                    "omega_11": float(O[0, 0]), "omega_12": float(O[0, 1]), "omega_22": float(O[1, 1]),
                    "max_rel_dev": float(dev.max()),
                })
                draws[(n, phi2, "bilinear")] = (p2, lt1, ok)
    summary = McSummary(cfg, list(FIG2_COLUMNS), rows, draws, extra={"summary_rows": srows})
    if write:
        summary.files += _write(cfg, "fig2", FIG2_COLUMNS, rows)
        summary.files += _write(cfg, "fig2_summary", FIG2_SUMMARY_COLUMNS, srows)
    return summary
