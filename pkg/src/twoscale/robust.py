"""Irregular sampling: deletions, Bernoulli thinning, jitter, misspecification.

Pruned quadratic variations drop every stencil row that touches a deleted
site and divide by the number of surviving rows.  The experiment drivers
pair clean and perturbed pipelines on the same Gaussian draws, so every
difference they report is caused by the perturbation alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .asymptotics import asymptotic_sigma, estimator_cov, matern_fd_means
from .errors import DegenerateFieldError, ParameterError, SizeError
from .estimate import mom_arrays
from .fieldsim import FilteredSampler, simulate_jittered, uniforms, normals
from .gcmodel import MaternParams, ModelSpec, PowerLawParams, domination_check, matern_tangent
from .lattice import (
    FILTER_MATRIX_CAP,
    apply_filter,
    block_sum,
    build_filter_matrix,
    qv_arrays,
    qv_from_increments,
)

__all__ = [
    "SiteMask",
    "PrunedQv",
    "prune_and_qv",
    "surviving_rows",
    "verify_deletion_bounds",
    "deletion_scaling",
    "ThinningConfig",
    "thinning_experiment",
    "JitterConfig",
    "jitter_experiment",
    "MisspecConfig",
    "misspecification_experiment",
    "input_error_check",
]


# ---------------------------------------------------------------------------
# masks


@dataclass(frozen=True)
class SiteMask:
    """Deleted sites of an ``n x n`` grid (``True`` = deleted)."""

    deleted: np.ndarray
    origin: str = "deterministic"
    p: Optional[float] = None

    def __post_init__(self):
        d = np.asarray(self.deleted, bool)
        if d.ndim < 2 or d.shape[-1] != d.shape[-2]:
            raise SizeError("mask must be square")
        object.__setattr__(self, "deleted", d)

    @property
    def n(self) -> int:
        return self.deleted.shape[-1]

    @property
    def k(self):
        return self.deleted.sum(axis=(-2, -1))

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((n, n), bool))

    @classmethod
    def single_site(cls, n, t1, t2):
        d = np.zeros((n, n), bool)
        d[t1, t2] = True
        return cls(d)

    @classmethod
    def row_segment(cls, n, row, start, length):
        d = np.zeros((n, n), bool)
        d[row, start:start + length] = True
        return cls(d)

    @classmethod
    def random_uniform(cls, n, k, seed, replicate=0):
        """``k`` distinct sites chosen uniformly."""
        if not 0 <= k <= n * n:
            raise ParameterError("need 0 <= k <= N")
        u = uniforms(seed, replicate, n * n, sub=3)
        d = np.zeros(n * n, bool)
        d[np.argsort(u, kind="stable")[:k]] = True
        return cls(d.reshape(n, n))

    @classmethod
    def diagonal_swath(cls, n, width=1):
        g = np.arange(n)
        d = np.abs(g[:, None] - g[None, :]) < width
        return cls(d)

    @classmethod
    def bernoulli(cls, n, p, seed, replicates=(0,)):
        """Independent retention with probability ``p`` (one mask per replicate)."""
        if not 0 <= p <= 1:
            raise ParameterError("retention p must lie in [0, 1]")
        d = np.stack([uniforms(seed, r, n * n, sub=2).reshape(n, n) >= p for r in replicates])
        return cls(d, origin="bernoulli", p=p)


# ---------------------------------------------------------------------------
# pruned QVs


@dataclass(frozen=True)
class PrunedQv:
    tilde_q1: np.ndarray
    tilde_q2: np.ndarray
    tilde_m1: np.ndarray
    tilde_m2: np.ndarray


def surviving_rows(mask: SiteMask, m: int, j: int) -> np.ndarray:
    """Boolean ``(n-jm)^2`` array: rows of ``F_[j]`` touching no deleted site."""
    d = mask.deleted.astype(float)
    L = mask.n - j * m
    if L < 1:
        raise SizeError("grid too small")
    touch = np.zeros(d.shape[:-2] + (L, L))
    for a1 in range(m + 1):
        for a2 in range(m + 1):
            touch += d[..., j * a1:j * a1 + L, j * a2:j * a2 + L]
    return touch == 0


def prune_and_qv(x, mask: SiteMask, m: int, filtered: bool = False) -> PrunedQv:
    """Pruned quadratic variations ``Q~_j`` with their own divisors.

    ``x`` is a field (or batch) on ``Lambda_n``, or its step-1 filtered values
    with ``filtered=True``.  An empty mask reproduces the plain per-step QVs
    bitwise.
    """
    z1 = np.asarray(x, float) if filtered else apply_filter(x, m, 1)
    z2 = block_sum(z1, m)
    keep1 = np.broadcast_to(surviving_rows(mask, m, 1), z1.shape)
    keep2 = np.broadcast_to(surviving_rows(mask, m, 2), z2.shape)
    if not mask.deleted.any():
        q1, q2, M1, M2 = qv_from_increments(z1, m, "per_step")
        return PrunedQv(q1, q2, np.full(np.shape(q1), M1), np.full(np.shape(q2), M2))
    m1 = keep1.sum(axis=(-2, -1))
    m2 = keep2.sum(axis=(-2, -1))
    if np.any(m1 == 0) or np.any(m2 == 0):
        raise DegenerateFieldError("every stencil row was pruned")
    z1, z2 = z1.astype(np.longdouble), z2.astype(np.longdouble)
    q1 = np.sum(np.where(keep1, z1 * z1, 0.0), axis=(-2, -1)) / m1
    q2 = np.sum(np.where(keep2, z2 * z2, 0.0), axis=(-2, -1)) / m2
    return PrunedQv(q1, q2, m1, m2)


# ---------------------------------------------------------------------------
# perturbation bounds


def verify_deletion_bounds(n: int, m: int, mask: SiteMask, j: int = 1, cap: int = 32) -> dict:
    """Measured ``||A~ - A||_2``, ``||A~ - A||_F`` and rank for one mask."""
    if n > min(cap, FILTER_MATRIX_CAP):
        raise SizeError(f"n={n} exceeds the verification cap {cap}")
    if mask.deleted.ndim != 2:
        raise ParameterError("one mask at a time")
    F = build_filter_matrix(n, m, j).F
    keep = surviving_rows(mask, m, j).ravel()
    M, Mt = F.shape[0], int(keep.sum())
    k = int(mask.k)
    if k == 0:
        return {"k": 0, "k_over_N": 0.0, "norm2": 0.0, "normF": 0.0, "rank": 0, "rank_rows": 0,
                "rows_removed": 0}
    if Mt == 0:
        raise DegenerateFieldError("every row pruned")
    A = (F.T @ F).toarray() / M
    Ft = F[np.flatnonzero(keep)]
    At = (Ft.T @ Ft).toarray() / Mt
    D = At - A
    ev = linalg.eigvalsh(D)
    tol = max(D.shape) * np.abs(ev).max() * 1e-12
    # the change of divisor makes D full rank; the row-removal part
    # (F~^T F~ - F^T F) / M is the low-rank piece
    Fr = F[np.flatnonzero(~keep)]
    ev_r = linalg.eigvalsh((Fr.T @ Fr).toarray() / M)
    tol_r = max(D.shape) * max(np.abs(ev_r).max(), 1e-300) * 1e-12
    return {
        "k": k,
        "k_over_N": k / (n * n),
        "norm2": float(np.abs(ev).max()),
        "normF": float(np.sqrt(np.sum(D * D))),
        "rank": int(np.sum(np.abs(ev) > tol)),
        "rank_rows": int(np.sum(np.abs(ev_r) > tol_r)),
        "rows_removed": int(M - Mt),
    }


def deletion_scaling(ns: Sequence[int], m: int, ks: Sequence[int], seed: int, n_masks: int = 20,
                     j: int = 1) -> dict:
    """Average ``||A~ - A||_F`` over random masks; fitted ``C`` in ``C k/N``."""
    rows = []
    for n in ns:
        for k in ks:
            vals = [verify_deletion_bounds(n, m, SiteMask.random_uniform(n, k, seed, r), j)
                    for r in range(n_masks)]
            nf = float(np.mean([v["normF"] for v in vals]))
            n2 = float(np.mean([v["norm2"] for v in vals]))
            rk = int(max(v["rank_rows"] for v in vals))
            rows.append({"n": n, "k": k, "normF": nf, "norm2": n2, "max_rank_rows": rk,
                         "C_F": nf / (k / (n * n)), "C_2": n2 / (k / (n * n))})
    fitted = {n: max(r["C_F"] for r in rows if r["n"] == n) for n in ns}
    return {"rows": rows, "C_F": fitted}


def input_error_check(n: int, m: int, model, us=(1e-3, 1e-2, 1e-1), R: int = 200, seed: int = 0) -> dict:
    """Mean ``|Q(Y + e) - Q(Y)|`` for i.i.d. noise of sd ``u`` added to the
    filtered vector; fitted log-log exponent in ``u``."""
    S = FilteredSampler(model, n, m)
    z = S.sample(seed, range(R))
    L = z.shape[-1]
    out = []
    for i, u in enumerate(us):
        e = np.stack([normals(seed, r, L * L, sub=10 + i).reshape(L, L) for r in range(R)]) * u
        q0 = np.mean(z * z, axis=(-2, -1))
        q = np.mean((z + e) ** 2, axis=(-2, -1))
        out.append(float(np.mean(np.abs(q - q0))))
    slope = float(np.polyfit(np.log(us), np.log(out), 1)[0])
    return {"u": list(us), "mean_abs_dq": out, "slope": slope}


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ThinningConfig:
    ns: Sequence[int] = (24, 40, 60)
    phi: PowerLawParams = PowerLawParams(1.0, 0.5)
    m: int = 1
    a: float = 0.75
    R: int = 400
    seed: int = 0


def thinning_experiment(cfg: ThinningConfig) -> dict:
    """Paired estimates with and without Bernoulli thinning at ``p_n = 1 - N^-a``."""
    res = {}
    for n in cfg.ns:
        N = n * n
        p = 1.0 - N ** (-cfg.a)
        z = FilteredSampler(cfg.phi, n, cfg.m).sample(cfg.seed, range(cfg.R))
        q1, q2, _, _ = qv_from_increments(z, cfg.m, "per_step")
        mask = SiteMask.bernoulli(n, p, cfg.seed, range(cfg.R))
        pq = prune_and_qv(z, mask, cfg.m, filtered=True)
        e0, _, ok0 = mom_arrays(q1, q2, cfg.m)
        e1, _, ok1 = mom_arrays(pq.tilde_q1, pq.tilde_q2, cfg.m)
        d = np.abs(e1 - e0)
        res[n] = {
            "p": p,
            "mean_k": float(np.mean(mask.k)),
            "mean_abs_dphi2": float(d.mean()),
            "sd_phi2": float(e0.std(ddof=1)),
            "sqrtN_mean_abs_dq1": float(math.sqrt(N) * np.mean(np.abs(pq.tilde_q1 - q1))),
            "phi2_clean": e0,
            "phi2_thin": e1,
        }
    return res


@dataclass(frozen=True)
class JitterConfig:
    ns: Sequence[int] = (16, 32)
    model: object = PowerLawParams(1.0, 1.5)
    m: int = 2
    c: float = 0.4
    R: int = 200
    seed: int = 0


def jitter_experiment(cfg: JitterConfig) -> dict:
    """Paired FD estimates at grid sites and at jittered sites ``t/n + eps_t``."""
    res = {}
    for n in cfg.ns:
        spec = ModelSpec.fd(cfg.model, n)
        clean, jit = [], []
        for r in range(cfg.R):
            a, b, _ = simulate_jittered(spec, n, cfg.c, cfg.seed, r)
            clean.append(a)
            jit.append(b)
        clean, jit = np.array(clean), np.array(jit)
        q1c, q2c = qv_arrays(clean, cfg.m)
        q1j, q2j = qv_arrays(jit, cfg.m)
        pc, _, _ = mom_arrays(q1c, q2c, cfg.m)
        pj, _, _ = mom_arrays(q1j, q2j, cfg.m)
        res[n] = {
            "mean_abs_dq1": float(np.mean(np.abs(q1j - q1c))),
            "mean_abs_dq2": float(np.mean(np.abs(q2j - q2c))),
            "mean_q1": float(np.mean(q1c)),
            "mean_phi2_clean": float(pc.mean()),
            "mean_phi2_jit": float(pj.mean()),
            "sd_phi2_clean": float(pc.std(ddof=1)),
            "sd_phi2_jit": float(pj.std(ddof=1)),
            "max_abs_dphi2": float(np.max(np.abs(pj - pc))),
        }
    ns = list(cfg.ns)
    if len(ns) >= 2:
        d0 = res[ns[0]]["mean_abs_dq1"]
        res["ratio_dq1"] = res[ns[1]]["mean_abs_dq1"] / d0 if d0 > 0 else math.nan
    return res


@dataclass(frozen=True)
class MisspecConfig:
    ns: Sequence[int] = (30, 60)
    q: MaternParams = MaternParams(1.0, 0.5, 1.0)
    m: int = 1
    R: int = 400
    seed: int = 0
    grid: int = 101


def misspecification_experiment(cfg: MisspecConfig) -> dict:
    """MoM under Matérn truth on the FD grid ``t/n``.

    Reports the bias of ``phi2_hat`` against ``nu``, ``n^(2 phi2_hat) phi1_hat``
    against its limit ``kappa_nu``, the scaled SD against the power-law theory at
    ``phi2 = nu`` and the filtered spectral domination check.
    """
    tan = matern_tangent(cfg.q)
    sig = asymptotic_sigma(cfg.m, tan.as_powerlaw())
    _, th = estimator_cov(sig)
    dom = domination_check(cfg.q, cfg.m, grid=cfg.grid)
    out = {"kappa_nu": tan.phi1, "theory_sd_phi2": th.sd_phi2, "domination": dom, "cells": {}}
    for n in cfg.ns:
        z = FilteredSampler(ModelSpec.fd(cfg.q, n), n, cfg.m).sample(cfg.seed, range(cfg.R))
        q1, q2, _, _ = qv_from_increments(z, cfg.m, "per_step")
        p2, lp1, ok = mom_arrays(q1, q2, cfg.m)
        scaled = np.exp(2 * p2 * math.log(n) + lp1)
        out["cells"][n] = {
            "mean_phi2": float(p2.mean()),
            "bias_phi2": float(p2.mean() - cfg.q.nu),
            "se_phi2": float(p2.std(ddof=1) / math.sqrt(cfg.R)),
            "sqrtN_sd_phi2": float(n * p2.std(ddof=1)),
            "mean_scaled_phi1": float(np.nanmean(scaled)),
            "exact_means": matern_fd_means(cfg.q, cfg.m, n).exact,
            "in_domain": float(ok.mean()),
        }
    return out
