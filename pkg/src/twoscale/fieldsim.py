"""Exact Gaussian simulation on square lattices.

Four samplers, all driven by the same deterministic normal streams:

* :class:`FilteredSampler` draws the stationary filtered field
  ``D^(m)_[1] X`` on ``{0..n-m-1}^2`` directly (smallest matrix; what the
  estimators consume).
* :class:`AnchoredSampler` draws ``X`` itself on ``Lambda_n`` using an
  anchored version of the IRF (IRF-0 pinned at the origin, IRF-1 pinned on
  three affine anchors).
* :class:`MaternSampler` draws a Matérn field at arbitrary locations.
* :func:`simulate_jittered` draws clean and jittered-location values jointly.

Replicate ``r`` under master ``seed`` always consumes the same normals, no
matter how replicates are batched or how many threads run them.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, special

from .errors import NumericalError, ParameterError, SingularityError, SizeError
from .gcmodel import (
    MaternParams,
    ModelSpec,
    PowerLawParams,
    matern_cov,
    stencil_autocorrelation,
)
from .lattice import apply_filter, block_weights

__all__ = [
    "normals",
    "filtered_cov",
    "filtered_cov_table",
    "cross_cov_table",
    "robust_cholesky",
    "FilteredSampler",
    "AnchoredSampler",
    "MaternSampler",
    "SimPlan",
    "FieldSample",
    "simulate",
    "simulate_filtered",
    "simulate_anchored",
    "simulate_matern",
    "simulate_jittered",
    "JitterDraw",
    "JitterSpec",
    "uniforms",
    "write_rsf1",
    "read_rsf1",
    "write_csv",
    "read_csv",
    "MODE_CODES",
    "CHUNK",
]

#: replicates are generated in aligned blocks of this size
CHUNK = 16
FILTERED_CAP = 4096
ANCHORED_CAP_N = 64
MATERN_CAP = 4096

MODE_CODES = {"filtered-direct": 0, "anchored": 1, "matern-direct": 2, "jittered": 3}


# ---------------------------------------------------------------------------
# random numbers


def _stream(seed: int, replicate: int, sub: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replicate), int(sub)])
    return np.random.Generator(np.random.Philox(ss))


def normals(seed: int, replicate: int, size: int, sub: int = 0) -> np.ndarray:
    """Standard normals for one replicate via inverse CDF of 53-bit uniforms.

    Counter-based (Philox) and platform independent; ``sub`` selects an
    independent sub-stream (e.g. jitter offsets).
    """
    k = _stream(seed, replicate, sub).integers(0, 2**64, size=size, dtype=np.uint64, endpoint=False)
    u = ((k >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return special.ndtri(u)


def uniforms(seed: int, replicate: int, size: int, sub: int) -> np.ndarray:
    k = _stream(seed, replicate, sub).integers(0, 2**64, size=size, dtype=np.uint64, endpoint=False)
    return ((k >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _normal_block(seed, replicates, size, sub=0):
    return np.stack([normals(seed, r, size, sub) for r in replicates], axis=1)


# ---------------------------------------------------------------------------
# covariance tables


def _powerlaw_filtered_sum(u1, u2, m, phi2):
    """``S(u) = sum_d w_d |u + d|^(2 phi2)`` with cancellation control.

    For large |u| the terms are factored as ``|u|^(2phi2) (1 + x_d)^phi2`` and
    ``(1+x)^phi2 - 1`` is evaluated with expm1/log1p (the weights sum to 0).
    """
    d, w = stencil_autocorrelation(m)
    wf = w.astype(float)
    u1 = np.asarray(u1, float)[..., None]
    u2 = np.asarray(u2, float)[..., None]
    p1 = u1 + d[:, 0]
    p2 = u2 + d[:, 1]
    r2 = p1 * p1 + p2 * p2
    direct = np.sum(wf * np.where(r2 > 0, r2, 1.0) ** phi2 * (r2 > 0), axis=-1)
    ru2 = u1 * u1 + u2 * u2
    far = ru2[..., 0] > (4.0 * m) ** 2
    if np.any(far):
        ru2s = np.where(ru2 > 0, ru2, 1.0)
        x = (r2 - ru2) / ru2s
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.sum(wf * np.expm1(phi2 * np.log1p(x)), axis=-1)
        direct = np.where(far, ru2s[..., 0] ** phi2 * fac, direct)
    return direct


def filtered_cov(u, m: int, j: int, spec) -> np.ndarray:
    """``Cov(D_[j] X_t, D_[j] X_(t+u)) = sum_{a,b} c_a c_b K(j (u + b - a))``.

    ``spec`` is a :class:`ModelSpec` (or a bare parameter object, taken on the
    unit lattice). For the power law ``m > floor(phi2)`` is required.
    """
    spec = spec if isinstance(spec, ModelSpec) else ModelSpec(spec)
    u = np.asarray(u, float)
    if spec.is_powerlaw:
        p = spec.model
        if m <= p.order_k:
            raise ParameterError(f"order m={m} does not stationarize phi2={p.phi2}")
        amp = p.phi1 * special.gamma(-p.phi2) * (j * spec.spacing) ** (2 * p.phi2)
        return amp * _powerlaw_filtered_sum(u[..., 0], u[..., 1], m, p.phi2)
    d, w = stencil_autocorrelation(m)
    h = j * (u[..., None, :] + d)
    r = spec.spacing * np.hypot(h[..., 0], h[..., 1])
    return np.sum(w * matern_cov(r, spec.model), axis=-1)


@lru_cache(maxsize=64)
def _quadrant_table(spec: ModelSpec, m: int, L: int) -> np.ndarray:
    g = np.arange(L)
    U1, U2 = np.meshgrid(g, g, indexing="ij")
    t = filtered_cov(np.stack([U1, U2], -1), m, 1, spec)
    t.setflags(write=False)
    return t


def filtered_cov_table(spec: ModelSpec, m: int, L: int) -> np.ndarray:
    """Step-1 filtered covariance ``r(u)`` for ``u`` in ``[-(L-1), L-1]^2``.

    Index ``[u1 + L - 1, u2 + L - 1]``. Uses the symmetry ``r(u1,u2)=r(|u1|,|u2|)``.
    """
    q = _quadrant_table(spec, m, L)
    idx = np.abs(np.arange(-(L - 1), L))
    return q[np.ix_(idx, idx)]


def cross_cov_table(r11: np.ndarray, m: int, which: str) -> np.ndarray:
    """Cross-covariances of step-1 and step-2 filtered values from ``r11``.

    ``which='12'``: ``Cov(Z1_t, Z2_(t+u)) = sum_a w_a r11(u + a)``;
    ``which='22'``: ``sum_{a,b} w_a w_b r11(u + b - a)``.
    Output covers lags ``[-(K-1-m), K-1-m]`` (for '12' the window is
    ``u+a`` in range) and is returned with its centre offset.
    """
    w = block_weights(m)
    K = r11.shape[0]
    c = (K - 1) // 2
    if which == "12":
        # u ranges over [-c, c - m]; store on [-(c-m), c-m] symmetric window
        half = c - m
        out = np.zeros((2 * half + 1, 2 * half + 1))
        for a1 in range(m + 1):
            for a2 in range(m + 1):
                out += w[a1, a2] * r11[c - half + a1:c + half + 1 + a1, c - half + a2:c + half + 1 + a2]
        return out
    if which == "22":
        half = c - m
        out = np.zeros((2 * half + 1, 2 * half + 1))
        for a1 in range(m + 1):
            for a2 in range(m + 1):
                for b1 in range(m + 1):
                    for b2 in range(m + 1):
                        s1, s2 = b1 - a1, b2 - a2
                        out += w[a1, a2] * w[b1, b2] * r11[c - half + s1:c + half + 1 + s1,
                                                           c - half + s2:c + half + 1 + s2]
        return out
    raise ParameterError("which must be '12' or '22'")


def _toeplitz_cov(table: np.ndarray, L: int) -> np.ndarray:
    """Dense covariance of a stationary field on ``{0..L-1}^2`` (row-major)."""
    c = (table.shape[0] - 1) // 2
    g = np.arange(L)
    d = g[None, :] - g[:, None] + c  # L x L
    return table[d[:, None, :, None], d[None, :, None, :]].reshape(L * L, L * L)


# ---------------------------------------------------------------------------
# factorization


def robust_cholesky(C: np.ndarray, what: str = "covariance") -> np.ndarray:
    """Lower Cholesky factor with a short diagonal-regularization ladder.

    Tries ``0``, ``1e-12 tr/M`` and ``1e-10 tr/M``; beyond that raises
    :class:`NumericalError` with the smallest eigenvalue.
    """
    M = C.shape[0]
    scale = np.trace(C) / M
    for eps in (0.0, 1e-12, 1e-10):
        try:
            A = C if eps == 0 else C + eps * scale * np.eye(M)
            return linalg.cholesky(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
    lam_min = float(linalg.eigvalsh(C, subset_by_index=[0, 0])[0])
    raise NumericalError(f"{what} ({M}x{M}) is not positive definite; smallest eigenvalue {lam_min:.3e}")


# ---------------------------------------------------------------------------
# samplers


class _CholeskySampler:
    """Shared draw logic: values = L @ normals, computed in aligned chunks."""

    _L: np.ndarray
    _sub = 0

    @property
    def dim(self) -> int:
        return self._L.shape[0]

    def _draw(self, seed, replicates) -> np.ndarray:
        replicates = np.asarray(replicates, dtype=np.int64).ravel()
        out = np.empty((replicates.size, self.dim))
        # group by aligned chunk so each replicate's arithmetic never depends
        # on which other replicates were requested alongside it
        chunks = {}
        for i, r in enumerate(replicates):
            chunks.setdefault(int(r) // CHUNK, []).append(i)
        for ch in chunks:
            reps = np.arange(ch * CHUNK, (ch + 1) * CHUNK)
            vals = (self._L @ _normal_block(seed, reps, self.dim, self._sub)).T
            for i in chunks[ch]:
                out[i] = vals[int(replicates[i]) - ch * CHUNK]
        return out


class FilteredSampler(_CholeskySampler):
    """Exact sampler of ``D^(m)_[1] X`` on ``{0..n-m-1}^2``."""

    def __init__(self, spec, n: int, m: int, cap: int = FILTERED_CAP):
        spec = spec if isinstance(spec, ModelSpec) else ModelSpec(spec)
        self.spec, self.n, self.m = spec, n, m
        self.L1 = n - m
        if self.L1 < 1:
            raise SizeError("grid too small")
        if self.L1**2 > cap:
            raise SizeError(f"M1={self.L1 ** 2} exceeds the filtered-direct cap {cap}")
        if spec.is_powerlaw:
            # draw on the unit lattice and rescale: the FD law is the ID law
            # times spacing^phi2 (exact self-similarity)
            base = ModelSpec(spec.model, 1.0)
            self._scale = spec.spacing ** spec.model.phi2
        else:
            base, self._scale = spec, 1.0
        table = filtered_cov_table(base, m, self.L1)
        self._L = robust_cholesky(_toeplitz_cov(table, self.L1), "filtered covariance")

    def sample(self, seed: int, replicates) -> np.ndarray:
        """Shape ``(R, n-m, n-m)``."""
        z = self._draw(seed, replicates).reshape(-1, self.L1, self.L1)
        if self._scale != 1.0:
            z = z * self._scale
        return z


def _anchored_cov_powerlaw(pts: np.ndarray, p: PowerLawParams, k: int) -> np.ndarray:
    """Covariance of the anchored power-law field at points ``pts`` (lattice units)."""
    g = math.gamma(-p.phi2) * p.phi1

    def K(a, b):
        d = a[:, None, :] - b[None, :, :]
        return g * np.hypot(d[..., 0], d[..., 1]) ** (2 * p.phi2)

    if k == 0:
        o = np.zeros((1, 2))
        gs = K(pts, o)[:, 0]
        # K(s-t) - K(s) - K(t) + K(0);  K = -gamma up to sign conventions
        return K(pts, pts) - gs[:, None] - gs[None, :]
    anchors = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    P = np.stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]], axis=1)
    Ka = K(pts, anchors)  # N x 3
    Kaa = K(anchors, anchors)
    return K(pts, pts) - P @ Ka.T - Ka @ P.T + P @ Kaa @ P.T


class AnchoredSampler(_CholeskySampler):
    """Sampler of an anchored power-law field ``X`` on ``Lambda_n``.

    IRF-0 (``phi2 < 1``): ``X(0,0) = 0`` and
    ``Cov(X_s, X_t) = gamma(s) + gamma(t) - gamma(s - t)``.
    IRF-1 (``1 < phi2 < 2``): values pinned to 0 at (0,0), (1,0), (0,1) with
    the affine-Lagrange anchored generalized covariance.
    """

    def __init__(self, spec, n: int, cap_n: int = ANCHORED_CAP_N):
        spec = spec if isinstance(spec, ModelSpec) else ModelSpec(spec)
        if not spec.is_powerlaw:
            raise ParameterError("anchored simulation is for power-law models")
        if n > cap_n:
            raise SizeError(f"n={n} exceeds the anchored cap {cap_n}")
        p = spec.model
        if p.phi2 > 2:
            raise ParameterError("anchored versions are implemented for phi2 < 2")
        self.spec, self.n, self.k = spec, n, p.order_k
        self._scale = spec.spacing ** p.phi2
        g = np.arange(n)
        T1, T2 = np.meshgrid(g, g, indexing="ij")
        pts = np.stack([T1.ravel(), T2.ravel()], 1).astype(float)
        pinned = [(0, 0)] if self.k == 0 else [(0, 0), (1, 0), (0, 1)]
        keep = np.ones(n * n, bool)
        for a, b in pinned:
            keep[a * n + b] = False
        self._free = np.flatnonzero(keep)
        C = _anchored_cov_powerlaw(pts[keep], p, self.k)
        self._L = robust_cholesky(C, "anchored covariance")

    def sample(self, seed: int, replicates) -> np.ndarray:
        v = self._draw(seed, replicates)
        out = np.zeros((v.shape[0], self.n * self.n))
        out[:, self._free] = v
        out = out.reshape(-1, self.n, self.n)
        if self._scale != 1.0:
            out = out * self._scale
        return out


class MaternSampler(_CholeskySampler):
    """Exact Matérn sampler at fixed locations (coordinates in model units)."""

    def __init__(self, locations, q: MaternParams, cap: int = MATERN_CAP):
        loc = np.asarray(locations, float).reshape(-1, 2)
        if loc.shape[0] > cap:
            raise SizeError(f"{loc.shape[0]} locations exceed the cap {cap}")
        d = loc[:, None, :] - loc[None, :, :]
        r = np.hypot(d[..., 0], d[..., 1])
        off = r[~np.eye(r.shape[0], dtype=bool)]
        if off.size and off.min() == 0:
            raise SingularityError("duplicate locations give a singular covariance")
        self.locations, self.q = loc, q
        self._L = robust_cholesky(matern_cov(r, q), "Matérn covariance")

    def sample(self, seed: int, replicates) -> np.ndarray:
        return self._draw(seed, replicates)


@lru_cache(maxsize=16)
def _filtered_sampler(spec, n, m):
    return FilteredSampler(spec, n, m)


@lru_cache(maxsize=8)
def _anchored_sampler(spec, n):
    return AnchoredSampler(spec, n)


@lru_cache(maxsize=8)
def _matern_grid_sampler(q, n, spacing):
    g = np.arange(n) * spacing
    T1, T2 = np.meshgrid(g, g, indexing="ij")
    return MaternSampler(np.stack([T1.ravel(), T2.ravel()], 1), q)


# ---------------------------------------------------------------------------
# plans and samples


@dataclass(frozen=True)
class JitterSpec:
    """Uniform jitter ``eps_t`` in ``[-c/n, c/n]^2`` (``c`` in lattice units)."""

    c: float
    refine: int = 1

    def __post_init__(self):
        if not 0 <= self.c < 0.5:
            raise ParameterError("jitter bound c must lie in [0, 1/2)")


@dataclass(frozen=True)
class SimPlan:
    spec: ModelSpec
    n: int
    mode: str = "filtered-direct"
    seed: int = 0
    replicate: int = 0
    m: int = 1
    jitter: Optional[JitterSpec] = None

    def __post_init__(self):
        if self.mode not in MODE_CODES:
            raise ParameterError(f"unknown simulation mode {self.mode!r}")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")
        if self.n < 2 * self.m + 2:
            raise SizeError(f"need n >= 2m+2, got n={self.n}, m={self.m}")
        if self.mode == "jittered" and self.jitter is None:
            raise ParameterError("jittered mode needs a JitterSpec")


@dataclass
class FieldSample:
    values: np.ndarray
    plan: SimPlan
    locations: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("non-finite simulated values")


def simulate_filtered(plan: SimPlan) -> FieldSample:
    s = _filtered_sampler(plan.spec, plan.n, plan.m)
    return FieldSample(s.sample(plan.seed, [plan.replicate])[0], plan)


def simulate_anchored(plan: SimPlan) -> FieldSample:
    s = _anchored_sampler(plan.spec, plan.n)
    return FieldSample(s.sample(plan.seed, [plan.replicate])[0], plan)


def simulate_matern(locations, q: MaternParams, seed: int, replicates=(0,)) -> np.ndarray:
    """Values with shape ``(len(replicates), len(locations))``."""
    return MaternSampler(locations, q).sample(seed, replicates)


def simulate(plan: SimPlan) -> FieldSample:
    if plan.mode == "filtered-direct":
        return simulate_filtered(plan)
    if plan.mode == "anchored":
        return simulate_anchored(plan)
    if plan.mode == "matern-direct":
        if plan.spec.is_powerlaw:
            raise ParameterError("matern-direct needs a Matérn model")
        s = _matern_grid_sampler(plan.spec.model, plan.n, plan.spec.spacing)
        return FieldSample(s.sample(plan.seed, [plan.replicate])[0].reshape(plan.n, plan.n), plan)
    clean, jit, draw = simulate_jittered(plan.spec, plan.n, plan.jitter.c, plan.seed, plan.replicate)
    return FieldSample(jit, plan, locations=draw.locations)


# ---------------------------------------------------------------------------
# jitter


@dataclass
class JitterDraw:
    offsets: np.ndarray  # lattice-unit offsets, shape (n, n, 2)
    locations: np.ndarray  # lattice-unit coordinates t + offset


def _cov_at_points(spec: ModelSpec, pts: np.ndarray) -> np.ndarray:
    if spec.is_powerlaw:
        p = spec.model
        return spec.spacing ** (2 * p.phi2) * _anchored_cov_powerlaw(pts, p, p.order_k)
    d = pts[:, None, :] - pts[None, :, :]
    return matern_cov(spec.spacing * np.hypot(d[..., 0], d[..., 1]), spec.model)


def simulate_jittered(spec: ModelSpec, n: int, c: float, seed: int, replicate: int):
    """Joint draw of the clean grid field and the field at jittered sites.

    Sites are ``t + u_t`` in lattice units, ``u_t`` i.i.d. uniform on
    ``[-c, c]^2`` (i.e. ``eps_t = u_t / n`` on ``[0,1]^2``).  The clean values
    use the same normals as the unjittered sampler; the jittered values are
    drawn from their conditional law given the clean ones.  Power-law models
    use the pinned (anchored) version.  Returns ``(clean, jittered, draw)``.
    """
    JitterSpec(c)
    if n * n > 2048:
        raise SizeError("jittered simulation is capped at n*n <= 2048")
    g = np.arange(n)
    T1, T2 = np.meshgrid(g, g, indexing="ij")
    grid = np.stack([T1.ravel(), T2.ravel()], 1).astype(float)
    u = (2.0 * uniforms(seed, replicate, 2 * n * n, sub=1) - 1.0).reshape(-1, 2) * c
    if spec.is_powerlaw:
        k = spec.model.order_k
        # anchors stay fixed; their jittered copies coincide with them
        pinned = [0] if k == 0 else [0, n, 1]
        u[pinned] = 0.0
    jit = grid + u
    z = normals(seed, replicate, 2 * n * n, sub=0)
    if spec.is_powerlaw:
        free = np.setdiff1d(np.arange(n * n), pinned)
    else:
        free = np.arange(n * n)
    C_cc = _cov_at_points(spec, grid[free])
    Lc = robust_cholesky(C_cc, "clean covariance")
    x_free = Lc @ z[:free.size]
    clean = np.zeros(n * n)
    clean[free] = x_free
    jitv = np.zeros(n * n)
    if c == 0:
        jitv[:] = clean
    else:
        both = np.concatenate([grid[free], jit[free]])
        C = _cov_at_points(spec, both)
        F = free.size
        C_jc = C[F:, :F]
        C_jj = C[F:, F:]
        A = linalg.cho_solve((Lc, True), C_jc.T, check_finite=False).T
        mean = A @ x_free
        S = C_jj - A @ C_jc.T
        S = 0.5 * (S + S.T)
        ev, V = linalg.eigh(S, check_finite=False)
        tol = 1e-10 * max(ev.max(), 0.0) * S.shape[0]
        if ev.min() < -max(tol, 1e-12 * np.trace(C_jj) / F):
            raise NumericalError(f"conditional covariance is not PSD (min eigenvalue {ev.min():.3e})")
        root = V * np.sqrt(np.clip(ev, 0.0, None))
        jitv[free] = mean + root @ z[n * n:n * n + F]
    return clean.reshape(n, n), jitv.reshape(n, n), JitterDraw(u.reshape(n, n, 2), jit.reshape(n, n, 2))


# ---------------------------------------------------------------------------
# dump formats


def write_rsf1(path, sample: FieldSample) -> None:
    """Binary dump: b"RSF1", then n, m, mode code, seed (little-endian int64),
    then row-major float64 values."""
    v = np.ascontiguousarray(sample.values, dtype="<f8")
    p = sample.plan
    seed = p.seed if p.seed < 2**63 else p.seed - 2**64
    with open(path, "wb") as fh:
        fh.write(b"RSF1")
        fh.write(struct.pack("<4q", v.shape[0], p.m, MODE_CODES[p.mode], seed))
        fh.write(v.tobytes())


def read_rsf1(path):
    """Returns ``(values, meta)`` where meta has n, m, mode, seed."""
    data = Path(path).read_bytes()
    if data[:4] != b"RSF1":
        raise ParameterError("not an RSF1 file")
    L, m, mode, seed = struct.unpack("<4q", data[4:36])
    vals = np.frombuffer(data[36:], dtype="<f8")
    if vals.size != L * L:
        raise ParameterError("RSF1 payload size does not match its header")
    modes = {v: k for k, v in MODE_CODES.items()}
    return vals.reshape(L, L).copy(), {"n": L, "m": m, "mode": modes.get(mode, mode), "seed": seed % 2**64}


def write_csv(path, values: np.ndarray) -> None:
    """CSV dump with header ``t1,t2,value`` (shortest round-trip floats)."""
    v = np.asarray(values)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t1,t2,value\n")
        for (t1, t2), x in np.ndenumerate(v):
            fh.write(f"{t1},{t2},{float(x)!r}\n")


def read_csv(path) -> np.ndarray:
    """Inverse of :func:`write_csv`: a ``t1,t2,value`` file back to a square grid."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as e:
        raise ParameterError(f"malformed field CSV {path}: {e}") from e
    if data.shape[1] != 3:
        raise ParameterError("field CSV needs columns t1,t2,value")
    idx = data[:, :2].astype(int)
    n = int(idx.max()) + 1 if idx.size else 0
    if n * n != data.shape[0]:
        raise ParameterError("field CSV does not cover a square grid")
    out = np.full((n, n), np.nan)
    out[idx[:, 0], idx[:, 1]] = data[:, 2]
    if np.isnan(out).any():
        raise ParameterError("field CSV has missing sites")
    return out
