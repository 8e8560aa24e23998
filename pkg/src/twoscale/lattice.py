"""Bilinear difference filters, block sums, symbols and quadratic variations.

Fields are arrays indexed ``X[t1, t2]`` on ``{0, ..., n-1}^2``; leading axes
are treated as a batch of independent replicates.  Filtering is a direct
stencil sum over shifted slices (no FFT), so results are exactly
reproducible and identical between batched and single-field calls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .errors import DegenerateFieldError, ParameterError, SizeError
from .gcmodel import stencil_coefficients

__all__ = [
    "Stencil",
    "QvStats",
    "FilterMatrix",
    "apply_filter",
    "block_sum",
    "block_weights",
    "symbol",
    "symbol_sq",
    "h_symbol",
    "B_symbol",
    "quadratic_variations",
    "qv_arrays",
    "qv_from_increments",
    "laplacian_filter",
    "laplacian_qv",
    "build_filter_matrix",
    "build_H_matrix",
    "assemble_B",
    "TRIM_MODES",
    "FILTER_MATRIX_CAP",
]

TRIM_MODES = ("per_step", "common")
FILTER_MATRIX_CAP = 64


@dataclass(frozen=True)
class Stencil:
    """Order-``m`` bilinear difference with step ``j``."""

    m: int
    j: int = 1

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ParameterError("stencil order m must be a positive integer")
        if self.j not in (1, 2):
            raise ParameterError("step j must be 1 or 2")

    @property
    def coeffs(self) -> np.ndarray:
        return stencil_coefficients(self.m)

    @property
    def span(self) -> int:
        """Footprint side minus one: ``j * m``."""
        return self.j * self.m

    def moment(self, p: int, q: int) -> int:
        """Exact integer moment ``sum_a c_a a1^p a2^q``."""
        c = self.coeffs
        a = range(self.m + 1)
        return int(sum(int(c[a1, a2]) * a1**p * a2**q for a1 in a for a2 in a))

    @property
    def sq_norm(self) -> int:
        return int(np.sum(self.coeffs.astype(np.int64) ** 2))


def _as_field(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise SizeError(f"expected square grid(s) with shape (..., n, n), got {x.shape}")
    return x


def apply_filter(x, m: int, j: int = 1) -> np.ndarray:
    """``D^(m)_[j] X_t = sum_a c_a X_(t + j a)`` on ``{0..n-jm-1}^2``."""
    st = Stencil(m, j)
    x = _as_field(x)
    n = x.shape[-1]
    L = n - st.span
    if L < 1:
        raise SizeError(f"grid n={n} too small for m={m}, j={j}")
    c = st.coeffs
    out = np.zeros(x.shape[:-2] + (L, L))
    for a1 in range(m + 1):
        for a2 in range(m + 1):
            s1, s2 = j * a1, j * a2
            out += float(c[a1, a2]) * x[..., s1:s1 + L, s2:s2 + L]
    return out


@lru_cache(maxsize=None)
def block_weights(m: int) -> np.ndarray:
    """Block-sum weights ``binom(m, a1) binom(m, a2)``."""
    b = np.array([math.comb(m, a) for a in range(m + 1)], dtype=float)
    w = np.outer(b, b)
    w.setflags(write=False)
    return w


def block_sum(z, m: int) -> np.ndarray:
    """``(H^(m) Z)_t = sum_a binom(m,a1) binom(m,a2) Z_(t+a)``.

    Maps step-1 filtered values to step-2 filtered values exactly.
    """
    z = _as_field(z)
    L = z.shape[-1] - m
    if L < 1:
        raise SizeError("grid too small for the block-sum window")
    w = block_weights(m)
    out = np.zeros(z.shape[:-2] + (L, L))
    for a1 in range(m + 1):
        for a2 in range(m + 1):
            out += w[a1, a2] * z[..., a1:a1 + L, a2:a2 + L]
    return out


# ---------------------------------------------------------------------------
# frequency symbols


def symbol(lam1, lam2, m: int, j: int = 1):
    """``g_m^[j](lam) = (1 - e^{i j lam1})^m (1 - e^{i j lam2})^m``."""
    lam1, lam2 = np.asarray(lam1, float), np.asarray(lam2, float)
    return (1 - np.exp(1j * j * lam1)) ** m * (1 - np.exp(1j * j * lam2)) ** m


def symbol_sq(lam1, lam2, m: int, j: int = 1):
    """``|g_m^[j]|^2 = 16^m prod sin^(2m)(j lam_i / 2)``."""
    s = np.sin(j * np.asarray(lam1, float) / 2) ** 2 * np.sin(j * np.asarray(lam2, float) / 2) ** 2
    return 16.0**m * s**m


def h_symbol(lam1, lam2, m: int):
    return (1 + np.exp(1j * np.asarray(lam1, float))) ** m * (1 + np.exp(1j * np.asarray(lam2, float))) ** m


def B_symbol(lam1, lam2, m: int):
    """``B_m = |h_m|^2 = prod (2 cos(lam_i/2))^(2m)``."""
    c = (2 * np.cos(np.asarray(lam1, float) / 2)) ** 2 * (2 * np.cos(np.asarray(lam2, float) / 2)) ** 2
    return c**m


# ---------------------------------------------------------------------------
# quadratic variations


@dataclass(frozen=True)
class QvStats:
    """Two-scale quadratic variations and the index-set sizes behind them.

    ``q1``/``q2`` computed from data are ``np.longdouble`` scalars; estimators
    form the ratio before rounding to float64.
    """

    q1: float
    q2: float
    m1: int
    m2: int
    m: int
    trim_mode: str = "per_step"

    def __post_init__(self):
        if self.q1 < 0 or self.q2 < 0:
            raise ParameterError("quadratic variations must be nonnegative")

    @property
    def degenerate(self) -> bool:
        return self.q1 == 0 or self.q2 == 0

    @property
    def ratio(self) -> float:
        if self.degenerate:
            raise DegenerateFieldError("quadratic variations vanish")
        return self.q2 / self.q1


def _mean_sq(z: np.ndarray) -> np.ndarray:
    # Accumulated in extended precision (where the platform has it) so that
    # the Q-ratio is scale-equivariant to well below one float64 ulp;
    # contiguous per-field rows => same summation order batched or not.
    flat = np.ascontiguousarray(z, dtype=np.longdouble).reshape(z.shape[:-2] + (-1,))
    return np.sum(flat * flat, axis=-1) / flat.shape[-1]


def qv_from_increments(z1, m: int, trim_mode: str = "per_step"):
    """``(Q1, Q2, M1, M2)`` from step-1 filtered values on ``{0..L-1}^2``.

    ``Q1``/``Q2`` are ``np.longdouble`` (extended-precision accumulation).

    ``per_step`` uses each step's full valid interior (``M_j = (n - j m)^2``);
    ``common`` restricts both steps to ``{0..n-2m-1}^2``.
    """
    if trim_mode not in TRIM_MODES:
        raise ParameterError(f"trim_mode must be one of {TRIM_MODES}")
    z1 = _as_field(z1)
    z2 = block_sum(z1, m)
    L2 = z2.shape[-1]
    if trim_mode == "common":
        z1 = z1[..., :L2, :L2]
    return _mean_sq(z1), _mean_sq(z2), z1.shape[-1] ** 2, L2**2


def qv_arrays(x, m: int, trim_mode: str = "per_step"):
    """Batched ``(Q1, Q2)`` arrays for fields of shape ``(..., n, n)``."""
    x = _as_field(x)
    if x.shape[-1] <= 2 * m:
        raise SizeError(f"need n > 2m, got n={x.shape[-1]}, m={m}")
    q1, q2, _, _ = qv_from_increments(apply_filter(x, m, 1), m, trim_mode)
    return q1, q2


def quadratic_variations(x, m: int, trim_mode: str = "per_step") -> QvStats:
    """Quadratic variations of a single field at steps 1 and 2.

    A field whose QVs vanish yields a :class:`QvStats` with ``degenerate``
    set; estimators refuse it.
    """
    x = _as_field(x)
    if x.ndim != 2:
        raise SizeError("quadratic_variations takes one field; use qv_arrays for batches")
    if x.shape[-1] <= 2 * m:
        raise SizeError(f"need n > 2m, got n={x.shape[-1]}, m={m}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("field has non-finite values")
    q1, q2, m1, m2 = qv_from_increments(apply_filter(x, m, 1), m, trim_mode)
    return QvStats(np.longdouble(q1), np.longdouble(q2), int(m1), int(m2), m, trim_mode)


# ---------------------------------------------------------------------------
# five-point Laplacian


def laplacian_filter(x, h: int = 1) -> np.ndarray:
    """Five-point Laplacian at step ``h`` on ``{0..n-2h-1}^2`` (centre ``t + (h, h)``)."""
    x = _as_field(x)
    n = x.shape[-1]
    L = n - 2 * h
    if L < 1:
        raise SizeError("grid too small for the Laplacian")
    c = x[..., h:h + L, h:h + L]
    return (x[..., 2 * h:2 * h + L, h:h + L] + x[..., 0:L, h:h + L]
            + x[..., h:h + L, 2 * h:2 * h + L] + x[..., h:h + L, 0:L] - 4.0 * c)


def laplacian_qv(x):
    """Batched ``(Q_Delta,1, Q_Delta,2)``."""
    return _mean_sq(laplacian_filter(x, 1)), _mean_sq(laplacian_filter(x, 2))


# ---------------------------------------------------------------------------
# explicit matrices (verification scale only)


@dataclass
class FilterMatrix:
    """Sparse ``F^(m)_[j]`` (rows: ``t`` in ``{0..n-jm-1}^2`` row-major)."""

    F: sparse.csr_matrix
    n: int
    m: int
    j: int

    @property
    def rows(self) -> int:
        return self.F.shape[0]

    @property
    def cols(self) -> int:
        return self.F.shape[1]

    def A(self) -> sparse.csr_matrix:
        """``A = F^T F / M_j`` so that ``Q_j = x^T A x``."""
        return (self.F.T @ self.F / self.rows).tocsr()


def _check_cap(n, cap):
    if n > cap:
        raise SizeError(f"n={n} exceeds the explicit-matrix cap {cap}")


def _stencil_matrix(n_in, weights, step, L):
    k = weights.shape[0]
    rows, cols, vals = [], [], []
    t1, t2 = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    r = (t1 * L + t2).ravel()
    for a1 in range(k):
        for a2 in range(k):
            if weights[a1, a2] == 0:
                continue
            rows.append(r)
            cols.append(((t1 + step * a1) * n_in + (t2 + step * a2)).ravel())
            vals.append(np.full(r.size, float(weights[a1, a2])))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(L * L, n_in * n_in))


def build_filter_matrix(n: int, m: int, j: int, cap: int = FILTER_MATRIX_CAP) -> FilterMatrix:
    _check_cap(n, cap)
    st = Stencil(m, j)
    L = n - st.span
    if L < 1:
        raise SizeError("grid too small for the stencil")
    return FilterMatrix(_stencil_matrix(n, st.coeffs, j, L), n, m, j)


def build_H_matrix(n: int, m: int, cap: int = FILTER_MATRIX_CAP) -> sparse.csr_matrix:
    """Block-sum matrix ``H^(m)``: ``(n-2m)^2 x (n-m)^2``."""
    _check_cap(n, cap)
    L1 = n - m
    L2 = n - 2 * m
    if L2 < 1:
        raise SizeError("grid too small for the block sum")
    return _stencil_matrix(L1, block_weights(m), 1, L2)


def assemble_B(alpha: float, beta: float, n: int, m: int, cap: int = FILTER_MATRIX_CAP):
    """``B = (alpha/M1) I + (beta/M2) H^T H`` acting on step-1 filtered values."""
    H = build_H_matrix(n, m, cap)
    M1 = H.shape[1]
    M2 = H.shape[0]
    return (alpha / M1) * sparse.identity(M1, format="csr") + (beta / M2) * (H.T @ H)
