"""Covariance prediction for the two-scale quadratic variations.

Three engines for ``Cov(Q1, Q2)``:

``finite_cov_qq``
    exact on the finite lattice, by the Gaussian fourth-moment (Wick) identity
    written as a lag sum ``(2 / M_j M_k) sum_u N_jk(u) r_jk(u)^2``;
``dense_cov_qq``
    the same quantity as ``2 tr(A_j S A_k S)`` with dense matrices (an oracle
    for small grids);
``torus_cov_qq``
    periodic ``n x n`` torus with a truncated aliasing sum (Riemann sum of the
    spectral integral on the Fourier grid);
``asymptotic_sigma``
    the limit ``Sigma_lr = 2 int b_l b_r F^2 dmu`` by dyadic Gauss-Legendre.

The delta method then maps ``Sigma`` to the covariance of
``(log phi1_hat, phi2_hat)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalError, ParameterError, QuadratureError, SizeError
from .fieldsim import cross_cov_table, filtered_cov, filtered_cov_table, _toeplitz_cov
from .gcmodel import (
    LatticeSpectrum,
    MaternParams,
    ModelSpec,
    PowerLawParams,
    a_m,
    a_m_prime,
    aliased_spectrum,
    matern_tangent,
)
from .lattice import B_symbol, TRIM_MODES, build_H_matrix, symbol_sq

__all__ = [
    "S_CONST",
    "CovPrediction",
    "FiniteLatticeEngine",
    "finite_cov_qq",
    "dense_cov_qq",
    "torus_cov_qq",
    "asymptotic_sigma",
    "delta_jacobian",
    "estimator_cov",
    "EstimatorSummary",
    "fd_predictions",
    "FdPrediction",
    "ratio_taylor",
    "matern_fd_means",
    "MaternFdMeans",
    "trimming_variance",
    "table1_theory",
    "table2_theory",
    "FINITE_CAP",
]

S_CONST = 1.0 / (2.0 * math.log(2.0))
FINITE_CAP = 128
DENSE_CAP = 20


def _spec(model) -> ModelSpec:
    return model if isinstance(model, ModelSpec) else ModelSpec(model)


@dataclass
class CovPrediction:
    """Raw covariance of the quadratic variations plus the delta-method map.

    ``cov_qq`` is ``Cov(Q1, Q2)`` itself (not scaled); ``scale_size`` is the
    count ``M`` whose square root is the conventional normalisation
    (``M_int = (n-2m)^2`` on the finite lattice, ``N = n^2`` on the torus,
    1 for the asymptotic limit, where ``cov_qq`` already is ``Sigma``).
    """

    cov_qq: np.ndarray
    q1: float
    q2: float
    m: int
    kind: str
    n: Optional[int] = None
    scale_size: float = 1.0
    trim_mode: Optional[str] = None
    jacobian: np.ndarray = field(default=None, repr=False)
    omega: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.cov_qq = 0.5 * (self.cov_qq + self.cov_qq.T)
        if np.linalg.eigvalsh(self.cov_qq).min() < -1e-12 * np.abs(self.cov_qq).max():
            raise NumericalError("covariance of (Q1, Q2) is not PSD")
        self.jacobian = delta_jacobian(self.q1, self.q2, self.m, form="K")
        self.omega = self.jacobian @ self.cov_qq @ self.jacobian.T

    @property
    def sigma_qq(self) -> np.ndarray:
        """``Cov`` of ``sqrt(M) (Q - q)``."""
        return self.scale_size * self.cov_qq

    @property
    def phi2(self) -> float:
        return 0.5 * math.log2(self.q2 / self.q1)


# ---------------------------------------------------------------------------
# finite lattice


def _mult(La: int, Lb: int, u: np.ndarray) -> np.ndarray:
    """``#{t in [0, La): t + u in [0, Lb)}``."""
    return np.maximum(0, np.minimum(La, Lb - u) - np.maximum(0, -u))


class FiniteLatticeEngine:
    """Lag tables of the step-1/step-2 filtered fields on an ``n x n`` grid."""

    def __init__(self, model, n: int, m: int, cap: int = FINITE_CAP):
        if n > cap:
            raise SizeError(f"n={n} exceeds the finite-lattice cap {cap}")
        if n <= 2 * m:
            raise SizeError("need n > 2m")
        self.spec = _spec(model)
        self.n, self.m = n, m
        self.r11 = filtered_cov_table(self.spec, m, n)  # lags +-(n-1)
        self.r12 = cross_cov_table(self.r11, m, "12")  # lags +-(n-1-m)
        self.r22 = cross_cov_table(self.r11, m, "22")
        self.q1 = float(self.r11[n - 1, n - 1])
        self.q2 = float(self.r22[n - 1 - m, n - 1 - m])

    def sizes(self, trim_mode: str):
        n, m = self.n, self.m
        if trim_mode == "per_step":
            return n - m, n - 2 * m
        if trim_mode == "common":
            return n - 2 * m, n - 2 * m
        raise ParameterError(f"trim_mode must be one of {TRIM_MODES}")

    def _lag_sum(self, table, La, Lb, wa=None):
        c = (table.shape[0] - 1) // 2
        u = np.arange(-c, c + 1)
        w = _mult(La, Lb, u)
        return float(w @ (table**2) @ w)

    def cov(self, trim_mode: str = "per_step") -> np.ndarray:
        L1, L2 = self.sizes(trim_mode)
        s11 = self._lag_sum(self.r11, L1, L1)
        s22 = self._lag_sum(self.r22, L2, L2)
        s12 = self._lag_sum(self.r12, L1, L2)
        M1, M2 = L1 * L1, L2 * L2
        return 2.0 * np.array([[s11 / M1**2, s12 / (M1 * M2)], [s12 / (M1 * M2), s22 / M2**2]])

    def trimming_variance(self) -> float:
        """``Var(Q1 - Q1_common)`` exactly."""
        L1, L2 = self.n - self.m, self.n - 2 * self.m
        M1, M2 = L1 * L1, L2 * L2
        aa = self._lag_sum(self.r11, L1, L1)
        ab = self._lag_sum(self.r11, L1, L2)
        bb = self._lag_sum(self.r11, L2, L2)
        return 2.0 * (aa / M1**2 - 2.0 * ab / (M1 * M2) + bb / M2**2)


def finite_cov_qq(n: int, m: int, model, trim_mode: str = "per_step") -> CovPrediction:
    """Exact finite-lattice covariance of ``(Q1, Q2)`` (kind ``finite-lattice``)."""
    eng = FiniteLatticeEngine(model, n, m)
    C = eng.cov(trim_mode)
    return CovPrediction(C, eng.q1, eng.q2, m, "finite-lattice", n=n,
                         scale_size=float((n - 2 * m) ** 2), trim_mode=trim_mode)


def dense_cov_qq(n: int, m: int, model, trim_mode: str = "per_step") -> np.ndarray:
    """``Cov(Q_j, Q_k) = 2 tr(A_j S A_k S)`` with dense matrices (small ``n``)."""
    if n > DENSE_CAP:
        raise SizeError(f"dense oracle is capped at n={DENSE_CAP}")
    spec = _spec(model)
    L1, L2 = n - m, n - 2 * m
    S = _toeplitz_cov(filtered_cov_table(spec, m, L1), L1)
    H = build_H_matrix(n, m).toarray()
    if trim_mode == "per_step":
        A1 = np.eye(L1 * L1) / (L1 * L1)
    else:
        g = np.arange(L1)
        keep = ((g[:, None] < L2) & (g[None, :] < L2)).ravel().astype(float)
        A1 = np.diag(keep) / (L2 * L2)
    A2 = H.T @ H / (L2 * L2)
    As = [A1 @ S, A2 @ S]
    return np.array([[2.0 * np.trace(As[j] @ As[k]) for k in range(2)] for j in range(2)])


# ---------------------------------------------------------------------------
# torus and asymptotic


def torus_cov_qq(n: int, m: int, model, alias_radius: int = 6, tail: bool = False) -> CovPrediction:
    """Covariance on the periodic ``n x n`` torus (kind ``torus``).

    ``F(lam_k) = |g_m(lam_k)|^2 f_X(lam_k)`` on the Fourier grid
    ``lam_k = 2 pi k / n`` (wrapped into ``(-pi, pi]``), with the zero
    frequency dropped, and ``Cov(Q_l, Q_r) = (2/N^2) sum_k b_l b_r F^2``.
    The default truncated aliasing sum (``|k|_inf <= 6``, no tail) is the
    convention under which the published IRF-1 theory column is reproduced.
    """
    spec = _spec(model)
    k = np.arange(n)
    lam = 2 * np.pi * k / n
    lam = np.where(lam > np.pi, lam - 2 * np.pi, lam)
    L1, L2 = np.meshgrid(lam, lam, indexing="ij")
    g2 = symbol_sq(L1, L2, m)
    pts = np.stack([L1, L2], -1)
    pts[0, 0] = (np.pi / 2, np.pi / 2)  # placeholder, zeroed below
    F = g2 * aliased_spectrum(pts, spec.lattice_spectrum(alias_radius, tail))
    F[0, 0] = 0.0
    b2 = B_symbol(L1, L2, m)
    N = n * n
    F2 = F * F
    C = 2.0 / N**2 * np.array([[F2.sum(), (F2 * b2).sum()], [(F2 * b2).sum(), (F2 * b2 * b2).sum()]])
    return CovPrediction(C, float(F.mean()), float((F * b2).mean()), m, "torus", n=n, scale_size=float(N))


_GLX, _GLW = np.polynomial.legendre.leggauss(20)


def _square_rule(x0, x1, y0, y1, order):
    x, w = np.polynomial.legendre.leggauss(order)
    xs = 0.5 * (x1 - x0) * x + 0.5 * (x1 + x0)
    ys = 0.5 * (y1 - y0) * x + 0.5 * (y1 + y0)
    W = np.outer(w, w) * 0.25 * (x1 - x0) * (y1 - y0)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return X.ravel(), Y.ravel(), W.ravel()


def _dyadic_nodes(levels: int, order: int):
    """Quadrature on ``[0, pi]^2`` refined dyadically toward the origin."""
    xs, ys, ws = [], [], []
    for k in range(levels):
        a, b = math.pi * 2.0**-(k + 1), math.pi * 2.0**-k
        for (x0, x1, y0, y1) in ((a, b, 0, a), (0, a, a, b), (a, b, a, b)):
            X, Y, W = _square_rule(x0, x1, y0, y1, order)
            xs.append(X); ys.append(Y); ws.append(W)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


def asymptotic_sigma(m: int, model, levels: int = 40, order: int = 20,
                     alias_radius: int = 30, rtol: float = 1e-6) -> CovPrediction:
    """Limit ``Sigma_lr = 2 int b_l b_r F^2 dmu`` (kind ``asymptotic``).

    Tensor Gauss-Legendre on dyadic L-shaped annuli of ``[0, pi]^2`` (the
    integrand has the full dihedral symmetry of the square); the estimate
    at ``order`` is checked against ``order - 6`` and a
    :class:`QuadratureError` is raised if they disagree by more than ``rtol``.
    """
    spec = _spec(model)
    r = spec.roughness
    if spec.is_powerlaw and not (0 < r < m):
        raise ParameterError("need 0 < phi2 < m")

    def integrate(order_):
        X, Y, W = _dyadic_nodes(levels, order_)
        F = symbol_sq(X, Y, m) * aliased_spectrum(np.stack([X, Y], -1), spec.lattice_spectrum(alias_radius))
        b2 = B_symbol(X, Y, m)
        mu = 4.0 / (2 * math.pi) ** 2  # four quadrants, (2 pi)^-2 dl
        F2 = F * F * W * mu
        S = 2.0 * np.array([[F2.sum(), (F2 * b2).sum()], [(F2 * b2).sum(), (F2 * b2 * b2).sum()]])
        q = np.array([(F * W).sum() * mu, (F * b2 * W).sum() * mu])
        return S, q

    S, q = integrate(order)
    S_lo, _ = integrate(order - 6)
    err = np.abs(S - S_lo).max() / np.abs(S).max()
    if err > rtol:
        raise QuadratureError(f"asymptotic Sigma did not converge (rel. diff {err:.2e} > {rtol:.0e})")
    return CovPrediction(S, float(q[0]), float(q[1]), m, "asymptotic", scale_size=1.0)


# ---------------------------------------------------------------------------
# delta method


def delta_jacobian(q1: float, q2: float, m: int, form: str = "J") -> np.ndarray:
    """Jacobian of ``(q1, q2) -> (phi1, phi2)`` (``form='J'``) or of
    ``(q1, q2) -> (log phi1, phi2)`` (``form='K'``, ``K = diag(1/phi1, 1) J``).

    With ``s = 1/(2 ln 2)``, ``A = a_m(phi2)``, ``A' = a_m'(phi2)``:
    ``J = [[1/A + s A'/A^2, -s A'/A^2 q1/q2], [-s/q1, s/q2]]``.
    """
    if not (q1 > 0 and q2 > 0):
        raise ParameterError("q1 and q2 must be positive")
    phi2 = 0.5 * math.log2(q2 / q1)
    A, Ap = a_m(phi2, m), a_m_prime(phi2, m)
    s = S_CONST
    J = np.array([[1.0 / A + s * Ap / A**2, -s * Ap / A**2 * (q1 / q2)],
                  [-s / q1, s / q2]])
    if form == "J":
        return J
    if form == "K":
        phi1 = q1 / A
        return np.diag([1.0 / phi1, 1.0]) @ J
    raise ParameterError("form must be 'J' or 'K'")


@dataclass(frozen=True)
class EstimatorSummary:
    sd_log_phi1: float
    sd_phi2: float
    corr: float
    scale: float
    kind: str

    def as_tuple(self):
        return (self.sd_log_phi1, self.sd_phi2, self.corr)


def estimator_cov(pred: CovPrediction, scale: str = "log-phi1", size: Optional[float] = None):
    """Estimator covariance ``Omega`` and scaled summary.

    ``scale='log-phi1'`` (equivalently ``'ratio'``, the first-order ratio
    form ``phi1_hat/phi1 - 1``) uses ``K Sigma K^T``; ``'raw'`` uses
    ``J Sigma J^T``.  SDs are multiplied by ``sqrt(size)`` (default: the
    prediction's own ``scale_size``).
    """
    if scale in ("log-phi1", "ratio"):
        O = pred.omega
    elif scale == "raw":
        J = delta_jacobian(pred.q1, pred.q2, pred.m, "J")
        O = J @ pred.cov_qq @ J.T
    else:
        raise ParameterError("scale must be raw, log-phi1 or ratio")
    if np.linalg.eigvalsh(O).min() < -1e-12 * np.abs(O).max():
        raise NumericalError("Omega is not PSD")
    sz = pred.scale_size if size is None else size
    sd = np.sqrt(np.diag(O) * sz)
    return O, EstimatorSummary(float(sd[0]), float(sd[1]), float(O[0, 1] / math.sqrt(O[0, 0] * O[1, 1])),
                               float(sz), pred.kind)


def ratio_taylor(pred: CovPrediction) -> float:
    """Second-order approximation of ``E[Q2/Q1]``:
    ``(q2/q1)(1 + Var Q1/q1^2 - Cov(Q1,Q2)/(q1 q2))``."""
    C = pred.cov_qq
    return pred.q2 / pred.q1 * (1.0 + C[0, 0] / pred.q1**2 - C[0, 1] / (pred.q1 * pred.q2))


# ---------------------------------------------------------------------------
# fixed-domain forms


@dataclass(frozen=True)
class FdPrediction:
    unstabilized: np.ndarray
    stabilized: np.ndarray
    A_N: np.ndarray
    corr_unstabilized: float
    cond_unstabilized: float
    cond_stabilized: float


def fd_predictions(pred: CovPrediction, N: int) -> FdPrediction:
    """FD covariance forms from an ID prediction.

    The unstabilized vector is ``(log(N^tau2_hat tau1_hat / phi1), tau2_hat - tau2)
    = B_N (log(tau1_hat/tau1), tau2_hat - tau2)`` with
    ``B_N = [[1, log N], [0, 1]]``; ``A_N = B_N^-1`` restores ``Omega``.
    """
    O = pred.omega
    lN = math.log(N)
    B = np.array([[1.0, lN], [0.0, 1.0]])
    A = np.array([[1.0, -lN], [0.0, 1.0]])
    U = B @ O @ B.T
    S = A @ U @ A.T
    return FdPrediction(U, S, A, float(U[0, 1] / math.sqrt(U[0, 0] * U[1, 1])),
                        float(np.linalg.cond(U)), float(np.linalg.cond(S)))


@dataclass(frozen=True)
class MaternFdMeans:
    n: int
    exact: tuple
    leading: tuple
    ratio: float
    kappa_nu: float
    tangent_phi1: float


def matern_fd_means(q: MaternParams, m: int, n: int) -> MaternFdMeans:
    """Exact FD means of ``Q_j`` under Matérn truth and their leading terms.

    The leading term is the tangent power-law mean
    ``phi1_tan a_m(nu) j^(2 nu) n^(-2 nu)`` with
    ``phi1_tan = c_Mat / |Gamma(-nu)|``, which is also the limit
    ``kappa_nu`` of ``n^(2 phi2_hat) phi1_hat``.
    """
    if m < 1:
        raise ParameterError("need m >= 1")
    spec = ModelSpec.fd(q, n)
    zero = np.zeros(2)
    ex = tuple(float(filtered_cov(zero, m, j, spec)) for j in (1, 2))
    tan = matern_tangent(q)
    A = a_m(q.nu, m)
    lead = tuple(tan.phi1 * A * j ** (2 * q.nu) * n ** (-2 * q.nu) for j in (1, 2))
    return MaternFdMeans(n, ex, lead, ex[1] / ex[0], tan.phi1, tan.phi1)


def trimming_variance(n: int, m: int, model) -> float:
    """``Var(sqrt(N) (Q1 - Q1_common))`` exactly, ``N = n^2``."""
    return n * n * FiniteLatticeEngine(model, n, m).trimming_variance()


# ---------------------------------------------------------------------------
# table conventions


def table1_theory(n: int, phi2: float, phi1: float = 1.0, m: int = 1) -> EstimatorSummary:
    """Finite-lattice delta-method prediction: common interior ``Q°``,
    scaled by ``sqrt(M_int)``, ``M_int = (n-2m)^2``."""
    pred = finite_cov_qq(n, m, PowerLawParams(phi1, phi2), "common")
    return estimator_cov(pred)[1]


def table2_theory(n: int, phi2: float, phi1: float = 1.0, m: int = 2, alias_radius: int = 6):
    """Torus prediction with truncated aliasing; returns
    ``(summary scaled by sqrt(N), torus mean ratio q2/q1, Taylor ratio)``."""
    pred = torus_cov_qq(n, m, PowerLawParams(phi1, phi2), alias_radius)
    return estimator_cov(pred)[1], pred.q2 / pred.q1, ratio_taylor(finite_cov_qq(n, m, PowerLawParams(phi1, phi2)))
