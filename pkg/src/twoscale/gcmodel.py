"""Power-law and Matérn covariance models on the plane.

Generalized covariances, semivariograms, continuum and lattice (aliased)
spectral densities, and the stencil scale function ``a_m``.

Spectral convention: angular frequency throughout, with

    cov(h) = (2 pi)^-2 * integral exp(i w.h) f(w) dw,

i.e. the measure ``mu(dl) = (2 pi)^-2 dl`` on the torus.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import ParameterError, SingularityError

__all__ = [
    "PowerLawParams",
    "MaternParams",
    "TangentPL",
    "ModelSpec",
    "LatticeSpectrum",
    "gc_powerlaw",
    "gc_powerlaw_integer",
    "semivariogram_powerlaw",
    "matern_cov",
    "matern_semivariogram",
    "matern_tangent",
    "spectral_constant",
    "spectral_density_continuum",
    "aliased_spectrum",
    "stencil_coefficients",
    "stencil_autocorrelation",
    "a_m",
    "a_m_prime",
    "filtered_spectrum",
    "domination_check",
]

DEFAULT_ALIAS_RADIUS = 30


def _check_finite(*xs):
    for x in xs:
        if not np.all(np.isfinite(np.asarray(x, dtype=float))):
            raise ParameterError("non-finite input")


@dataclass(frozen=True)
class PowerLawParams:
    """Scale ``phi1`` and roughness ``phi2`` of the power-law IRF.

    Integer ``phi2`` is rejected: the log form only exists as the standalone
    evaluator :func:`gc_powerlaw_integer`.
    """

    phi1: float
    phi2: float

    def __post_init__(self):
        _check_finite(self.phi1, self.phi2)
        if not self.phi1 > 0:
            raise ParameterError(f"phi1 must be positive, got {self.phi1}")
        if not self.phi2 > 0:
            raise ParameterError(f"phi2 must be positive, got {self.phi2}")
        if float(self.phi2).is_integer():
            raise ParameterError(f"integer phi2={self.phi2} sits on a pole of Gamma(-phi2)")

    @property
    def order_k(self) -> int:
        return int(math.floor(self.phi2))

    def scaled(self, s: float) -> "PowerLawParams":
        return PowerLawParams(self.phi1 * s, self.phi2)


@dataclass(frozen=True)
class MaternParams:
    """Matérn variance ``sigma2``, smoothness ``nu`` in (0, 1) and range ``rho``."""

    sigma2: float
    nu: float
    rho: float

    def __post_init__(self):
        _check_finite(self.sigma2, self.nu, self.rho)
        if not self.sigma2 > 0:
            raise ParameterError("sigma2 must be positive")
        if not 0 < self.nu < 1:
            raise ParameterError("nu must lie in (0, 1)")
        if not self.rho > 0:
            raise ParameterError("rho must be positive")

    @property
    def kappa(self) -> float:
        return math.sqrt(2.0 * self.nu) / self.rho


@dataclass(frozen=True)
class TangentPL:
    """Small-lag expansion ``gamma(r) = c_mat r^(2 nu) + a_mat r^2 + ...``.

    ``phi1`` is the power-law scale whose semivariogram
    ``phi1 |Gamma(-nu)| r^(2 nu)`` has the same leading term.
    """

    c_mat: float
    a_mat: float
    nu: float

    @property
    def phi1(self) -> float:
        return self.c_mat / abs(special.gamma(-self.nu))

    def as_powerlaw(self) -> PowerLawParams:
        return PowerLawParams(self.phi1, self.nu)


@dataclass(frozen=True)
class ModelSpec:
    """A covariance model observed on the lattice ``spacing * Z^2``.

    ``spacing=1`` is the increasing-domain (ID) unit lattice; ``spacing=1/n``
    is the fixed-domain (FD) design on ``[0, 1]^2``.  All lags passed to
    :meth:`gc` are in lattice units.
    """

    model: object
    spacing: float = 1.0

    def __post_init__(self):
        if not isinstance(self.model, (PowerLawParams, MaternParams)):
            raise TypeError(f"unsupported model {type(self.model).__name__}")
        if not (np.isfinite(self.spacing) and self.spacing > 0):
            raise ParameterError("spacing must be positive")

    @classmethod
    def fd(cls, model, n: int) -> "ModelSpec":
        return cls(model, 1.0 / n)

    @property
    def is_powerlaw(self) -> bool:
        return isinstance(self.model, PowerLawParams)

    @property
    def roughness(self) -> float:
        return self.model.phi2 if self.is_powerlaw else self.model.nu

    def gc(self, h):
        """(Generalized) covariance at lattice lag(s) ``h`` of shape ``(..., 2)``."""
        h = np.asarray(h, dtype=float)
        if self.is_powerlaw:
            return self.spacing ** (2 * self.model.phi2) * gc_powerlaw(h, self.model)
        return matern_cov(self.spacing * np.hypot(h[..., 0], h[..., 1]), self.model)

    def lattice_spectrum(self, alias_radius: int = DEFAULT_ALIAS_RADIUS, tail: bool = True):
        return LatticeSpectrum(self.model, alias_radius, self.spacing, tail)


# ---------------------------------------------------------------------------
# real-space evaluations


def gc_powerlaw(h, p: PowerLawParams):
    """Generalized covariance ``phi1 Gamma(-phi2) |h|^(2 phi2)``.

    ``h`` has shape ``(..., 2)``; returns shape ``(...)``.
    """
    h = np.asarray(h, dtype=float)
    _check_finite(h)
    r = np.hypot(h[..., 0], h[..., 1])
    return p.phi1 * special.gamma(-p.phi2) * r ** (2.0 * p.phi2)


def gc_powerlaw_integer(h, phi1: float, k: int):
    """Log form for integer roughness ``k``:
    ``2 phi1 (-1)^(k+1) / k! * |h|^(2k) log|h|`` (zero at the origin)."""
    if k < 1 or int(k) != k:
        raise ParameterError("k must be a positive integer")
    h = np.asarray(h, dtype=float)
    _check_finite(h)
    r = np.hypot(h[..., 0], h[..., 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 2.0 * phi1 * (-1.0) ** (k + 1) / math.factorial(k) * r ** (2 * k) * np.log(r)
    return np.where(r > 0, out, 0.0)


def semivariogram_powerlaw(r, p: PowerLawParams):
    """``phi1 |Gamma(-phi2)| r^(2 phi2)``; a true variogram only for phi2 < 1."""
    r = np.asarray(r, dtype=float)
    _check_finite(r)
    if np.any(r < 0):
        raise ParameterError("distance must be nonnegative")
    return p.phi1 * abs(special.gamma(-p.phi2)) * r ** (2.0 * p.phi2)


def matern_cov(r, q: MaternParams):
    r = np.asarray(r, dtype=float)
    _check_finite(r)
    if np.any(r < 0):
        raise ParameterError("distance must be nonnegative")
    x = q.kappa * r
    with np.errstate(invalid="ignore", over="ignore"):
        val = q.sigma2 * 2.0 ** (1.0 - q.nu) / special.gamma(q.nu) * x ** q.nu * special.kv(q.nu, x)
    # x^nu K_nu(x) -> 2^(nu-1) Gamma(nu) at 0; kv underflows to 0 for huge x
    val = np.where(x == 0, q.sigma2, val)
    return np.where(np.isfinite(val), val, 0.0)


def matern_semivariogram(r, q: MaternParams):
    return q.sigma2 - matern_cov(r, q)


def matern_tangent(q: MaternParams) -> TangentPL:
    nu, k = q.nu, q.kappa
    c_mat = q.sigma2 * k ** (2 * nu) * abs(special.gamma(-nu)) / (2 ** (2 * nu) * special.gamma(nu))
    a_mat = q.sigma2 * k**2 / (4.0 * (1.0 - nu))
    return TangentPL(c_mat=c_mat, a_mat=a_mat, nu=nu)


# ---------------------------------------------------------------------------
# spectra


def spectral_constant(phi2: float) -> float:
    """Constant C with ``f0(w) = C phi1 |w|^-(2+2 phi2)`` for the power law.

    Fourier pair of ``Gamma(-phi2)|h|^(2 phi2)`` in two dimensions under the
    module convention: ``4^(1+phi2) pi Gamma(1+phi2)``.
    """
    return 4.0 ** (1.0 + phi2) * math.pi * special.gamma(1.0 + phi2)


def _matern_spectral_amp(q: MaternParams) -> float:
    # f(w) = amp * (kappa^2 + |w|^2)^-(nu+1); fixed so that (2pi)^-2 int f = sigma2
    return 4.0 * math.pi * q.sigma2 * q.nu * q.kappa ** (2 * q.nu)


def spectral_density_continuum(lam, model, spacing: float = 1.0):
    """Continuum spectral density of the field sampled at ``spacing * t``.

    For ``spacing != 1`` this is the density of ``t -> X(spacing * t)``, i.e.
    ``spacing^-2 f(w / spacing)``.
    """
    lam = np.asarray(lam, dtype=float)
    _check_finite(lam)
    r2 = lam[..., 0] ** 2 + lam[..., 1] ** 2
    if isinstance(model, PowerLawParams):
        if np.any(r2 == 0):
            raise SingularityError("power-law spectral density is infinite at 0")
        amp = spectral_constant(model.phi2) * model.phi1 * spacing ** (2 * model.phi2)
        return amp * r2 ** (-(1.0 + model.phi2))
    if isinstance(model, MaternParams):
        k2 = (model.kappa * spacing) ** 2
        amp = _matern_spectral_amp(model) * spacing ** (2 * model.nu)
        return amp * (k2 + r2) ** (-(model.nu + 1.0))
    raise TypeError(f"unsupported model {type(model).__name__}")


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _complement_power_integral(x0, x1, y0, y1, q):
    """Integral of ``|w|^-q`` over the plane minus ``[x0,x1] x [y0,y1]``.

    The rectangle must contain the origin in its interior; ``q > 2``.
    Split into four angular sectors (one per side) and integrate the
    closed radial part with Gauss-Legendre in the angle.
    """
    x0, x1, y0, y1 = (np.asarray(v, dtype=float) for v in (x0, x1, y0, y1))
    total = np.zeros(np.broadcast(x0, x1, y0, y1).shape)
    # (distance to side, angle of the side normal, corner angles relative to normal)
    sides = [
        (x1, np.arctan2(y0, x1), np.arctan2(y1, x1)),
        (y1, np.arctan2(-x1, y1), np.arctan2(-x0, y1)),
        (-x0, np.arctan2(-y1, -x0), np.arctan2(-y0, -x0)),
        (-y0, np.arctan2(x0, -y0), np.arctan2(x1, -y0)),
    ]
    for d, ta, tb in sides:
        mid, half = 0.5 * (ta + tb), 0.5 * (tb - ta)
        th = mid[..., None] + half[..., None] * _GL_X
        integ = np.cos(th) ** (q - 2.0)
        ang = half * np.sum(_GL_W * integ, axis=-1)
        total = total + d ** (2.0 - q) / (q - 2.0) * ang
    return total


def _alias_tail(lam1, lam2, K, p, coef):
    """Sum over |k|_inf > K of ``coef |lam + 2 pi k|^-p`` via cell integrals.

    Midpoint-cell identity with its second-order (Laplacian) correction.
    """
    a = (2 * K + 1) * math.pi
    x0, x1 = -a - lam1, a - lam1
    y0, y1 = -a - lam2, a - lam2
    main = _complement_power_integral(x0, x1, y0, y1, p) / (2 * math.pi) ** 2
    lap = p**2 * _complement_power_integral(x0, x1, y0, y1, p + 2.0) / 24.0
    return coef * (main - lap)


@dataclass(frozen=True)
class LatticeSpectrum:
    """Aliased spectrum of a model sampled on the integer lattice.

    ``alias_radius`` truncates the periodization at |k|_inf <= K; with
    ``tail=True`` the remainder is added analytically.
    """

    model: object
    alias_radius: int = DEFAULT_ALIAS_RADIUS
    spacing: float = 1.0
    tail: bool = True

    def __post_init__(self):
        if self.alias_radius < 0:
            raise ParameterError("alias_radius must be >= 0")

    def __call__(self, lam1, lam2):
        return aliased_spectrum(np.stack(np.broadcast_arrays(lam1, lam2), axis=-1), self)


def aliased_spectrum(lam, spec: LatticeSpectrum):
    """``f_X(lam) = sum_k f0(lam + 2 pi k)`` on the torus (-pi, pi]^2."""
    lam = np.asarray(lam, dtype=float)
    _check_finite(lam)
    l1, l2 = lam[..., 0], lam[..., 1]
    model, K, h = spec.model, spec.alias_radius, spec.spacing
    if isinstance(model, PowerLawParams):
        if np.any((l1 == 0) & (l2 == 0)):
            raise SingularityError("aliased power-law spectrum is infinite at 0")
        p = 2.0 + 2.0 * model.phi2
        coef = spectral_constant(model.phi2) * model.phi1 * h ** (2 * model.phi2)
        k2 = 0.0
    elif isinstance(model, MaternParams):
        p = 2.0 + 2.0 * model.nu
        coef = _matern_spectral_amp(model) * h ** (2 * model.nu)
        k2 = (model.kappa * h) ** 2
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    ks = 2.0 * math.pi * np.arange(-K, K + 1)
    flat1 = l1.reshape(-1)
    flat2 = l2.reshape(-1)
    acc = np.zeros(flat1.shape)
    b2 = (flat2[:, None] + ks[None, :]) ** 2
    for k1 in ks:
        r2 = (flat1 + k1)[:, None] ** 2 + b2
        acc += np.sum((k2 + r2) ** (-p / 2.0), axis=1)
    out = coef * acc.reshape(l1.shape)
    if spec.tail:
        out = out + _alias_tail(l1, l2, K, p, coef)
        if k2 > 0:
            # (k2 + r^2)^-p/2 = r^-p - (p/2) k2 r^-(p+2) + ...
            a = (2 * K + 1) * math.pi
            corr = _complement_power_integral(-a - l1, a - l1, -a - l2, a - l2, p + 2.0)
            out = out - coef * 0.5 * p * k2 * corr / (2 * math.pi) ** 2
    return out


# ---------------------------------------------------------------------------
# stencils and the scale function a_m


@lru_cache(maxsize=None)
def stencil_coefficients(m: int) -> np.ndarray:
    """Integer tensor stencil ``c[a1, a2] = (-1)^(a1+a2) C(m,a1) C(m,a2)``."""
    if m < 1:
        raise ParameterError("stencil order must be >= 1")
    c1 = np.array([(-1) ** a * math.comb(m, a) for a in range(m + 1)], dtype=np.int64)
    out = np.outer(c1, c1)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def stencil_autocorrelation(m: int):
    """Offsets ``d`` and weights ``w_d = sum_a c_a c_(a+d)``, d in [-m, m]^2."""
    c = stencil_coefficients(m)
    d = np.arange(-m, m + 1)
    w = np.zeros((2 * m + 1, 2 * m + 1), dtype=np.int64)
    for a1 in range(m + 1):
        for a2 in range(m + 1):
            for b1 in range(m + 1):
                for b2 in range(m + 1):
                    w[b1 - a1 + m, b2 - a2 + m] += c[a1, a2] * c[b1, b2]
    D1, D2 = np.meshgrid(d, d, indexing="ij")
    offsets = np.stack([D1.ravel(), D2.ravel()], axis=-1)
    weights = w.ravel()
    keep = weights != 0
    return offsets[keep], weights[keep]


def _check_am_domain(phi2: float, m: int):
    _check_finite(phi2)
    if m < 1 or int(m) != m:
        raise ParameterError("m must be a positive integer")
    if not 0 < phi2 < m:
        raise ParameterError(f"phi2={phi2} outside (0, {m})")
    if float(phi2).is_integer():
        raise ParameterError("integer phi2 is not admissible")


def _geometric_sums(phi2: float, m: int):
    offsets, w = stencil_autocorrelation(m)
    r = np.hypot(offsets[:, 0], offsets[:, 1]).astype(float)
    nz = r > 0
    pw = r[nz] ** (2 * phi2)
    s0 = float(np.dot(w[nz], pw))
    s1 = float(np.dot(w[nz], pw * 2.0 * np.log(r[nz])))
    return s0, s1


def a_m(phi2: float, m: int) -> float:
    """Mean of the squared order-``m`` bilinear difference at unit scale.

    ``E (D^(m) X)^2 = phi1 a_m(phi2)``, with
    ``a_m = Gamma(-phi2) sum_{a,b} c_a c_b |b - a|^(2 phi2) > 0``.
    """
    _check_am_domain(phi2, m)
    s0, _ = _geometric_sums(phi2, m)
    return float(special.gamma(-phi2) * s0)


def a_m_prime(phi2: float, m: int) -> float:
    """Analytic derivative of :func:`a_m` in ``phi2``."""
    _check_am_domain(phi2, m)
    s0, s1 = _geometric_sums(phi2, m)
    g = special.gamma(-phi2)
    return float(g * s1 - g * special.digamma(-phi2) * s0)


# ---------------------------------------------------------------------------
# filtered spectra and the Matérn / tangent domination check


def _symbol_sq(l1, l2, m, step=1):
    return 16.0**m * (np.sin(step * l1 / 2.0) ** 2 * np.sin(step * l2 / 2.0) ** 2) ** m


def filtered_spectrum(lam, m: int, spec: LatticeSpectrum):
    """``|g_m(lam)|^2 f_X(lam)``, set to 0 where the symbol vanishes."""
    lam = np.asarray(lam, dtype=float)
    l1, l2 = lam[..., 0], lam[..., 1]
    g2 = _symbol_sq(l1, l2, m)
    zero = g2 == 0
    safe = np.where(zero[..., None], np.pi / 2, lam)
    return np.where(zero, 0.0, g2 * aliased_spectrum(safe, spec))


@dataclass
class DominationReport:
    nu: float
    m: int
    grid: int
    all_pass: bool
    max_ratio: float
    n_points: int
    details: dict = field(default_factory=dict)


def domination_check(q: MaternParams, m: int, grid: int = 101, alias_radius: int = DEFAULT_ALIAS_RADIUS,
                     spacing: float = 1.0) -> DominationReport:
    """Pointwise check ``|g_m|^2 f_Mat^lat <= |g_m|^2 f_PL^lat`` on a torus grid.

    The power-law side is the tangent model with the same leading spectral
    constant as the Matérn model.
    """
    lam = np.linspace(-math.pi, math.pi, grid)
    L1, L2 = np.meshgrid(lam, lam, indexing="ij")
    pts = np.stack([L1, L2], axis=-1)
    tan = matern_tangent(q).as_powerlaw()
    f_mat = filtered_spectrum(pts, m, LatticeSpectrum(q, alias_radius, spacing))
    f_pl = filtered_spectrum(pts, m, LatticeSpectrum(tan, alias_radius, spacing))
    pos = f_pl > 0
    ratio = np.where(pos, f_mat / np.where(pos, f_pl, 1.0), 0.0)
    ok = bool(np.all(f_mat <= f_pl * (1 + 1e-12)))
    return DominationReport(nu=q.nu, m=m, grid=grid, all_pass=ok, max_ratio=float(ratio.max()),
                            n_points=int(pts.shape[0] * pts.shape[1]))
