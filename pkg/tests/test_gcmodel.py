import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from twoscale.errors import ParameterError, SingularityError
from twoscale.gcmodel import (
    LatticeSpectrum,
    MaternParams,
    ModelSpec,
    PowerLawParams,
    TangentPL,
    a_m,
    a_m_prime,
    aliased_spectrum,
    domination_check,
    filtered_spectrum,
    gc_powerlaw,
    gc_powerlaw_integer,
    matern_cov,
    matern_semivariogram,
    matern_tangent,
    semivariogram_powerlaw,
    spectral_constant,
    spectral_density_continuum,
    stencil_autocorrelation,
    stencil_coefficients,
)


# --- parameters -------------------------------------------------------------

@pytest.mark.parametrize("phi1, phi2", [(1.0, 1.0), (1.0, 2.0), (0.0, 0.5), (-1.0, 0.5), (1.0, -0.3),
                                        (np.nan, 0.5)])
def test_powerlaw_params_rejects_bad_values(phi1, phi2):
    with pytest.raises(ParameterError):
        PowerLawParams(phi1, phi2)


def test_powerlaw_order_k():
    assert PowerLawParams(1, 0.5).order_k == 0
    assert PowerLawParams(1, 1.5).order_k == 1


@pytest.mark.parametrize("args", [(0.0, 0.5, 1.0), (1.0, 0.0, 1.0), (1.0, 0.5, -1.0)])
def test_matern_params_rejects_bad_values(args):
    with pytest.raises(ParameterError):
        MaternParams(*args)


# --- generalized covariance --------------------------------------------------

@pytest.mark.parametrize("phi2", [0.2, 0.5, 0.8, 1.3, 1.7])
def test_gc_powerlaw_matches_mpmath(phi2):
    p = PowerLawParams(1.7, phi2)
    r = np.array([0.3, 1.0, 2.5, 7.0])
    oracle = [float(1.7 * mp.gamma(-phi2) * mp.mpf(x) ** (2 * phi2)) for x in r]
    h = np.stack([r, np.zeros_like(r)], axis=-1)
    np.testing.assert_allclose(gc_powerlaw(h, p), oracle, rtol=1e-13)


def test_gc_powerlaw_vector_argument_and_origin():
    p = PowerLawParams(1.0, 0.5)
    h = np.array([[3.0, 4.0], [0.0, 0.0]])
    np.testing.assert_allclose(gc_powerlaw(h, p), [math.gamma(-0.5) * 5.0, 0.0])


def test_semivariogram_at_unit_lag():
    p = PowerLawParams(2.0, 0.8)
    assert semivariogram_powerlaw(1.0, p) == pytest.approx(2.0 * abs(math.gamma(-0.8)), rel=1e-14)


def test_integer_log_form_is_conditionally_valid():
    # for k=1 the log GC r^2 log r gives nonnegative variance for a
    # second-order bilinear difference
    c = stencil_coefficients(2)
    pts = [(a, b) for a in range(3) for b in range(3)]
    var = 0.0
    for i, a in enumerate(pts):
        for j, b in enumerate(pts):
            var += c[a] * c[b] * gc_powerlaw_integer([a[0] - b[0], a[1] - b[1]], 1.0, 1)
    assert var > 0


# --- Matérn ------------------------------------------------------------------

def test_matern_cov_matches_mpmath_bessel():
    q = MaternParams(1.3, 0.7, 2.0)
    for r in (0.1, 1.0, 3.0):
        x = math.sqrt(2 * 0.7) * r / 2.0
        oracle = 1.3 * 2 ** (1 - 0.7) / mp.gamma(0.7) * mp.mpf(x) ** 0.7 * mp.besselk(0.7, x)
        assert matern_cov(r, q) == pytest.approx(float(oracle), rel=1e-12)
    assert matern_cov(0.0, q) == pytest.approx(1.3)


def test_matern_exponential_special_case():
    q = MaternParams(1.0, 0.5, 1.0)
    r = np.linspace(0, 5, 11)
    np.testing.assert_allclose(matern_cov(r, q), np.exp(-math.sqrt(2 * 0.5) * r / 1.0), rtol=1e-12)


@pytest.mark.parametrize("nu", [0.25, 0.5, 0.8])
def test_matern_tangent_is_small_lag_limit(nu):
    q = MaternParams(1.0, nu, 1.0)
    tan = matern_tangent(q)
    r = 1e-7
    ratio = matern_semivariogram(r, q) / (tan.phi1 * abs(math.gamma(-nu)) * r ** (2 * nu))
    # the leading correction is of relative order r^(2 - 2 nu)
    assert ratio == pytest.approx(1.0, abs=5 * r ** (2 - 2 * nu) + 1e-6)
    assert isinstance(tan, TangentPL)
    assert tan.as_powerlaw().phi2 == nu


def test_matern_spectral_density_integrates_to_variance():
    q = MaternParams(1.7, 0.6, 1.5)

    def radial(w):
        return spectral_density_continuum(np.array([[w, 0.0]]), q)[0] * w / (2 * math.pi)

    total, _ = integrate.quad(radial, 0, np.inf, limit=400)
    assert total == pytest.approx(1.7, rel=1e-6)


# --- spectra -----------------------------------------------------------------

def test_spectral_constant_value():
    # C = 4^(1+phi2) pi Gamma(1+phi2)
    assert spectral_constant(0.3) == pytest.approx(4**1.3 * math.pi * math.gamma(1.3), rel=1e-14)


@pytest.mark.parametrize("phi2, m", [(0.5, 1), (0.8, 1), (1.5, 2)])
def test_filtered_lattice_spectrum_integrates_to_a_m(phi2, m):
    # the torus mean of |g|^2 f over [-pi, pi)^2 is Var(D X) = a_m(phi2)
    spec = LatticeSpectrum(PowerLawParams(1.0, phi2))
    k = 128
    lam = (np.arange(k) + 0.5) / k * 2 * np.pi - np.pi
    L1, L2 = np.meshgrid(lam, lam, indexing="ij")
    vals = filtered_spectrum(np.stack([L1.ravel(), L2.ravel()], 1), m, spec)
    assert vals.mean() == pytest.approx(a_m(phi2, m), rel=2e-4)


@pytest.mark.parametrize("model", [PowerLawParams(1.0, 0.1), PowerLawParams(1.0, 0.7), MaternParams(1.0, 0.5, 1.0)])
def test_alias_tail_correction_matches_large_radius(model):
    lam = np.array([[0.3, -1.2], [2.9, 3.0], [-0.05, 0.4]])
    small = aliased_spectrum(lam, LatticeSpectrum(model, alias_radius=30, tail=True))
    big = aliased_spectrum(lam, LatticeSpectrum(model, alias_radius=300, tail=True))
    np.testing.assert_allclose(small, big, rtol=1e-8)
    untail = aliased_spectrum(lam, LatticeSpectrum(model, alias_radius=30, tail=False))
    assert np.all(untail < small)


def test_aliased_powerlaw_is_singular_at_origin():
    with pytest.raises(SingularityError):
        aliased_spectrum(np.array([[0.0, 0.0]]), LatticeSpectrum(PowerLawParams(1.0, 0.5)))


def test_model_spec_fd_spacing_scales_gc():
    p = PowerLawParams(1.0, 0.6)
    fd = ModelSpec.fd(p, 20)
    assert fd.spacing == pytest.approx(1 / 20)
    assert fd.gc([3.0, 0.0]) == pytest.approx(gc_powerlaw([3.0, 0.0], p) * 20 ** (-1.2), rel=1e-13)


# --- stencils and a_m --------------------------------------------------------

@pytest.mark.parametrize("m", [1, 2, 3])
def test_stencil_annihilates_low_degree_polynomials(m):
    c = stencil_coefficients(m)
    a1, a2 = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    for p in range(m):
        for q in range(m + 3):
            assert np.sum(c * a1**p * a2**q) == 0
            assert np.sum(c * a1**q * a2**p) == 0
    assert np.sum(c * a1**m * a2**m) != 0
    assert not c.flags.writeable


def test_stencil_autocorrelation_brute_force():
    c = stencil_coefficients(2)
    off, w = stencil_autocorrelation(2)
    brute = {}
    for a in np.ndindex(c.shape):
        for b in np.ndindex(c.shape):
            d = (a[0] - b[0], a[1] - b[1])
            brute[d] = brute.get(d, 0) + c[a] * c[b]
    brute = {k: v for k, v in brute.items() if v != 0}
    got = {tuple(int(x) for x in o): float(v) for o, v in zip(off, w)}
    assert got == {k: float(v) for k, v in brute.items()}


@pytest.mark.parametrize("phi2", np.linspace(0.05, 0.95, 9))
def test_a1_closed_form(phi2):
    assert a_m(phi2, 1) == pytest.approx(abs(math.gamma(-phi2)) * (8 - 4 * 2**phi2), rel=1e-12)


@pytest.mark.parametrize("phi2, m", [(0.4, 2), (1.2, 2), (1.7, 2), (2.5, 3), (0.3, 3)])
def test_a_m_brute_force_and_positive(phi2, m):
    c = stencil_coefficients(m)
    g = mp.gamma(-phi2)
    brute = mp.mpf(0)
    for a in np.ndindex(c.shape):
        for b in np.ndindex(c.shape):
            d = math.dist(a, b)
            if d:
                brute += int(c[a]) * int(c[b]) * g * mp.mpf(d) ** (2 * phi2)
    assert a_m(phi2, m) == pytest.approx(float(brute), rel=1e-11)
    assert a_m(phi2, m) > 0


@pytest.mark.parametrize("phi2, m", [(0.3, 1), (0.75, 1), (1.4, 2), (0.6, 2)])
def test_a_m_prime_finite_difference(phi2, m):
    h = 1e-6
    fd = (a_m(phi2 + h, m) - a_m(phi2 - h, m)) / (2 * h)
    assert a_m_prime(phi2, m) == pytest.approx(fd, rel=1e-7)


@pytest.mark.parametrize("phi2, m", [(1.0, 2), (1.5, 1), (0.0, 1), (-0.2, 1)])
def test_a_m_domain(phi2, m):
    with pytest.raises(ParameterError):
        a_m(phi2, m)


def test_domination_check_exponential_matern():
    rep = domination_check(MaternParams(1.0, 0.5, 1.0), 1, grid=41)
    assert rep.all_pass
    assert rep.max_ratio < 1
