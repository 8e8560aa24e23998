import math

import mpmath as mp
import numpy as np
import pytest

from twoscale.errors import DegenerateFieldError, ParameterError, SizeError
from twoscale.estimate import (
    a_laplacian,
    empirical_variogram,
    fd_transform,
    laplacian_arrays,
    laplacian_estimate,
    mom_arrays,
    mom_estimate,
    phi2_grid,
    reml_batch,
    reml_estimate,
    reml_fisher_sd,
    whittle_batch,
    whittle_estimate,
)
from twoscale.fieldsim import AnchoredSampler, FilteredSampler
from twoscale.gcmodel import ModelSpec, PowerLawParams, a_m
from twoscale.lattice import QvStats, apply_filter, qv_arrays, quadratic_variations


def _exact_qv(phi1, phi2, m):
    # E Q_j = phi1 j^(2 phi2) a_m(phi2)
    a = a_m(phi2, m)
    return QvStats(phi1 * a, phi1 * 4**phi2 * a, 100, 81, m)


# --- moment estimator --------------------------------------------------------

@pytest.mark.parametrize("phi1, phi2, m", [(1.0, 0.5, 1), (3.2, 0.15, 1), (0.4, 1.6, 2), (2.0, 0.7, 2)])
def test_mom_recovers_parameters_from_expectations(phi1, phi2, m):
    est = mom_estimate(_exact_qv(phi1, phi2, m))
    assert est.in_domain
    assert est.phi2_hat == pytest.approx(phi2, abs=1e-13)
    assert est.phi1_hat == pytest.approx(phi1, rel=1e-12)
    p2, lp1, ok = mom_arrays(np.array([est.qv.q1]), np.array([est.qv.q2]), m)
    assert ok[0] and p2[0] == est.phi2_hat
    assert lp1[0] == pytest.approx(math.log(phi1), abs=1e-12)


@pytest.mark.parametrize("ratio", [0.9, 1.0, 4.0, 4 ** 1.0002, 5.0])
def test_mom_domain_flags(ratio):
    est = mom_estimate(QvStats(1.0, ratio, 10, 9, 1))
    assert not est.in_domain
    assert est.phi1_hat is None and est.log_phi1_hat is None


def test_mom_rejects_degenerate_and_bad_mode():
    with pytest.raises(DegenerateFieldError):
        mom_estimate(QvStats(0.0, 1.0, 10, 9, 1))
    with pytest.raises(ParameterError):
        mom_estimate(QvStats(1.0, 2.0, 10, 9, 1), domain_mode="XY")
    with pytest.raises(DegenerateFieldError):
        mom_arrays(np.array([1.0, 0.0]), np.array([1.0, 1.0]), 1)


def test_mom_scale_invariance_of_phi2():
    x = AnchoredSampler(PowerLawParams(1.0, 0.6), 20).sample(1, range(8))
    q1, q2 = qv_arrays(x, 1)
    for c in (1e-3, 7.0, 1e4):
        s1, s2 = qv_arrays(c * x, 1)
        p_ref, lp_ref, _ = mom_arrays(q1, q2, 1)
        p_c, lp_c, _ = mom_arrays(s1, s2, 1)
        np.testing.assert_allclose(p_c, p_ref, atol=1e-15)
        np.testing.assert_allclose(lp_c, lp_ref + 2 * math.log(c), atol=1e-12)


def test_mom_monte_carlo_unbiased():
    phi2 = 0.5
    x = AnchoredSampler(PowerLawParams(1.0, phi2), 30).sample(2024, range(200))
    p2, lp1, ok = mom_arrays(*qv_arrays(x, 1), 1)
    assert ok.all()
    se = p2.std(ddof=1) / math.sqrt(200)
    assert abs(p2.mean() - phi2) < 4 * se
    assert abs(lp1.mean()) < 4 * lp1.std(ddof=1) / math.sqrt(200) + 0.01


def test_fd_transform_identities():
    N = 40
    truth = PowerLawParams(1.5, 0.6)
    qv = QvStats(1.3 * a_m(0.62, 1), 1.3 * 4**0.62 * a_m(0.62, 1), 10, 9, 1)
    est = mom_estimate(qv, domain_mode="FD")
    fd = fd_transform(est, N, truth)
    tau1 = 1.5 * N**-0.6
    assert fd.tau1 == pytest.approx(tau1)
    assert fd.U == pytest.approx(est.phi1_hat / tau1 - 1)
    assert fd.V == pytest.approx(est.phi2_hat - 0.6)
    assert fd.W == pytest.approx(N**est.phi2_hat * est.phi1_hat / 1.5 - 1, rel=1e-12)
    assert fd.unstabilized[0] == pytest.approx(math.log(N**est.phi2_hat * est.phi1_hat / 1.5), rel=1e-12)
    np.testing.assert_allclose(fd.stabilized, [math.log(est.phi1_hat / tau1), fd.V], rtol=1e-12, atol=1e-14)
    assert est.tau1_hat == est.phi1_hat
    with pytest.raises(ParameterError):
        fd_transform(mom_estimate(QvStats(1.0, 5.0, 10, 9, 1)), N)


# --- Laplacian ---------------------------------------------------------------

@pytest.mark.parametrize("phi2", [0.2, 0.5, 0.85])
def test_a_laplacian_brute_force(phi2):
    pts = {(0, 1): 1, (1, 0): 1, (1, 1): -4, (1, 2): 1, (2, 1): 1}
    brute = mp.mpf(0)
    for a, wa in pts.items():
        for b, wb in pts.items():
            d2 = (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2
            if d2:
                brute += wa * wb * mp.gamma(-phi2) * mp.mpf(d2) ** phi2
    assert a_laplacian(phi2) == pytest.approx(float(brute), rel=1e-12)
    assert a_laplacian(phi2, 2) == pytest.approx(4**phi2 * float(brute), rel=1e-12)
    with pytest.raises(ParameterError):
        a_laplacian(1.2)


def test_laplacian_batch_matches_single():
    x = AnchoredSampler(PowerLawParams(1.0, 0.4), 16).sample(3, range(4))
    p2, lp1, ok = laplacian_arrays(x)
    for r in range(4):
        est = laplacian_estimate(x[r])
        assert est.phi2_hat == p2[r]
        if ok[r]:
            assert est.log_phi1_hat == pytest.approx(lp1[r], rel=1e-14)


# --- likelihood estimators ---------------------------------------------------

def test_phi2_grid_skips_integers():
    g = phi2_grid(2)
    assert g[0] == pytest.approx(0.01) and g[-1] == pytest.approx(1.99)
    assert not np.any(np.isclose(g, 1.0))


@pytest.fixture(scope="module")
def small_fields():
    return AnchoredSampler(PowerLawParams(2.0, 0.6), 16).sample(77, range(3))


def test_whittle_batch_matches_single(small_fields):
    z1 = apply_filter(small_fields, 1, 1)
    p2, lp1 = whittle_batch(z1, 1)
    for r in range(3):
        est = whittle_estimate(small_fields[r], 1)
        assert est.phi2_hat == pytest.approx(p2[r], abs=2e-4)
        assert math.log(est.phi1_hat) == pytest.approx(lp1[r], abs=2e-3)
        assert est.mask_size > 0


def test_reml_batch_matches_single(small_fields):
    z1 = apply_filter(small_fields, 1, 1)
    p2, lp1 = reml_batch(z1, 1)
    for r in range(3):
        est = reml_estimate(small_fields[r], 1)
        assert est.phi2_hat == pytest.approx(p2[r], abs=2e-4)
        assert math.log(est.phi1_hat) == pytest.approx(lp1[r], abs=2e-3)


@pytest.mark.parametrize("fn", [whittle_estimate, reml_estimate])
def test_likelihood_estimators_scale_equivariant(small_fields, fn):
    a = fn(small_fields[0], 1)
    b = fn(25.0 * small_fields[0], 1)
    assert b.phi2_hat == pytest.approx(a.phi2_hat, abs=1e-5)
    assert b.phi1_hat == pytest.approx(625.0 * a.phi1_hat, rel=1e-4)


def test_reml_on_filtered_input_and_size_cap(small_fields):
    a = reml_estimate(small_fields[1], 1)
    b = reml_estimate(apply_filter(small_fields[1], 1, 1), 1, filtered=True)
    assert a.phi2_hat == b.phi2_hat
    with pytest.raises(SizeError):
        reml_estimate(small_fields[1], 1, cap=10)


def test_reml_fisher_sd_properties():
    full = reml_fisher_sd(12, 1, 0.5)
    prof = reml_fisher_sd(12, 1, 0.5, profile=True)
    assert prof > full > 0
    # more data, smaller SD
    assert reml_fisher_sd(16, 1, 0.5, profile=True) < prof


def test_reml_fisher_sd_matches_monte_carlo():
    # empirical SD of phi2_hat on 150 exact fields at n = 12
    z = FilteredSampler(ModelSpec(PowerLawParams(1.0, 0.5)), 12, 1).sample(5, range(150))
    p2, _ = reml_batch(z, 1)
    sd = reml_fisher_sd(12, 1, 0.5, profile=True)
    assert p2.std(ddof=1) == pytest.approx(sd, rel=0.25)


# --- variogram ---------------------------------------------------------------

def test_empirical_variogram_brute_force():
    x = np.random.default_rng(3).standard_normal((6, 6))
    g = empirical_variogram(x, 2)
    for h in (1, 2):
        vals = []
        for t1 in range(6):
            for t2 in range(6):
                if t1 + h < 6:
                    vals.append((x[t1 + h, t2] - x[t1, t2]) ** 2 / 2)
                if t2 + h < 6:
                    vals.append((x[t1, t2 + h] - x[t1, t2]) ** 2 / 2)
        assert g[h - 1] == pytest.approx(np.mean(vals), rel=1e-13)
    with pytest.raises(SizeError):
        empirical_variogram(x, 4)


def test_degenerate_field_quadratic_variations():
    qv = quadratic_variations(np.zeros((8, 8)), 1)
    with pytest.raises(DegenerateFieldError):
        mom_estimate(qv)
