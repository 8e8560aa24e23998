import math

import numpy as np
import pytest

from twoscale.asymptotics import (
    asymptotic_sigma,
    delta_jacobian,
    dense_cov_qq,
    estimator_cov,
    fd_predictions,
    finite_cov_qq,
    matern_fd_means,
    ratio_taylor,
    table1_theory,
    table2_theory,
    torus_cov_qq,
    trimming_variance,
)
from twoscale.errors import ParameterError, SizeError
from twoscale.fieldsim import FilteredSampler
from twoscale.gcmodel import MaternParams, PowerLawParams, a_m
from twoscale.lattice import qv_from_increments


# --- finite-lattice engine ---------------------------------------------------

@pytest.mark.parametrize("phi2, m, trim", [(0.5, 1, "per_step"), (0.8, 1, "common"), (1.5, 2, "per_step"),
                                           (1.2, 2, "common")])
def test_lag_sum_engine_matches_dense_traces(phi2, m, trim):
    p = PowerLawParams(1.4, phi2)
    n = 9
    pred = finite_cov_qq(n, m, p, trim)
    np.testing.assert_allclose(pred.cov_qq, dense_cov_qq(n, m, p, trim), rtol=1e-10)
    assert pred.q1 == pytest.approx(1.4 * a_m(phi2, m), rel=1e-11)
    assert pred.q2 == pytest.approx(1.4 * 4**phi2 * a_m(phi2, m), rel=1e-11)


def test_finite_covariance_matches_monte_carlo():
    p = PowerLawParams(1.0, 0.6)
    n, m, R = 8, 1, 6000
    z = FilteredSampler(p, n, m).sample(99, range(R))
    q1, q2, _, _ = qv_from_increments(z, m)
    emp = np.cov(np.stack([q1.astype(float), q2.astype(float)]))
    C = finite_cov_qq(n, m, p).cov_qq
    # relative SE of a variance estimate ~ sqrt(2/R) for Gaussian-like data;
    # quadratic forms are skewed, so allow a generous multiple
    np.testing.assert_allclose(emp, C, rtol=6 * math.sqrt(2 / R) * 2)


def test_trimming_variance_matches_dense():
    p = PowerLawParams(1.0, 0.5)
    n, m = 8, 1
    L1, L2 = n - m, n - 2 * m
    from twoscale.fieldsim import _toeplitz_cov, filtered_cov_table
    from twoscale.gcmodel import ModelSpec
    S = _toeplitz_cov(filtered_cov_table(ModelSpec(p), m, L1), L1)
    g = np.arange(L1)
    keep = ((g[:, None] < L2) & (g[None, :] < L2)).ravel().astype(float)
    D = np.eye(L1 * L1) / L1**2 - np.diag(keep) / L2**2
    dense = 2 * np.trace(D @ S @ D @ S)
    assert trimming_variance(n, m, p) == pytest.approx(n * n * dense, rel=1e-10)


def test_engine_size_checks():
    with pytest.raises(SizeError):
        finite_cov_qq(200, 1, PowerLawParams(1.0, 0.5))
    with pytest.raises(SizeError):
        dense_cov_qq(30, 1, PowerLawParams(1.0, 0.5))
    with pytest.raises(ParameterError):
        finite_cov_qq(10, 1, PowerLawParams(1.0, 0.5), "bogus")


# --- delta method ------------------------------------------------------------

@pytest.mark.parametrize("phi2, m", [(0.3, 1), (0.8, 1), (1.5, 2)])
def test_delta_jacobian_matches_finite_differences(phi2, m):
    q1 = 1.7 * a_m(phi2, m)
    q2 = q1 * 4**phi2

    def raw(q):
        p2 = 0.5 * math.log2(q[1] / q[0])
        return np.array([q[0] / a_m(p2, m), p2])

    def logmap(q):
        v = raw(q)
        return np.array([math.log(v[0]), v[1]])

    for form, f in (("J", raw), ("K", logmap)):
        J = delta_jacobian(q1, q2, m, form)
        fd = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = 1e-6 * (q1, q2)[k]
            fd[:, k] = (f(np.array([q1, q2]) + e) - f(np.array([q1, q2]) - e)) / (2 * e[k])
        np.testing.assert_allclose(J, fd, rtol=1e-6, atol=1e-9)
    with pytest.raises(ParameterError):
        delta_jacobian(q1, q2, m, "Z")


def test_estimator_cov_and_fd_forms():
    pred = finite_cov_qq(20, 1, PowerLawParams(1.0, 0.5), "common")
    O, summ = estimator_cov(pred)
    K = delta_jacobian(pred.q1, pred.q2, 1, "K")
    np.testing.assert_allclose(O, K @ pred.cov_qq @ K.T, rtol=1e-14)
    assert summ.sd_phi2 == pytest.approx(math.sqrt(O[1, 1] * 18**2))
    fd = fd_predictions(pred, 20)
    np.testing.assert_allclose(fd.stabilized, O, rtol=1e-10, atol=1e-18)
    np.testing.assert_allclose(np.linalg.inv(fd.A_N), [[1, math.log(20)], [0, 1]], atol=1e-14)
    # the unstabilized pair is strongly correlated and worse conditioned
    assert abs(fd.corr_unstabilized) > abs(summ.corr)
    assert fd.cond_unstabilized > fd.cond_stabilized


def test_ratio_taylor_formula():
    pred = finite_cov_qq(12, 1, PowerLawParams(1.0, 0.5))
    C = pred.cov_qq
    r = pred.q2 / pred.q1
    assert ratio_taylor(pred) == pytest.approx(r * (1 + C[0, 0] / pred.q1**2 - C[0, 1] / (pred.q1 * pred.q2)))


# --- published theory columns -------------------------------------------------

@pytest.mark.parametrize("n, phi2, ref", [
    (30, 0.5, (2.4326, 1.4853, 0.734)),
    (60, 0.5, (2.4654, 1.4923, 0.736)),
    (30, 0.8, (1.7274, 1.4298, 0.315)),
    (60, 0.8, (1.7534, 1.4432, 0.331)),
])
def test_table1_theory_spot_values(n, phi2, ref):
    # [PAPER] finite-lattice theory column
    s = table1_theory(n, phi2)
    np.testing.assert_allclose(s.as_tuple(), ref, atol=6e-4)


@pytest.mark.parametrize("n, phi2, sd_ref, ratio_ref", [
    (30, 1.2, 2.3053, 5.28131),
    (60, 1.5, 2.2352, 8.00090),
    (45, 1.8, 2.1644, 12.12676),
])
def test_table2_theory_spot_values(n, phi2, sd_ref, ratio_ref):
    # [PAPER] torus theory column
    s, ratio, _ = table2_theory(n, phi2)
    assert s.sd_phi2 == pytest.approx(sd_ref, abs=6e-4)
    assert ratio == pytest.approx(ratio_ref, abs=6e-5)


# --- torus and limit ----------------------------------------------------------

def test_torus_and_finite_approach_the_limit():
    p = PowerLawParams(1.0, 0.5)
    sig = asymptotic_sigma(1, p).cov_qq
    tor = torus_cov_qq(64, 1, p, alias_radius=30, tail=True)
    np.testing.assert_allclose(tor.sigma_qq, sig, rtol=0.02)
    # finite lattice: N Cov -> Sigma with an O(1/n) boundary term; two-point
    # Richardson extrapolation removes it
    f40 = finite_cov_qq(40, 1, p).cov_qq * 40**2
    f80 = finite_cov_qq(80, 1, p).cov_qq * 80**2
    np.testing.assert_allclose(2 * f80 - f40, sig, rtol=0.01)


def test_asymptotic_sigma_requires_domain():
    with pytest.raises(ParameterError):
        asymptotic_sigma(1, PowerLawParams(1.0, 1.5))


# --- Matérn ------------------------------------------------------------------

def test_matern_fd_means_approach_tangent():
    q = MaternParams(1.0, 0.5, 1.0)
    devs = []
    for n in (20, 80, 320):
        mm = matern_fd_means(q, 1, n)
        devs.append(abs(mm.exact[0] / mm.leading[0] - 1))
        assert mm.ratio == pytest.approx(mm.exact[1] / mm.exact[0])
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 0.02
    assert matern_fd_means(q, 1, 320).ratio == pytest.approx(4**0.5, rel=0.02)
