import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twoscale.errors import DegenerateFieldError, ParameterError, SizeError
from twoscale.gcmodel import stencil_coefficients
from twoscale.lattice import (
    B_symbol,
    Stencil,
    apply_filter,
    assemble_B,
    block_sum,
    build_filter_matrix,
    build_H_matrix,
    h_symbol,
    laplacian_filter,
    qv_arrays,
    quadratic_variations,
    symbol,
    symbol_sq,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- filters -----------------------------------------------------------------

@pytest.mark.parametrize("m, j", [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1)])
def test_apply_filter_matches_sparse_matrix(rng, m, j):
    n = 11
    x = rng.standard_normal((n, n))
    F = build_filter_matrix(n, m, j)
    got = apply_filter(x, m, j)
    assert got.shape == (n - j * m, n - j * m)
    np.testing.assert_allclose(got.ravel(), F.F @ x.ravel(), rtol=1e-13, atol=1e-13)


def test_apply_filter_brute_force_loop(rng):
    x = rng.standard_normal((7, 7))
    c = stencil_coefficients(2)
    out = np.zeros((5, 5))
    for t1 in range(5):
        for t2 in range(5):
            out[t1, t2] = sum(c[a1, a2] * x[t1 + a1, t2 + a2] for a1 in range(3) for a2 in range(3))
    np.testing.assert_allclose(apply_filter(x, 2), out, atol=1e-13)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_block_sum_maps_step1_to_step2(rng, m):
    x = rng.standard_normal((3, 15, 15))
    np.testing.assert_allclose(block_sum(apply_filter(x, m, 1), m), apply_filter(x, m, 2), atol=1e-11)


def test_block_sum_matrix_matches(rng):
    n, m = 9, 1
    z = rng.standard_normal((n - m, n - m))
    H = build_H_matrix(n, m)
    np.testing.assert_allclose(H @ z.ravel(), block_sum(z, m).ravel(), atol=1e-13)


@pytest.mark.parametrize("m", [1, 2])
def test_filter_annihilates_low_order_polynomials(m):
    n = 12
    t1, t2 = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float), indexing="ij")
    for p in range(m):
        for q in range(4):
            for x in (t1**p * t2**q, t1**q * t2**p):
                assert np.abs(apply_filter(x, m, 1)).max() < 1e-8
                assert np.abs(apply_filter(x, m, 2)).max() < 1e-8


def test_filter_rejects_small_or_nonsquare():
    with pytest.raises(SizeError):
        apply_filter(np.zeros((2, 2)), 2)
    with pytest.raises(SizeError):
        apply_filter(np.zeros((4, 5)), 1)


def test_stencil_properties():
    s = Stencil(2, 2)
    assert s.span == 4
    assert s.sq_norm == 36**1  # (1+4+1)^2
    assert s.moment(0, 0) == 0


# --- quadratic variations ----------------------------------------------------

def test_quadratic_variations_by_hand(rng):
    x = rng.standard_normal((10, 10))
    qv = quadratic_variations(x, 1)
    z1, z2 = apply_filter(x, 1, 1), apply_filter(x, 1, 2)
    assert float(qv.q1) == pytest.approx(np.mean(z1**2), rel=1e-14)
    assert float(qv.q2) == pytest.approx(np.mean(z2**2), rel=1e-14)
    assert (qv.m1, qv.m2) == (81, 64)


def test_common_trim_sizes():
    # n = 8, m = 1: both steps share the 6 x 6 interior
    qv = quadratic_variations(np.random.default_rng(0).standard_normal((8, 8)), 1, "common")
    assert qv.m1 == qv.m2 == 36


def test_batch_equals_single_bitwise(rng):
    x = rng.standard_normal((5, 12, 12))
    q1, q2 = qv_arrays(x, 1)
    for r in range(5):
        qv = quadratic_variations(x[r], 1)
        assert q1[r] == qv.q1 and q2[r] == qv.q2


def test_qv_bilinear_form_identity(rng):
    # x^T B x with B = (a/M1) F1^T F1 + (b/M2) F2^T F2 equals a Q1 + b Q2
    n, m, a, b = 9, 1, 0.7, -1.3
    x = rng.standard_normal((n, n))
    z1 = apply_filter(x, m, 1).ravel()
    B = assemble_B(a, b, n, m)
    qv = quadratic_variations(x, m)
    assert z1 @ (B @ z1) == pytest.approx(a * float(qv.q1) + b * float(qv.q2), rel=1e-12)
    A1 = build_filter_matrix(n, m, 1).A()
    assert x.ravel() @ (A1 @ x.ravel()) == pytest.approx(float(qv.q1), rel=1e-12)


def test_degenerate_field():
    qv = quadratic_variations(np.ones((6, 6)), 1)
    assert qv.degenerate
    with pytest.raises(DegenerateFieldError):
        qv.ratio


def test_qv_input_validation():
    with pytest.raises(ParameterError):
        quadratic_variations(np.full((6, 6), np.nan), 1)
    with pytest.raises(ParameterError):
        quadratic_variations(np.zeros((6, 6)), 1, "bogus")
    with pytest.raises(SizeError):
        quadratic_variations(np.zeros((4, 4)), 2)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e3), st.integers(min_value=0, max_value=2**31))
def test_qv_scale_equivariance(c, seed):
    x = np.random.default_rng(seed).standard_normal((8, 8))
    q1, q2 = qv_arrays(x, 1)
    s1, s2 = qv_arrays(c * x, 1)
    assert float(s1) == pytest.approx(c * c * float(q1), rel=1e-12)
    assert float(s2 / s1) == pytest.approx(float(q2 / q1), rel=1e-14)


# --- symbols -----------------------------------------------------------------

def test_symbol_relations():
    lam = np.random.default_rng(1).uniform(-np.pi, np.pi, size=(2, 50))
    for m in (1, 2):
        g1 = symbol(*lam, m, 1)
        np.testing.assert_allclose(np.abs(g1) ** 2, symbol_sq(*lam, m), rtol=1e-12)
        # step-2 symbol factors as step-1 symbol times the block-sum symbol
        np.testing.assert_allclose(symbol(*lam, m, 2), g1 * h_symbol(*lam, m), atol=1e-12)
        np.testing.assert_allclose(np.abs(h_symbol(*lam, m)) ** 2, B_symbol(*lam, m), rtol=1e-12)


# --- Laplacian ---------------------------------------------------------------

def test_laplacian_annihilates_affine_and_brute_force(rng):
    t1, t2 = np.meshgrid(np.arange(9.0), np.arange(9.0), indexing="ij")
    assert np.abs(laplacian_filter(3 + 2 * t1 - 5 * t2, 2)).max() < 1e-12
    # x^2 + y^2 has Laplacian 4 h^2
    np.testing.assert_allclose(laplacian_filter(t1**2 + t2**2, 2), 16.0)
    x = rng.standard_normal((6, 6))
    lap = laplacian_filter(x, 1)
    assert lap[1, 2] == pytest.approx(x[3, 3] + x[1, 3] + x[2, 4] + x[2, 2] - 4 * x[2, 3])
