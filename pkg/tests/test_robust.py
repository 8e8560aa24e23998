import math

import numpy as np
import pytest

from twoscale.errors import DegenerateFieldError, ParameterError, SizeError
from twoscale.fieldsim import AnchoredSampler, FilteredSampler
from twoscale.gcmodel import MaternParams, PowerLawParams
from twoscale.lattice import apply_filter, qv_arrays
from twoscale.robust import (
    JitterConfig,
    MisspecConfig,
    SiteMask,
    ThinningConfig,
    deletion_scaling,
    input_error_check,
    jitter_experiment,
    misspecification_experiment,
    prune_and_qv,
    surviving_rows,
    thinning_experiment,
    verify_deletion_bounds,
)


@pytest.fixture(scope="module")
def fields():
    return AnchoredSampler(PowerLawParams(1.0, 0.5), 12).sample(8, range(4))


# --- masks -------------------------------------------------------------------

def test_mask_constructors():
    assert SiteMask.empty(5).k == 0
    assert SiteMask.single_site(5, 2, 3).deleted[2, 3]
    assert SiteMask.row_segment(6, 1, 2, 3).k == 3
    assert SiteMask.diagonal_swath(6, 2).k == 6 + 2 * 5
    r = SiteMask.random_uniform(8, 10, 3, 1)
    assert r.k == 10
    np.testing.assert_array_equal(r.deleted, SiteMask.random_uniform(8, 10, 3, 1).deleted)
    b = SiteMask.bernoulli(10, 0.9, 5, range(50))
    assert b.deleted.shape == (50, 10, 10)
    assert abs(b.deleted.mean() - 0.1) < 0.02
    with pytest.raises(ParameterError):
        SiteMask.bernoulli(5, 1.5, 0)
    with pytest.raises(ParameterError):
        SiteMask.random_uniform(3, 10, 0)
    with pytest.raises(SizeError):
        SiteMask(np.zeros((3, 4), bool))


@pytest.mark.parametrize("m, j", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_interior_site_removes_block_of_rows(m, j):
    # an interior deleted site touches exactly (m+1)^2 stencil rows
    n = 14
    keep = surviving_rows(SiteMask.single_site(n, 7, 6), m, j)
    assert keep.size - keep.sum() == (m + 1) ** 2


# --- pruned QVs --------------------------------------------------------------

def test_empty_mask_is_bitwise_plain(fields):
    pq = prune_and_qv(fields, SiteMask.empty(12), 1)
    q1, q2 = qv_arrays(fields, 1)
    np.testing.assert_array_equal(pq.tilde_q1, q1)
    np.testing.assert_array_equal(pq.tilde_q2, q2)


def test_pruned_qv_brute_force(fields):
    mask = SiteMask.random_uniform(12, 5, 1)
    pq = prune_and_qv(fields, mask, 1)
    d = mask.deleted
    for j, got in ((1, pq.tilde_q1), (2, pq.tilde_q2)):
        z = apply_filter(fields, 1, j)
        L = z.shape[-1]
        vals = [[] for _ in range(fields.shape[0])]
        for t1 in range(L):
            for t2 in range(L):
                if not any(d[t1 + j * a1, t2 + j * a2] for a1 in (0, 1) for a2 in (0, 1)):
                    for r in range(fields.shape[0]):
                        vals[r].append(z[r, t1, t2] ** 2)
        np.testing.assert_allclose(got.astype(float), [np.mean(v) for v in vals], rtol=1e-13)


def test_pruning_everything_is_degenerate(fields):
    with pytest.raises(DegenerateFieldError):
        prune_and_qv(fields, SiteMask.diagonal_swath(12, 12), 1)


# --- perturbation bounds -----------------------------------------------------

@pytest.mark.parametrize("m, k", [(1, 1), (1, 4), (2, 3)])
def test_row_removal_rank_bound(m, k):
    n = 12
    for r in range(3):
        v = verify_deletion_bounds(n, m, SiteMask.random_uniform(n, k, 11, r))
        assert v["rank_rows"] <= 4 * k * (m + 1) ** 2
        assert v["rank_rows"] <= v["rows_removed"]
        assert v["norm2"] <= v["normF"] + 1e-15


def test_single_interior_site_rank():
    v = verify_deletion_bounds(10, 1, SiteMask.single_site(10, 5, 5))
    assert v["rows_removed"] == 4
    assert v["rank_rows"] == 4


def test_deletion_norm_is_order_k_over_n():
    res = deletion_scaling((12, 16), 1, (1, 2, 4), seed=2, n_masks=4)
    C = res["C_F"]
    assert max(C.values()) / min(C.values()) < 1.5
    nf = {(r["n"], r["k"]): r["normF"] for r in res["rows"]}
    # more deletions, bigger perturbation
    assert nf[(16, 1)] < nf[(16, 4)]
    with pytest.raises(SizeError):
        verify_deletion_bounds(40, 1, SiteMask.single_site(40, 1, 1))


def test_input_error_scales_linearly():
    res = input_error_check(10, 1, PowerLawParams(1.0, 0.5), R=40, seed=1)
    assert res["slope"] == pytest.approx(1.0, abs=0.15)


# --- experiments (small) -----------------------------------------------------

def test_thinning_leaves_phi2_nearly_unchanged():
    res = thinning_experiment(ThinningConfig(ns=(24,), R=32, seed=4))
    cell = res[24]
    assert cell["mean_abs_dphi2"] < 0.5 * cell["sd_phi2"]
    assert 0 < cell["mean_k"] < 24 * 24


def test_jitter_zero_changes_nothing():
    res = jitter_experiment(JitterConfig(ns=(8, 10), c=0.0, R=3, seed=1))
    assert res[8]["mean_abs_dq1"] == 0.0 and res[10]["max_abs_dphi2"] == 0.0


def test_jitter_perturbation_shrinks_with_n():
    res = jitter_experiment(JitterConfig(ns=(8, 16), R=12, seed=1))
    assert res["ratio_dq1"] < 1.0


def test_misspecification_small():
    res = misspecification_experiment(MisspecConfig(ns=(30,), R=48, seed=2, grid=21))
    assert res["domination"].all_pass
    cell = res["cells"][30]
    assert abs(cell["bias_phi2"]) < 4 * cell["se_phi2"] + 0.02
    assert cell["mean_scaled_phi1"] == pytest.approx(res["kappa_nu"], rel=0.25)
    assert MaternParams(1.0, 0.5, 1.0) == MisspecConfig().q
