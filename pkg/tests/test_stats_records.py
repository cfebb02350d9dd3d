import itertools

import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from tendonleg.records import rmse
from tendonleg.stats import midranks, paired_test, subset_sum_counts


def _brute_force_p(d):
    """Enumerate all 2^n sign assignments over the midranks of |d|."""
    d = np.asarray(d, float)
    d = d[d != 0]
    r = midranks(np.abs(d))
    obs = r[d > 0].sum()
    mean = r.sum() / 2
    extreme = 0
    for signs in itertools.product((0, 1), repeat=len(r)):
        w = float(np.dot(signs, r))
        if abs(w - mean) >= abs(obs - mean) - 1e-12:
            extreme += 1
    return extreme / 2 ** len(r)


def test_all_negative_ten_pairs_is_two_over_1024():
    a = np.arange(10) * 0.01
    t = paired_test(a, a + 1.0 + np.arange(10) * 0.1)
    assert t.method == "exact"
    assert t.w_plus == 0 and t.w_minus == 55
    assert t.p_value == pytest.approx(2 / 1024, rel=1e-12)


def test_six_pairs_floor():
    t = paired_test(np.zeros(6), np.arange(1, 7.0))
    assert t.p_value == pytest.approx(2 / 64, rel=1e-12)


@given(st.lists(st.integers(-4, 4), min_size=6, max_size=12))
def test_exact_matches_brute_force_with_ties(diffs):
    d = np.array(diffs, float)
    if not np.any(d):
        return
    t = paired_test(d, np.zeros_like(d))
    assert t.p_value == pytest.approx(min(1.0, _brute_force_p(d)), rel=1e-9, abs=1e-12)


def test_exact_matches_scipy_without_ties():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.normal(size=15), rng.normal(size=15)
        ref = scipy.stats.wilcoxon(a, b, method="exact")
        assert paired_test(a, b).p_value == pytest.approx(ref.pvalue, rel=1e-10)


def test_normal_approximation_matches_scipy():
    rng = np.random.default_rng(1)
    for _ in range(10):
        a = rng.normal(size=50)
        b = a + rng.normal(0.2, 1.0, 50).round(1)     # rounding produces ties
        t = paired_test(a, b)
        d = a - b
        ref = scipy.stats.wilcoxon(d[d != 0], method="approx", correction=False)
        assert t.method == "normal"
        assert t.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_degenerate_all_equal():
    t = paired_test(np.ones(8), np.ones(8))
    assert t.degenerate and t.p_value == 1.0


def test_zero_differences_dropped():
    a = np.array([1, 2, 3, 4, 5, 6, 7.0])
    b = a.copy()
    b[:5] += 1
    t = paired_test(a, b)
    assert t.n == 7 and t.n_nonzero == 5


def test_paired_test_rejects_bad_input():
    with pytest.raises(ValueError):
        paired_test(np.zeros(5), np.ones(5))
    with pytest.raises(ValueError):
        paired_test(np.zeros(7), np.ones(8))
    with pytest.raises(ValueError):
        paired_test(np.r_[np.zeros(6), np.nan], np.ones(7))


def test_subset_sum_counts_small():
    # subsets of {1, 2, 3}: sums 0,1,2,3,3,4,5,6
    np.testing.assert_array_equal(subset_sum_counts([1, 2, 3]), [1, 1, 1, 2, 1, 1, 1])


def test_midranks():
    np.testing.assert_array_equal(midranks([3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0])


# ---------------------------------------------------------------------------
# rmse


def test_rmse_identical_is_zero():
    q = np.random.default_rng(0).normal(size=(100, 2))
    per, agg = rmse(q, q)
    assert agg == 0.0 and np.all(per == 0)


def test_rmse_constant_offset():
    q = np.zeros((50, 2))
    per, agg = rmse(q, q + 0.1)
    np.testing.assert_allclose(per, 0.1, rtol=1e-12)
    assert agg == pytest.approx(0.1, rel=1e-12)


def test_rmse_one_joint_offset():
    q = np.zeros((50, 2))
    off = q.copy()
    off[:, 0] = 0.1
    off[:, 1] = 0.2
    per, agg = rmse(q, off)
    np.testing.assert_allclose(per, [0.1, 0.2], rtol=1e-12)
    assert agg == pytest.approx(np.sqrt((0.01 + 0.04) / 2), rel=1e-12)
    assert agg == pytest.approx(0.15811388, rel=1e-7)


@given(st.integers(1, 40), st.integers(0, 1000))
def test_rmse_aggregate_is_root_mean_of_squared_joint_rmse(n, seed):
    rng = np.random.default_rng(seed)
    d, a = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    per, agg = rmse(d, a)
    assert agg == pytest.approx(np.sqrt(np.mean(per**2)), rel=1e-12)
    assert agg == pytest.approx(np.sqrt(np.mean((d - a) ** 2)), rel=1e-12)


def test_rmse_length_mismatch():
    with pytest.raises(ValueError):
        rmse(np.zeros((5, 2)), np.zeros((4, 2)))
