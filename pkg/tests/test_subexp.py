import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fcltlab.subexp import (SubexpSpec, check_def1, estimate_u_n, eval_a, eval_H, log_a,
                            ratio_lemma, u_n_order)

# high-precision reference values (mpmath, 40 digits)
ITERLOG_A8 = 46.861046987
STRETCHED_U_1E4 = 16
RATIO_POWER1_P4_U100 = 0.0179098566573


FAMILIES = [
    SubexpSpec.power(1.0),
    SubexpSpec.explogpow(2.0),
    SubexpSpec.stretched(1.0, 0.5),
    SubexpSpec.iterlog(1),
]


def test_eval_a_closed_forms():
    assert eval_a(SubexpSpec.power(2.0), 3) == pytest.approx(9.0, rel=1e-14)
    assert eval_a(SubexpSpec.stretched(1.0, 0.5), 4) == pytest.approx(math.e**2, rel=1e-14)
    assert eval_a(SubexpSpec.iterlog(1), 8) == pytest.approx(ITERLOG_A8, rel=1e-10)


def test_eval_H_closed_forms():
    assert eval_H(SubexpSpec.power(1.0), 100) == pytest.approx(0.01)
    assert eval_H(SubexpSpec.stretched(1.0, 0.5), 100) == pytest.approx(0.1)
    assert eval_H(SubexpSpec.iterlog(1), math.e**3) == pytest.approx(1 / 3)
    assert eval_H(SubexpSpec.explogpow(2.0), math.e) == pytest.approx(1 / math.e)


def test_eval_H_rejects_nonpositive_iterated_log():
    with pytest.raises(ValueError):
        eval_H(SubexpSpec.iterlog(2), 2.0)


def test_estimate_u_n_examples():
    assert estimate_u_n(SubexpSpec.power(1.0), 1e6) == 144
    assert estimate_u_n(SubexpSpec.power(0.0), 50) == 50
    assert estimate_u_n(SubexpSpec.stretched(1.0, 0.5), 1e4) == STRETCHED_U_1E4


def test_estimate_u_n_cap():
    with pytest.raises(OverflowError):
        estimate_u_n(SubexpSpec.power(0.0), 1e9, cap=1000)


@given(st.sampled_from(FAMILIES), st.integers(min_value=1, max_value=2000))
def test_estimate_u_n_round_trip(spec, u):
    a2 = np.exp(2.0 * log_a(spec, np.arange(1, u + 1, dtype=np.float64)))
    assert np.all(np.isfinite(a2))
    assert estimate_u_n(spec, math.fsum(a2)) == u


@given(st.floats(min_value=0.25, max_value=3.0), st.floats(min_value=1e3, max_value=1e7))
def test_power_scaling(q, sigma_sq):
    spec = SubexpSpec.power(q)
    u1 = estimate_u_n(spec, sigma_sq)
    u2 = estimate_u_n(spec, sigma_sq * 2 ** (2 * q + 1))
    assert abs(u2 - 2 * u1) <= 1


def test_u_n_order_matches_power_closed_form():
    low, high = u_n_order(SubexpSpec.power(1.0), 1e6)
    assert low == high == pytest.approx(100.0)
    # sum j^2 ~ u^3 / 3, so the exact count is (3 sigma^2)^(1/3) up to lower-order terms
    assert estimate_u_n(SubexpSpec.power(1.0), 1e6) == pytest.approx((3e6) ** (1 / 3), rel=0.01)


@given(st.sampled_from(FAMILIES), st.integers(min_value=1, max_value=10**6))
def test_eval_a_nondecreasing(spec, j):
    assert eval_a(spec, j + 1) >= eval_a(spec, j)


def test_check_def1_power():
    rep = check_def1(SubexpSpec.power(1.0), np.geomspace(10, 1e4, 200))
    assert rep.all_pass
    assert rep.C1 == pytest.approx(1.0) and rep.C2 == pytest.approx(1.0)


def test_check_def1_stretched():
    rep = check_def1(SubexpSpec.stretched(1.0, 0.5), np.geomspace(10, 1e4, 200))
    assert rep.all_pass
    assert rep.C1 == pytest.approx(0.5) and rep.C2 == pytest.approx(0.5)


def test_check_def1_all_families_default_grid():
    for spec in FAMILIES:
        assert check_def1(spec).all_pass, spec


def test_check_def1_linear_G_fails_cond2():
    rep = check_def1(SubexpSpec.stretched(1.0, 1.0), np.geomspace(10, 1e4, 200))
    assert not rep.cond2
    assert not rep.all_pass


def test_check_def1_grid_validation():
    with pytest.raises(ValueError):
        check_def1(SubexpSpec.power(1.0), [10.0, 5.0])
    with pytest.raises(ValueError):
        check_def1(SubexpSpec.iterlog(1), [2.0, 10.0])


def test_ratio_lemma_reference():
    res = ratio_lemma(SubexpSpec.power(1.0), 4, 100)
    assert res.ratio == pytest.approx(RATIO_POWER1_P4_U100, rel=1e-11)
    assert res.bound_unit == pytest.approx(0.01)
    assert res.quotient == pytest.approx(1.79098566573, rel=1e-10)


@given(st.integers(min_value=2, max_value=5000))
def test_ratio_lemma_constant_sequence(u):
    assert ratio_lemma(SubexpSpec.power(0.0), 4, u).ratio == pytest.approx(1 / u, rel=1e-12)


def test_ratio_lemma_large_u_no_overflow():
    res = ratio_lemma(SubexpSpec.stretched(1.0, 0.5), 3, 100_000)
    assert math.isfinite(res.ratio) and res.ratio > 0


@pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: s.family)
@pytest.mark.parametrize("p", [3.0, 4.0, 6.0])
def test_ratio_quotient_no_blowup(spec, p):
    q = [ratio_lemma(spec, p, u).quotient for u in (100, 1000, 10_000, 100_000)]
    assert max(q) <= 2 * q[0]


def test_spec_dict_round_trip():
    for spec in FAMILIES:
        assert SubexpSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        SubexpSpec.from_dict({"family": "power", "q": 1, "bogus": 2})
