import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fcltlab.models import (ExactOracle, MarkovArrayModel, MDepArrayModel, MonteCarloOracle,
                            common_factor_model, iid_model, ma1_model, model_from_dict,
                            pair_cov, partial_sum_norm, read_matrix, sample_rows,
                            two_state_chain, write_matrix)

CHAIN_NORM_3 = 2.2181073012818833  # sqrt(4.92), 8-path enumeration


def test_pair_cov_examples():
    m = ma1_model(20)
    assert pair_cov(m, 5, 7) == 0.0
    assert pair_cov(m, 5, 6) == pytest.approx(0.5, abs=1e-15)
    c = two_state_chain(20)
    assert pair_cov(c, 3, 4) == pytest.approx(0.4, abs=1e-14)
    assert pair_cov(c, 3, 5) == pytest.approx(0.16, abs=1e-14)


def test_partial_sum_norm_examples():
    assert partial_sum_norm(ExactOracle(iid_model(30)), 4, 12) == pytest.approx(3.0, abs=1e-14)
    o = ExactOracle(ma1_model(100))
    for L in (1, 2, 7, 40):
        assert partial_sum_norm(o, 10, 9 + L) == pytest.approx(math.sqrt(2 * L - 1), abs=1e-12)
    assert partial_sum_norm(ExactOracle(two_state_chain(10)), 2, 4) == pytest.approx(CHAIN_NORM_3, abs=1e-13)
    with pytest.raises(ValueError):
        partial_sum_norm(o, 5, 4)


def test_index_checks():
    o = ExactOracle(iid_model(10))
    with pytest.raises(IndexError):
        o.running_variance(0, 3)
    with pytest.raises(IndexError):
        o.running_variance(1, 11)


def test_variance_additivity_independent():
    coef = np.linspace(0.2, 1.0, 50)[:, None]
    m = MDepArrayModel(50, coef)
    o = ExactOracle(m)
    assert o.range_variance(3, 40) == pytest.approx(math.fsum(coef[2:40, 0] ** 2), abs=1e-14)


# -- Markov oracle against path enumeration -------------------------------

def _random_chain(draw_rows, S, n, period):
    P = np.abs(draw_rows) + 0.05
    P = P.reshape(period, S, S)
    P /= P.sum(axis=2, keepdims=True)
    return P


def _enumerate_moments(model):
    n, S = model.n, model.state_count
    f = model.observables
    cov = np.zeros((n, n))
    for path in itertools.product(range(S), repeat=n):
        p = model.initial[path[0]]
        for k in range(n - 1):
            p *= model.transition(k + 1)[path[k], path[k + 1]]
        if p == 0:
            continue
        x = np.array([f[k, path[k]] for k in range(n)])
        cov += p * np.outer(x, x)
    return cov


chains = st.builds(
    lambda S, n, period, seed: (S, n, period, seed),
    st.integers(2, 3), st.integers(2, 7), st.integers(1, 2), st.integers(0, 2**32 - 1),
)


@given(chains)
def test_markov_matches_path_enumeration(params):
    S, n, period, seed = params
    rng = np.random.default_rng(seed)
    P = _random_chain(rng.random(period * S * S), S, n, period)
    init = rng.dirichlet(np.ones(S))
    obs = rng.normal(size=(2, S))
    m = MarkovArrayModel(n, init, P, obs)
    cov = _enumerate_moments(m)
    o = ExactOracle(m)
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            assert m.pair_cov(i, j) == pytest.approx(cov[i - 1, j - 1], abs=1e-12)
            block = cov[i - 1 : j, i - 1 : j].sum()
            assert o.range_variance(i, j) == pytest.approx(block, abs=1e-12)


@given(hnp.arrays(np.float64, (2, 2), elements=st.floats(0.05, 0.95)),
       st.integers(3, 60))
def test_interval_gram_matches_covariance(raw, n):
    P = np.column_stack([raw[:, 0], 1 - raw[:, 0]])
    m = MarkovArrayModel(n, [0.3, 0.7], P, [[-1.0, 2.0], [0.5, -0.5]])
    o = ExactOracle(m)
    cov = np.array([[m.pair_cov(min(i, j), max(i, j)) for j in range(1, n + 1)] for i in range(1, n + 1)])
    cuts = sorted({1, n // 3 + 1, n // 2 + 1, n + 1})
    iv = [(a, b - 1) for a, b in zip(cuts, cuts[1:])]
    iv.insert(1, (iv[0][1] + 1, iv[0][1]))  # empty interval
    G = o.interval_gram(iv)
    for p, (a, b) in enumerate(iv):
        for q, (c, d) in enumerate(iv):
            ref = cov[a - 1 : b, c - 1 : d].sum() if b >= a and d >= c else 0.0
            assert G[p, q] == pytest.approx(ref, abs=1e-10)


def test_cross_covariance():
    o = ExactOracle(two_state_chain(20))
    cc = o.cross_covariance(3, 5, 9)
    ref = [sum(0.4 ** (k - i) for i in range(3, 6)) for k in range(6, 10)]
    np.testing.assert_allclose(cc, ref, atol=1e-14)


# -- validation and normalisation ------------------------------------------

def test_row_sum_diagnostic():
    with pytest.raises(ValueError, match="row 1"):
        MarkovArrayModel(5, [0.5, 0.5], [[0.5, 0.5], [0.3, 0.6]], [-1, 1])


def test_rescaling_only_when_needed():
    m = MarkovArrayModel(5, [0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]], [-1.0, 1.0])
    assert m.scale == 1.0
    big = MarkovArrayModel(5, [0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]], [-3.0, 3.0])
    assert big.scale == pytest.approx(0.25)
    assert np.max(big.variances) <= 1.0
    md = MDepArrayModel(5, [2.0, 1.0])
    assert np.max(md.variances) <= 1.0


def test_degenerate_rejected():
    with pytest.raises(ValueError):
        MarkovArrayModel(5, [1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], [-1.0, 1.0])
    with pytest.raises(ValueError):
        MDepArrayModel(5, [0.0])


def test_common_factor_covariance():
    m = common_factor_model(30)
    assert m.pair_cov(1, 30) == 1.0
    assert ExactOracle(m).range_variance(1, 30) == pytest.approx(900.0)


def test_model_dict_round_trip():
    for m in (two_state_chain(12), ma1_model(12, "rademacher")):
        back = model_from_dict(m.to_dict())
        assert back.to_dict() == m.to_dict()


# -- sampling -------------------------------------------------------------

def test_sampling_deterministic_and_worker_independent():
    for m in (two_state_chain(300), ma1_model(300)):
        a = sample_rows(m, 64, seed=11)
        b = sample_rows(m, 64, seed=11, workers=4)
        assert np.array_equal(a, b)
        tail = sample_rows(m, 32, seed=11, first_rep=32)
        assert np.array_equal(a[32:], tail)
        assert not np.array_equal(a, sample_rows(m, 64, seed=12))


def test_gaussian_column_means():
    reps = 10_000
    X = sample_rows(iid_model(1000), reps, seed=3)
    assert np.max(np.abs(X.mean(axis=0))) <= 4 / math.sqrt(reps) * 1.2  # 1000 columns: allow the max


def test_markov_lag1_covariance_within_5se():
    m = two_state_chain(40)
    mc = MonteCarloOracle(m, 10_000, seed=5)
    for i in (1, 17, 39):
        est, se = mc.pair_cov_se(i, i + 1)
        assert abs(est - m.pair_cov(i, i + 1)) <= 5 * se


def test_exact_vs_monte_carlo_fleet():
    rng = np.random.default_rng(0)
    fleet = [
        iid_model(40),
        ma1_model(40, "bernoulli"),
        two_state_chain(40),
        MarkovArrayModel(40, [1, 0, 0], [[[0.2, 0.5, 0.3], [0.1, 0.1, 0.8], [0.6, 0.2, 0.2]],
                                          [[0.9, 0.05, 0.05], [0.3, 0.4, 0.3], [0.0, 0.5, 0.5]]],
                         [[-1.0, 0.0, 2.0]]),
    ]
    for m in fleet:
        ex = ExactOracle(m)
        mc = MonteCarloOracle(m, 100_000, seed=1)
        for _ in range(20):
            i, j = sorted(rng.integers(1, 41, size=2).tolist())
            est, se = mc.range_variance_se(i, j)
            assert abs(est - ex.range_variance(i, j)) <= 5 * se


# -- binary matrices --------------------------------------------------------

def test_matrix_round_trip(tmp_path):
    M = np.random.default_rng(0).normal(size=(7, 5))
    path = tmp_path / "m.bin"
    write_matrix(path, M)
    assert np.array_equal(read_matrix(path), M)
    raw = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        read_matrix(tmp_path / "short.bin")
    (tmp_path / "bad.bin").write_bytes(b"X" + raw[1:])
    with pytest.raises(ValueError, match="not an ensemble"):
        read_matrix(tmp_path / "bad.bin")
