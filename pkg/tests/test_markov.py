import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from seminorm_sa.markov import (MarkovChain, load_chain_csv, mixing_table, mixing_time,
                                operator_mixing_time, sample_path, stationary, tv_distance,
                                two_state_chain)


def lazy_chain(n, seed):
    rng = np.random.default_rng(seed)
    P = 0.5 * np.eye(n) + 0.5 * rng.dirichlet(np.ones(n), size=n)
    return MarkovChain(P / P.sum(axis=1, keepdims=True))


class TestStationary:
    def test_two_state(self):
        assert_allclose(two_state_chain(0.3, 0.3).stationary, [0.5, 0.5])
        # closed form (b, a) / (a + b)
        assert_allclose(stationary([[0.9, 0.1], [0.4, 0.6]]), [0.8, 0.2])

    def test_identity_rejected(self):
        with pytest.raises(ValueError, match="reducible"):
            stationary(np.eye(2))

    def test_periodic_rejected(self):
        with pytest.raises(ValueError, match="periodic"):
            stationary([[0.0, 1.0], [1.0, 0.0]])

    def test_bad_rows(self):
        with pytest.raises(ValueError):
            MarkovChain([[0.5, 0.4], [0.5, 0.5]])
        with pytest.raises(ValueError):
            MarkovChain([[1.5, -0.5], [0.5, 0.5]])

    def test_empirical_frequencies(self):
        chain = lazy_chain(5, 0)
        n = 200_000
        path = sample_path(chain, 0, n, seed=1)
        freq = np.bincount(path, minlength=5) / n
        # batch means give a standard error that accounts for correlation
        batches = path.reshape(100, -1)
        bfreq = np.array([np.bincount(b, minlength=5) / b.size for b in batches])
        se = bfreq.std(axis=0, ddof=1) / np.sqrt(100)
        assert np.all(np.abs(freq - chain.stationary) <= 3 * se + 1e-12)


class TestTV:
    def test_values(self):
        assert tv_distance([0.2, 0.8], [0.2, 0.8]) == 0
        assert tv_distance([1.0, 0.0], [0.0, 1.0]) == 1
        assert_allclose(tv_distance([0.7, 0.3], [0.5, 0.5]), 0.2)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            tv_distance([1.0], [0.5, 0.5])


class TestMixing:
    @pytest.mark.parametrize("delta, t", [(0.1, 2), (0.01, 5), (0.001, 7)])
    def test_two_state_closed_form(self, delta, t):
        a = b = 0.3
        tv0 = max(a, b) / (a + b)
        closed = math.ceil(math.log(delta / tv0) / math.log(abs(1 - a - b)))
        assert closed == t
        assert mixing_time(two_state_chain(a, b), delta) == t

    def test_vacuous_delta(self):
        assert mixing_time(two_state_chain(0.3, 0.3), 1.0) == 0

    def test_monotone_and_halving(self):
        chain = lazy_chain(4, 2)
        C, rho = chain.ergodicity
        deltas = np.geomspace(0.4, 1e-6, 30)
        ts = [mixing_time(chain, d) for d in deltas]
        assert all(t1 <= t2 for t1, t2 in zip(ts, ts[1:]))
        step = math.ceil(math.log(2) / math.log(1 / rho)) + 1
        for d in deltas[:10]:
            assert mixing_time(chain, d / 2) - mixing_time(chain, d) <= step

    def test_ergodicity_envelope(self):
        chain = lazy_chain(4, 3)
        C, rho = chain.ergodicity
        assert 0 <= rho < 1
        tv = chain.tv_profile(60)
        keep = tv > 1e-13
        assert np.all(tv[keep] <= C * rho ** np.arange(61)[keep] * (1 + 1e-9))

    def test_chapman_kolmogorov(self):
        chain = lazy_chain(5, 4)
        k = 7
        Pk = np.linalg.matrix_power(chain.P, k)
        a = tv_distance(np.linalg.matrix_power(chain.P, 2 * k), chain.stationary).max()
        b = tv_distance(Pk @ Pk, chain.stationary).max()
        assert abs(a - b) <= 1e-12
        assert_allclose(chain.worst_tv(2 * k), a, atol=1e-12)

    def test_cap(self):
        eps = 1e-9
        chain = MarkovChain([[1 - eps, eps], [eps, 1 - eps]])
        with pytest.raises(ValueError, match="exceeds"):
            mixing_time(chain, 1e-3)

    def test_table_csv(self, tmp_path):
        table = mixing_table(two_state_chain(0.3, 0.3), [0.01, 0.1])
        table.to_csv(tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines == ["delta,t_delta", "0.01,5", "0.10000000000000001,2"]
        assert table.lookup(0.1) == 2

    def test_operator_mixing_not_slower_than_tv(self):
        # ||E[X(Y_k)] - E_mu X|| <= 2 TV max ||X||
        chain = lazy_chain(4, 5)
        rng = np.random.default_rng(6)
        tables = rng.standard_normal((4, 2, 2))
        for delta in (0.1, 0.01):
            t_op = operator_mixing_time(chain, tables, delta)
            assert t_op <= mixing_time(chain, delta / 2)


class TestSampling:
    def test_cycle(self):
        P = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        chain = MarkovChain(P)
        assert_array_equal(sample_path(chain, 1, 7, 0), [1, 2, 0, 1, 2, 0, 1])

    def test_seeded(self):
        chain = lazy_chain(3, 7)
        assert_array_equal(sample_path(chain, 0, 100, 5), sample_path(chain, 0, 100, 5))

    def test_two_state_frequency(self):
        chain = two_state_chain(0.3, 0.3)
        n = 1_000_000
        path = sample_path(chain, 0, n, seed=8)
        # asymptotic variance of the occupation frequency for a = b
        lam = 1 - 0.6
        sigma = math.sqrt(0.25 * (1 + lam) / (1 - lam) / n)
        assert abs(path.mean() - 0.5) <= 3 * sigma

    def test_transition_counts_chi_square(self):
        chain = lazy_chain(3, 9)
        path = sample_path(chain, 0, 100_000, seed=10)
        for s in range(3):
            nxt = path[1:][path[:-1] == s]
            obs = np.bincount(nxt, minlength=3)
            exp = chain.P[s] * obs.sum()
            assert stats.chisquare(obs, exp).pvalue > 1e-3

    def test_bad_start(self):
        with pytest.raises(ValueError):
            sample_path(two_state_chain(0.3, 0.3), 5, 10, 0)


def test_load_csv(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("0.7,0.3\n0.3,0.7\n")
    assert_allclose(load_chain_csv(path).P, [[0.7, 0.3], [0.3, 0.7]])
