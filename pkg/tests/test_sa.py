import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import linalg, special

from seminorm_sa.lyapunov import solve_continuous
from seminorm_sa.markov import MarkovChain
from seminorm_sa.sa import (LinearSAProblem, SAProblem, StepsizeSchedule, bound_constants,
                            bound_envelope, check_condition1, drift_check, iterate_window_check,
                            linear_bound_constants, linear_bound_envelope, mixing_times,
                            random_linear_problem, run_linear_sa, run_sa, scalar_test_problem,
                            symmetric_noise)
from seminorm_sa.sa import sa_c1_c2
from seminorm_sa.seminorm import Seminorm


def iid_chain(n):
    return MarkovChain(np.full((n, n), 1.0 / n))


class TestSchedule:
    def test_values(self):
        assert StepsizeSchedule.constant(0.1)(5) == 0.1
        assert_allclose(StepsizeSchedule.linear(2.0, 3.0)([0, 1]), [2 / 3, 0.5])
        assert_allclose(StepsizeSchedule.polynomial(1.0, 4.0, 0.5)(5), 1 / 3)

    def test_aliases(self):
        assert StepsizeSchedule("const", 0.1).kind == "constant"
        assert StepsizeSchedule("poly", 0.1, 1.0, 0.5).kind == "polynomial"

    @pytest.mark.parametrize("args", [("constant", 0.0), ("linear", 1.0, 0.0),
                                      ("polynomial", 1.0, 1.0, 1.0), ("cosine", 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            StepsizeSchedule(*args)

    def test_partial_sum_digamma_oracle(self):
        # sum_{k=i}^{j} a/(k+h) = a (psi(j+h+1) - psi(i+h))
        s = StepsizeSchedule.linear(3.0, 7.5)
        for i, j in [(0, 0), (3, 1000), (100, 100_000)]:
            ref = 3.0 * (special.digamma(j + 7.5 + 1) - special.digamma(i + 7.5))
            assert_allclose(s.partial_sum(i, j), ref, rtol=1e-12)
        assert s.partial_sum(5, 4) == 0.0

    def test_non_increasing(self):
        ks = np.arange(1000)
        for s in (StepsizeSchedule.linear(1.0, 2.0), StepsizeSchedule.polynomial(1.0, 2.0, 0.7)):
            assert np.all(np.diff(s(ks)) <= 0)


class TestConstants:
    def test_scalar_problem(self):
        c = scalar_test_problem().constants()
        assert_allclose([c.phi1, c.phi2, c.phi3, c.A, c.B], [1.0, 0.375, 164.0, 1.8, 2.0])
        assert_allclose(c.threshold(), min(0.375 / (164 * 1.8**2), 1 / 7.2))

    def test_phi_ranges(self):
        c = bound_constants(Seminorm.span(4), 0.8, 1.0, 1.0)
        assert c.phi1 >= 1 and 0 < c.phi2 < 0.5

    def test_bad_theta(self):
        with pytest.raises(ValueError):
            bound_constants(Seminorm.span(4), 0.9, 1.0, 1.0, theta=1.0)


class TestCondition1:
    def test_small_constant_passes(self):
        pr = scalar_test_problem()
        res = check_condition1(StepsizeSchedule.constant(1e-5), pr.chain, pr.constants())
        assert res.passed and res.first_violation is None
        ts = mixing_times(pr.chain, [1e-5])
        assert_allclose(res.max_window, 1e-5 * ts[0])

    def test_slow_chain_fails(self):
        pr = scalar_test_problem()
        slow = MarkovChain([[0.99, 0.01], [0.01, 0.99]])
        res = check_condition1(StepsizeSchedule.constant(0.01), slow, pr.constants(), horizon=2000)
        assert not res.passed
        t = mixing_times(slow, [0.01])[0]
        assert res.first_violation == t

    def test_iid_chain_single_term(self):
        c = scalar_test_problem().constants()
        chain = iid_chain(2)
        thr = c.threshold()
        assert_array_equal(mixing_times(chain, [0.9 * thr, 1.1 * thr]), [1, 1])
        for a, ok in [(0.9 * thr, True), (1.1 * thr, False)]:
            res = check_condition1(StepsizeSchedule.constant(a), chain, c, horizon=50)
            assert res.passed is ok
            if not ok:
                assert res.first_violation == 1


def contraction_problem(gamma, d=2, noise=None, chain=None):
    chain = chain or iid_chain(2)
    return SAProblem(F=lambda X, Y: gamma * X, chain=chain, p_c=Seminorm.quadratic(np.eye(d)),
                     gamma=gamma, A1=gamma, B1=0.0, x_star=np.zeros(d),
                     noise=noise, noise_width=0 if noise is None else 1,
                     B2=0.0 if noise is None else 1.0)


class TestRunSA:
    def test_deterministic_contraction(self):
        sched = StepsizeSchedule.linear(1.0, 2.0)
        run = run_sa(contraction_problem(0.5), sched, 50, n_trials=3, x0=[3.0, 4.0], check=False)
        ref = 5.0 * np.concatenate([[1.0], np.cumprod(1 - sched(np.arange(49)) * 0.5)])
        assert_allclose(run.p_errors, np.tile(ref, (3, 1)), rtol=1e-13)

    def test_start_at_fixed_point(self):
        run = run_sa(contraction_problem(0.5), StepsizeSchedule.constant(0.1), 30, 2, check=False)
        assert np.all(run.p_errors == 0)

    def test_seminorm_only_convergence(self):
        F = lambda X, Y: X * np.array([0.5, 2.0])
        pr = SAProblem(F=F, chain=MarkovChain([[1.0]]), p_c=Seminorm.quadratic(np.diag([1.0, 0.0])),
                       gamma=0.5, A1=2.0, B1=0.0, x_star=np.zeros(2))
        run = run_sa(pr, StepsizeSchedule.constant(1.0), 41, 1, x0=[1.0, 1.0],
                     store_iterates=True, check=False)
        for k in range(20, 41):
            assert run.p_errors[0, k] < 1
            assert abs(run.iterates[k][0, 1]) > 1e6
        assert not run.diverged[0]

    def test_trace_length_and_reproducible(self):
        pr = scalar_test_problem()
        s = StepsizeSchedule.constant(0.05)
        a = run_sa(pr, s, 200, 5, seed=3, check=False)
        b = run_sa(pr, s, 200, 5, seed=3, check=False)
        assert a.p_errors.shape == (5, 200)
        assert_array_equal(a.p_errors, b.p_errors)
        c = run_sa(pr, s, 200, 5, seed=4, check=False)
        assert not np.array_equal(a.p_errors, c.p_errors)

    def test_trial_independent_of_batch(self):
        pr = scalar_test_problem()
        s = StepsizeSchedule.constant(0.05)
        a = run_sa(pr, s, 100, 2, seed=1, check=False)
        b = run_sa(pr, s, 100, 6, seed=1, check=False)
        assert_array_equal(a.p_errors, b.p_errors[:2])

    def test_thread_invariance(self, monkeypatch):
        pr = scalar_test_problem()
        s = StepsizeSchedule.constant(0.05)
        a = run_sa(pr, s, 100, 7, seed=2, check=False)
        monkeypatch.setenv("SEMINORM_SA_THREADS", "3")
        b = run_sa(pr, s, 100, 7, seed=2, check=False)
        assert_array_equal(a.p_errors, b.p_errors)

    def test_condition_warning(self):
        with pytest.warns(RuntimeWarning, match="stepsize condition"):
            run_sa(scalar_test_problem(), StepsizeSchedule.constant(0.3), 20, 1)

    def test_symmetric_noise_mean_zero(self):
        noise = symmetric_noise([[1.0, 2.0], [0.0, -3.0]])
        U = (np.arange(4)[:, None] + 0.5) / 4
        W = noise(None, None, U)
        assert_allclose(W.sum(axis=0), 0.0)

    def test_record_at(self):
        run = run_sa(scalar_test_problem(), StepsizeSchedule.constant(0.05), 100, 2,
                     record_at=[0, 50, 99], check=False)
        assert_array_equal(run.ks, [0, 50, 99])
        with pytest.raises(ValueError):
            run_sa(scalar_test_problem(), StepsizeSchedule.constant(0.05), 10, 1,
                   record_at=[10], check=False)


class TestEnvelope:
    @pytest.fixture
    def setup(self):
        pr = scalar_test_problem()
        c = pr.constants()
        c1, c2 = sa_c1_c2(pr, c, np.zeros(1))
        return pr, c, c1, c2

    @pytest.mark.parametrize("sched", [StepsizeSchedule.constant(5e-5),
                                       StepsizeSchedule.linear(3.0, 6e4),
                                       StepsizeSchedule.polynomial(0.1, 4e6, 0.5)])
    def test_closed_form_dominates(self, setup, sched):
        pr, c, c1, c2 = setup
        env = bound_envelope(c, sched, pr.chain, c1, c2, 5000)
        assert env.binding
        assert np.all(env.closed_form >= env.exact * (1 - 1e-12))

    def test_constant_plateau(self, setup):
        pr, c, c1, c2 = setup
        a = 5e-5
        env = bound_envelope(c, StepsizeSchedule.constant(a), pr.chain, c1, c2, 20)
        t = mixing_times(pr.chain, [a])[0]
        assert_allclose(env.closed_form[-1] - c.phi1 * c1 * (1 - c.phi2 * a) ** (19 - env.K),
                        c.phi3 * c2 / c.phi2 * a * t)

    def test_no_noise_geometric(self, setup):
        pr, c, c1, _ = setup
        a = 5e-5
        env = bound_envelope(c, StepsizeSchedule.constant(a), pr.chain, c1, 0.0, 300)
        n = np.arange(env.exact.size)
        assert_allclose(env.exact, c.phi1 * c1 * (1 - c.phi2 * a) ** n, rtol=1e-10)

    def test_violation_non_binding(self, setup):
        pr, c, c1, c2 = setup
        env = bound_envelope(c, StepsizeSchedule.constant(0.1), pr.chain, c1, c2, 100)
        assert not env.binding

    def test_mc_under_envelope(self, setup):
        pr, c, c1, c2 = setup
        sched = StepsizeSchedule.constant(5e-4)
        horizon = 2000
        env = bound_envelope(c, sched, pr.chain, c1, c2, horizon)
        run = run_sa(pr, sched, horizon, 100, seed=0, check=False)
        m, se = run.mean_sq()[env.K:], run.stderr_sq()[env.K:]
        assert np.all(m - 3 * se <= env.exact)

    def test_csv(self, setup, tmp_path):
        pr, c, c1, c2 = setup
        env = bound_envelope(c, StepsizeSchedule.constant(5e-5), pr.chain, c1, c2, 30)
        env.to_csv(tmp_path / "e.csv")
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert lines[0] == "k,bound_exact,bound_closed_form"
        assert len(lines) == 1 + 30 - env.K


class TestLinearSA:
    def test_classical_decay(self):
        d = 2
        chain = iid_chain(2)
        cert = solve_continuous(-np.eye(d), np.eye(d))
        pr = LinearSAProblem(np.array([-np.eye(d)] * 2), np.zeros((2, d)), chain, cert)
        sched = StepsizeSchedule.constant(0.1)
        run = run_linear_sa(pr, sched, 30, 2, x0=[1.0, 1.0])
        ref = math.sqrt(0.5 * 2) * 0.9 ** np.arange(30)
        assert_allclose(run.p_errors[0], ref, rtol=1e-12)

    def test_non_hurwitz_mean(self):
        # A(y) kills e1 and contracts e2; mean has eigenvalue 0 along E = span(e1)
        A_t = np.array([[[0.0, 0.5], [0.0, -0.5]], [[0.0, -0.5], [0.0, -1.5]]])
        b_t = np.array([[1.0, 1.0], [-1.0, 0.0]])
        chain = iid_chain(2)
        E = np.array([[1.0], [0.0]])
        A_bar = A_t.mean(axis=0)
        cert = solve_continuous(A_bar, np.diag([0.0, 1.0]), E)
        pr = LinearSAProblem(A_t, b_t, chain, cert)
        assert pr.check_invariance()
        sched = StepsizeSchedule.constant(0.05)
        horizon = 200
        run = run_linear_sa(pr, sched, horizon, 400, seed=0, x0=[0.0, 3.0],
                            store_iterates=[horizon - 1])
        # exact mean recursion: Y_k is independent of x_k for an i.i.d. chain,
        # except Y_0 = 0 is deterministic
        m = np.array([0.0, 3.0])
        m = m + 0.05 * (A_t[0] @ m + b_t[0])
        for _ in range(horizon - 2):
            m = m + 0.05 * (A_bar @ m + b_t.mean(axis=0))
        X = run.iterates[horizon - 1]
        se = X.std(axis=0, ddof=1) / np.sqrt(X.shape[0])
        assert np.all(np.abs(X.mean(axis=0) - m) <= 4 * se)
        assert run.mean_sq()[-1] < 0.05 * run.mean_sq()[0]
        assert np.abs(X[:, 0]).max() > 0.1

    def test_not_invariant(self):
        pr = random_linear_problem(seed=1)
        A_t = pr.A_table.copy()
        A_t[0] = A_t[0] + 0.1 * np.outer(np.ones(3), pr.cert.E_basis[:, 0])
        bad = LinearSAProblem(A_t, pr.b_table, pr.chain, pr.cert)
        with pytest.raises(ValueError, match="invariant"):
            run_linear_sa(bad, StepsizeSchedule.constant(0.1), 5, 1)

    def test_random_problem(self):
        pr = random_linear_problem(d=4, kernel_dim=2, seed=2)
        assert pr.check_invariance()
        xs = pr.x_star()
        assert pr.seminorm(pr.A_bar @ xs + pr.b_bar) <= 1e-10
        assert linalg.norm(pr.cert.P @ pr.cert.E_basis) <= 1e-10

    def test_envelope_operator_vs_tv(self):
        pr = random_linear_problem(seed=3)
        x0 = np.zeros(3)
        c = linear_bound_constants(pr, x0)
        sched = StepsizeSchedule.constant(1e-4)
        op = linear_bound_envelope(pr, sched, c, 50)
        tv = linear_bound_envelope(pr, sched, c, 50, mixing="tv")
        assert op.exact[-1] <= tv.exact[-1] * (1 + 1e-12)


class TestDrift:
    def test_no_noise_contraction(self):
        pr = contraction_problem(0.5)
        rep = drift_check(pr, StepsizeSchedule.constant(0.01), 5, n_mc=20, x0=[1.0, -2.0])
        assert rep.passed
        assert rep.lhs <= rep.rhs

    def test_noise_at_fixed_point(self):
        pr = contraction_problem(0.5, noise=symmetric_noise([[1.0, 0.0], [0.0, 1.0]]))
        rep = drift_check(pr, StepsizeSchedule.constant(0.01), 5, n_mc=500)
        assert rep.passed

    def test_iid_gamma_zero(self):
        pr = contraction_problem(0.0)
        run = run_sa(pr, StepsizeSchedule.constant(1.0), 3, 1, x0=[2.0, 1.0], check=False)
        assert_array_equal(run.p_errors[0, 1:], 0.0)

    def test_window_bounds(self):
        pr = scalar_test_problem()
        c = pr.constants()
        sched = StepsizeSchedule.constant(0.01)
        run = run_sa(pr, sched, 60, 50, seed=5, x0=[4.0], store_iterates=True, check=False)
        assert iterate_window_check(run, sched, pr.p_c, c.A, c.B, 10, 20) <= 1e-12
        with pytest.raises(ValueError):
            iterate_window_check(run, sched, pr.p_c, c.A, c.B, 0, 59)


def test_run_warns_only_when_violated():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run_sa(scalar_test_problem(), StepsizeSchedule.constant(1e-5), 5, 1)
