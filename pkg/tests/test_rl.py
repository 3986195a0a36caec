import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import linalg

from seminorm_sa.rl import (FeatureMap, Mdp, bellman_lambda, h_operator, j_step_h,
                            j_step_h_bruteforce, mrp_from_matrix, q_contraction_estimate,
                            q_learning_envelope, q_learning_run, q_learning_schedule,
                            q_star_oracle, random_mrp, random_unichain_mdp, select_J,
                            solve_mrp, span, td_instance, td_lambda_run, td_mean_estimate,
                            td_solution_set)
from seminorm_sa.sa import StepsizeSchedule


def value_oracle(P, R):
    """Least-squares solve of (I - P) V = R - r e together with mu'V = 0."""
    n = P.shape[0]
    w, vl = linalg.eig(P.T)
    mu = np.real(vl[:, np.argmin(np.abs(w - 1))])
    mu /= mu.sum()
    r = mu @ R
    M = np.vstack([np.eye(n) - P, mu])
    V = linalg.lstsq(M, np.r_[R - r, 0.0])[0]
    return r, V


def in_span_e(x, tol):
    return span(x) <= tol


class TestMdp:
    def test_json_roundtrip(self, tmp_path):
        mdp = random_unichain_mdp(3, 2, seed=0)
        path = tmp_path / "m.json"
        path.write_text(mdp.to_json())
        back = Mdp.load(path)
        assert_array_equal(back.P, mdp.P)
        assert_array_equal(back.R, mdp.R)
        doc = mdp.to_dict()
        assert len(doc["transitions"]) == 3 * 2 * 3
        # row-major: (s, a, s')
        assert doc["transitions"][1 * 6 + 1 * 3 + 2] == mdp.P[1, 1, 2]

    def test_validation(self):
        with pytest.raises(ValueError):
            Mdp(np.full((2, 1, 2), 0.6), np.zeros((2, 1)))
        with pytest.raises(ValueError):
            Mdp(np.full((2, 1, 2), 0.5), np.full((2, 1), 1.5))
        with pytest.raises(ValueError):
            Mdp(np.full((2, 1, 2), 0.5), np.zeros((3, 1)))

    def test_policy_matrices(self):
        mdp = random_unichain_mdp(3, 2, seed=1)
        P_det, R_det = mdp.policy_matrices([1, 0, 1])
        onehot = np.eye(2)[[1, 0, 1]]
        P_st, R_st = mdp.policy_matrices(onehot)
        assert_allclose(P_det, P_st)
        assert_allclose(R_det, R_st)


class TestSolveMrp:
    def test_single_state(self):
        mdp = Mdp(np.ones((1, 1, 1)), np.full((1, 1), 0.5))
        m = solve_mrp(mdp, [0])
        assert m.r == 0.5
        assert_allclose(m.V, 0.0, atol=1e-15)

    def test_two_state_symmetric(self):
        p = 0.2
        m = mrp_from_matrix([[1 - p, p], [p, 1 - p]], [1.0, 0.0])
        assert_allclose(m.r, 0.5)
        assert_allclose(m.V, [1 / (4 * p), -1 / (4 * p)], rtol=1e-13)

    def test_random_against_oracle(self):
        m = random_mrp(5, seed=2)
        r, V = value_oracle(m.P, m.R)
        assert_allclose(m.r, r, rtol=1e-12)
        assert_allclose(m.V, V, atol=1e-10)
        assert in_span_e(m.R - m.r + m.P @ m.V - m.V, 1e-10)
        assert abs(m.mu @ m.V) <= 1e-12

    def test_reducible(self):
        with pytest.raises(ValueError):
            mrp_from_matrix(np.eye(2), [0.0, 1.0])


class TestBellmanLambda:
    def test_lambda_zero(self):
        m = random_mrp(4, seed=3)
        v = np.arange(4.0)
        assert_allclose(bellman_lambda(m, 0.0, v), m.R - m.r + m.P @ v, rtol=1e-13)

    def test_series_oracle(self):
        m = random_mrp(4, seed=4)
        lam = 0.6
        v = np.array([0.3, -1.0, 2.0, 0.5])
        T = lambda x: m.R - m.r + m.P @ x
        acc, x = np.zeros(4), v
        for j in range(200):
            x = T(x)
            acc += (1 - lam) * lam**j * x
        assert_allclose(bellman_lambda(m, lam, v), acc, atol=1e-12)

    def test_fixed_point_set(self):
        m = random_mrp(5, seed=5)
        out = bellman_lambda(m, 0.7, m.V)
        assert in_span_e(out - m.V, 1e-9)

    def test_shift(self):
        m = random_mrp(3, seed=6)
        v = np.array([1.0, 0.0, -2.0])
        assert_allclose(bellman_lambda(m, 0.4, v + 3.0) - bellman_lambda(m, 0.4, v), 3.0,
                        rtol=1e-12)

    def test_lambda_range(self):
        with pytest.raises(ValueError):
            bellman_lambda(random_mrp(3), 1.0, np.zeros(3))


class TestTDSolution:
    def test_tabular(self):
        m = random_mrp(4, seed=7)
        th, S = td_solution_set(m, FeatureMap.tabular(4), 0.5)
        assert S.shape == (4, 1)
        assert_allclose(np.abs(S[:, 0]), 0.5)
        assert in_span_e(th - m.V, 1e-8)

    def test_features_orthogonal_to_e(self):
        m = random_mrp(5, seed=8)
        rng = np.random.default_rng(8)
        F = rng.standard_normal((5, 2))
        F -= F.mean(axis=0)
        F /= 1.01 * np.linalg.norm(F, axis=1).max()
        th, S = td_solution_set(m, FeatureMap(F), 0.3)
        assert S.shape == (2, 0)
        inst = td_instance(m, FeatureMap(F), 0.3)
        M = inst.A_bar[1:, 1:]
        assert np.linalg.matrix_rank(M) == 2
        assert_allclose(M @ th + inst.b_bar[1:] - m.r / 0.7 * F.T @ m.mu, 0.0, atol=1e-12)

    def test_constant_feature(self):
        m = random_mrp(3, seed=9)
        th, S = td_solution_set(m, FeatureMap(np.ones((3, 1))), 0.2)
        assert S.shape == (1, 1)
        assert_allclose(th, 0.0)

    def test_feature_validation(self):
        with pytest.raises(ValueError):
            FeatureMap(np.ones((3, 2)))
        with pytest.raises(ValueError):
            FeatureMap(2 * np.eye(3))


@pytest.fixture(scope="module")
def inst():
    return td_instance(random_mrp(3, seed=10), FeatureMap.tabular(3), 0.5)


class TestTDInstance:
    def test_c_alpha_minimum(self, inst):
        assert inst.c_alpha >= inst.Delta + 1 / (inst.Delta * 0.25) * (1 - 1e-12)
        with pytest.raises(ValueError):
            td_instance(inst.mrp, inst.features, 0.5, c_alpha=0.5 * inst.c_alpha)

    def test_fixed_point(self, inst):
        C = inst.projector
        assert linalg.norm(C @ (inst.A_bar @ inst.Theta_star + inst.b_bar)) <= 1e-10

    def test_certificate(self, inst):
        c = inst.cert
        assert c.residual <= 1e-10
        w = linalg.eigvalsh(c.Q)
        assert w[0] >= -1e-10
        assert linalg.norm(c.P @ inst.E) <= 1e-12

    def test_local_matrices(self, inst):
        run = td_lambda_run(inst, StepsizeSchedule.constant(0.01), 200, 4, seed=0,
                            store_iterates=True, trace_states=True)
        states = run.extras["states"]
        for k in range(199):
            for i in range(4):
                z = run.extras["z"][k][i]
                A = inst.A_of(states[i, k], states[i, k + 1], z)
                b = inst.b_of(states[i, k], z)
                assert linalg.norm(A, 2) <= 2 * inst.c_alpha
                assert linalg.norm(b) <= 2 * inst.c_alpha
                assert np.all(A @ inst.E == 0)

    def test_mean_matrices_mc(self):
        m = random_mrp(3, seed=11)
        inst = td_instance(m, FeatureMap.tabular(3), 0.5)
        A, A_se, b, b_se = td_mean_estimate(inst, 4000, n_chains=40, seed=1)
        for est, se, exact in [(A, A_se, inst.A_bar), (b, b_se, inst.b_bar)]:
            random = se > 1e-12
            assert np.all(np.abs(est - exact)[random] <= 3 * se[random])
            assert np.all(np.abs(est - exact)[~random] <= 1e-12)


class TestTDRun:
    def test_trace_is_discounted_sum(self):
        inst = td_instance(random_mrp(3, seed=12), FeatureMap.tabular(3), 0.7)
        run = td_lambda_run(inst, StepsizeSchedule.constant(0.01), 60, 3, seed=2,
                            store_iterates=True, trace_states=True)
        Phi = inst.features.Phi
        st = run.extras["states"]
        for k in (0, 10, 59):
            w = 0.7 ** (k - np.arange(k + 1))
            ref = np.einsum("t,itd->id", w, Phi[st[:, : k + 1]])
            assert_allclose(run.extras["z"][k], ref, atol=1e-12)

    def test_single_state_reward_average(self):
        m = mrp_from_matrix([[1.0]], [0.8])
        inst = td_instance(m, FeatureMap(np.ones((1, 1))), 0.0)
        sched = StepsizeSchedule.linear(1.0, 4.0)
        run = td_lambda_run(inst, sched, 30, 1, r0=0.0)
        ref = 0.8 * np.r_[1.0, np.cumprod(1 - inst.c_alpha * sched(np.arange(29)))]
        assert_allclose(run.p_errors[0], ref, rtol=1e-12)

    def test_tabular_lambda_zero_decreases(self):
        m = mrp_from_matrix([[0.6, 0.4], [0.3, 0.7]], [1.0, 0.2])
        inst = td_instance(m, FeatureMap.tabular(2), 0.0)
        beta = max(25.0, 2.5 / inst.Delta)
        sched = StepsizeSchedule.linear(beta, max(300.0, 2 * inst.c_alpha * beta))
        run = td_lambda_run(inst, sched, 20001, 20, seed=3, record_at=[0, 1000, 20000])
        m2 = run.mean_sq()
        assert m2[2] < m2[1] < m2[0]

    def test_reproducible(self):
        inst = td_instance(random_mrp(3, seed=13), FeatureMap.tabular(3), 0.3)
        s = StepsizeSchedule.constant(0.01)
        a = td_lambda_run(inst, s, 50, 3, seed=4)
        b = td_lambda_run(inst, s, 50, 3, seed=4)
        assert_array_equal(a.p_errors, b.p_errors)


def cycle_mdp():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    return Mdp(P, np.array([[1.0], [0.0]]))


class TestOperators:
    def test_j1_is_h(self):
        mdp = random_unichain_mdp(3, 2, seed=14)
        Q = np.random.default_rng(0).standard_normal((3, 2))
        assert_allclose(j_step_h(mdp, Q, 1), h_operator(mdp, Q), rtol=1e-15)

    def test_shift_equivariance(self):
        mdp = random_unichain_mdp(3, 2, seed=15)
        Q = np.random.default_rng(1).standard_normal((3, 2))
        for J in (1, 3):
            assert_allclose(j_step_h(mdp, Q + 2.5, J) - j_step_h(mdp, Q, J), 2.5, atol=1e-12)
        assert_array_equal(np.argmax(Q + 2.5, axis=1), np.argmax(Q, axis=1))

    def test_tie_breaking(self):
        mdp = Mdp(np.full((2, 2, 2), 0.5), np.array([[0.0, 1.0], [0.0, 0.0]]))
        Q = np.array([[1.0, 1.0], [0.0, 3.0]])
        # state 0 ties: action 0 is chosen, so v = (1, 3) + R-path
        out = j_step_h(mdp, Q, 2)
        assert_allclose(out, mdp.R + 0.5 * ((0.0 + 0.5 * (1 + 3)) + (0.0 + 0.5 * (1 + 3))))

    def test_not_iterated_h(self):
        mdp = random_unichain_mdp(3, 3, seed=16)
        Q = np.random.default_rng(2).standard_normal((3, 3)) * 5
        assert not np.allclose(j_step_h(mdp, Q, 2), h_operator(mdp, h_operator(mdp, Q)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3))
    def test_bruteforce(self, seed, J):
        mdp = random_unichain_mdp(2, 2, seed=seed)
        Q = np.random.default_rng(seed).standard_normal((2, 2))
        assert_allclose(j_step_h(mdp, Q, J), j_step_h_bruteforce(mdp, Q, J), atol=1e-12)

    def test_bruteforce_three_states(self):
        mdp = random_unichain_mdp(3, 2, seed=17)
        Q = np.random.default_rng(3).standard_normal((3, 2))
        assert_allclose(j_step_h(mdp, Q, 3), j_step_h_bruteforce(mdp, Q, 3), atol=1e-12)


class TestQStar:
    def test_single_action(self):
        mdp = random_unichain_mdp(4, 1, seed=18)
        Q, r = q_star_oracle(mdp)
        m = solve_mrp(mdp, np.zeros(4, dtype=int))
        assert_allclose(r, m.r, rtol=1e-10)
        assert in_span_e(Q[:, 0] - m.V, 1e-9)

    def test_cycle(self):
        Q, r = q_star_oracle(cycle_mdp())
        assert_allclose(r, 0.5, atol=1e-10)

    def test_constant_rewards(self):
        mdp = Mdp(random_unichain_mdp(3, 2, seed=19).P, np.full((3, 2), 0.3))
        Q, r = q_star_oracle(mdp)
        assert_allclose(r, 0.3, atol=1e-12)
        assert_allclose(Q, 0.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_residuals(self, seed):
        mdp = random_unichain_mdp(4, 3, seed=20 + seed)
        for J in (1, 2, 3):
            Q, r = q_star_oracle(mdp, J)
            assert Q.min() == 0
            assert span(h_operator(mdp, Q) - r - Q) <= 1e-9
            assert span(j_step_h(mdp, Q, J) - J * r - Q) <= 1e-9

    def test_non_convergence(self):
        with pytest.raises(RuntimeError):
            q_star_oracle(random_unichain_mdp(3, 2, seed=25), max_sweeps=2)


class TestQLearning:
    def test_select_J_dense(self):
        mdp = random_unichain_mdp(3, 2, seed=26)
        J, g = select_J(mdp)
        assert J == 1
        P = mdp.P.reshape(6, 3)
        dob = max(0.5 * np.abs(P[i] - P[j]).sum() for i in range(6) for j in range(6))
        assert g <= dob + 1e-12
        assert g >= dob - 1e-12

    def test_noise_free_contraction(self):
        mdp = random_unichain_mdp(3, 2, seed=27)
        g = q_contraction_estimate(mdp, 1).gamma
        Qs, _ = q_star_oracle(mdp, tol=1e-13)
        Q0 = np.random.default_rng(4).standard_normal((3, 2)) * 3
        run = q_learning_run(mdp, 1, StepsizeSchedule.constant(1.0), 15, 1, Q0=Q0, q_star=Qs,
                             noise_free=True)
        e = run.p_errors[0]
        big = e[:-1] > 1e-6
        assert np.all(e[1:][big] <= g * e[:-1][big] + 1e-11)

    def test_noisy_run_checks_bound(self):
        mdp = random_unichain_mdp(3, 2, seed=28)
        run = q_learning_run(mdp, 2, StepsizeSchedule.constant(0.1), 200, 10, seed=5)
        assert run.p_errors.shape == (10, 200)
        assert run.mean_sq()[-1] < run.mean_sq()[0]

    def test_rollout_unbiased(self):
        # one step from a fixed Q with alpha = 1 gives the rollout target; its
        # mean across trials is H^(J)(Q)
        mdp = random_unichain_mdp(2, 2, seed=29)
        Q0 = np.array([[0.0, 1.0], [0.5, 0.2]])
        run = q_learning_run(mdp, 2, StepsizeSchedule.constant(1.0), 2, 4000, seed=6, Q0=Q0,
                             q_star=np.zeros(4), store_iterates=True)
        X = run.iterates[1]
        se = X.std(axis=0, ddof=1) / np.sqrt(X.shape[0])
        assert np.all(np.abs(X.mean(axis=0) - j_step_h(mdp, Q0, 2).ravel()) <= 4 * se + 1e-12)

    def test_envelope_constant(self):
        mdp = random_unichain_mdp(2, 2, seed=30)
        g = q_contraction_estimate(mdp, 1).gamma
        a = (1 - g) ** 2 / (640 * np.e * np.log(4))
        env = q_learning_envelope(mdp, 1, g, StepsizeSchedule.constant(a), [0, 10])
        assert env[0] >= env[1] > 0
        with pytest.raises(ValueError):
            q_learning_envelope(mdp, 1, g, StepsizeSchedule.constant(2 * a), [0])

    def test_envelope_diminishing(self):
        mdp = random_unichain_mdp(2, 2, seed=31)
        g = q_contraction_estimate(mdp, 1).gamma
        sched = q_learning_schedule(mdp, g)
        ks = np.array([100, 500, 1999])
        env = q_learning_envelope(mdp, 1, g, sched, ks)
        run = q_learning_run(mdp, 1, sched, 2000, 100, seed=7, record_at=ks)
        assert np.all(run.mean_sq() + 3 * run.stderr_sq() <= env)
        with pytest.raises(ValueError):
            q_learning_envelope(mdp, 1, g, StepsizeSchedule.linear(1.0, 10.0), ks)
