"""Average-reward MDPs: Bellman operators, TD(lambda), J-step Q-learning.

TD(lambda) with linear features is run as a linear SA in Theta = [r; theta]
whose mean matrix has the kernel E = {0} x S_{Phi,e}, where S_{Phi,e} is the
span of any theta with Phi theta = e. Q-learning is a span-seminorm SA on
Q-tables of shape (n_states, n_actions).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .lyapunov import LyapunovCertificate
from .markov import MarkovChain, stationary
from .seminorm import Seminorm, complement_basis, verify_contraction
from .sa import SARun, StepsizeSchedule, TrialStreams, _parallel, _record_mask

__all__ = [
    "Mdp",
    "Mrp",
    "FeatureMap",
    "TDInstance",
    "solve_mrp",
    "mrp_from_matrix",
    "bellman_lambda",
    "td_solution_set",
    "td_instance",
    "td_lambda_run",
    "td_mean_estimate",
    "h_operator",
    "j_step_h",
    "j_step_h_bruteforce",
    "q_star_oracle",
    "q_contraction_estimate",
    "select_J",
    "q_learning_run",
    "q_learning_schedule",
    "q_learning_envelope",
    "random_unichain_mdp",
    "random_mrp",
    "span",
]


def span(x, axis=None):
    x = np.asarray(x, dtype=float)
    if axis is None:
        return float(x.max() - x.min())
    return x.max(axis=axis) - x.min(axis=axis)


# ---------------------------------------------------------------------------
# MDPs and MRPs
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Mdp:
    """Finite MDP with transitions P[s, a, s'] and rewards R[s, a] in [0, 1]."""

    P: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        S, A, S2 = self.P.shape
        if S != S2 or self.R.shape != (S, A):
            raise ValueError("inconsistent MDP shapes")
        if (self.P < 0).any() or np.abs(self.P.sum(axis=2) - 1).max() > 1e-12:
            raise ValueError("transition rows must be distributions (tol 1e-12)")
        if (self.R < 0).any() or (self.R > 1).any():
            raise ValueError("rewards must lie in [0, 1]")

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_actions(self):
        return self.P.shape[1]

    @cached_property
    def cumulative(self):
        c = np.cumsum(self.P, axis=2)
        c[..., -1] = 1.0
        return c

    def policy_matrices(self, policy):
        """(P_pi, R_pi) for a deterministic (S,) or stochastic (S, A) policy."""
        pol = np.asarray(policy)
        S = self.n_states
        if pol.ndim == 1:
            idx = pol.astype(np.int64)
            return self.P[np.arange(S), idx], self.R[np.arange(S), idx]
        pol = pol.astype(float)
        return np.einsum("sa,sat->st", pol, self.P), (pol * self.R).sum(axis=1)

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transitions": self.P.ravel().tolist(),
            "rewards": self.R.ravel().tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc):
        S, A = int(doc["n_states"]), int(doc["n_actions"])
        P = np.asarray(doc["transitions"], dtype=float).reshape(S, A, S)
        R = np.asarray(doc["rewards"], dtype=float).reshape(S, A)
        return cls(P, R)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(eq=False)
class Mrp:
    P: np.ndarray
    R: np.ndarray
    mu: np.ndarray
    r: float
    V: np.ndarray

    @property
    def n_states(self):
        return self.P.shape[0]

    @cached_property
    def chain(self):
        return MarkovChain(self.P)


def mrp_from_matrix(P, R):
    """Average reward and differential values with mu'V = 0."""
    P = np.asarray(P, dtype=float)
    R = np.asarray(R, dtype=float)
    mu = stationary(P)
    n = P.shape[0]
    r = float(mu @ R)
    e = np.ones(n)
    # (I - P + e mu') V = R - r e forces mu'V = 0
    V = linalg.solve(np.eye(n) - P + np.outer(e, mu), R - r * e)
    res = np.abs(R + P @ V - r * e - V).max()
    if res > 1e-10 * max(1.0, np.abs(V).max()):
        raise RuntimeError(f"Bellman residual {res:.3g} too large")
    return Mrp(P, R, mu, r, V)


def solve_mrp(mdp: Mdp, policy):
    P, R = mdp.policy_matrices(policy)
    return mrp_from_matrix(P, R)


def bellman_lambda(mrp: Mrp, lam, v):
    """T^(lambda)(v) = (I - lam P)^-1 [R - r e + (1 - lam) P v]."""
    if not 0 <= lam < 1:
        raise ValueError("lambda must lie in [0, 1)")
    n = mrp.n_states
    v = np.asarray(v, dtype=float)
    rhs = mrp.R - mrp.r + (1 - lam) * mrp.P @ v
    return linalg.solve(np.eye(n) - lam * mrp.P, rhs)


@dataclass(eq=False)
class FeatureMap:
    Phi: np.ndarray

    def __post_init__(self):
        Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        if Phi.shape[0] < Phi.shape[1]:
            raise ValueError("need at least as many states as features")
        s = linalg.svdvals(Phi)
        if s[-1] <= 1e-10:
            raise ValueError("feature matrix must have full column rank")
        if np.linalg.norm(Phi, axis=1).max() > 1 + 1e-12:
            raise ValueError("feature rows must have Euclidean norm <= 1")
        self.Phi = Phi

    @property
    def d(self):
        return self.Phi.shape[1]

    @classmethod
    def tabular(cls, n):
        return cls(np.eye(n))


# ---------------------------------------------------------------------------
# TD(lambda)
# ---------------------------------------------------------------------------

def _S_basis(Phi):
    n = Phi.shape[0]
    e = np.ones(n)
    th, *_ = linalg.lstsq(Phi, e)
    if np.abs(Phi @ th - e).max() <= 1e-10:
        return (th / np.linalg.norm(th))[:, None]
    return np.zeros((Phi.shape[1], 0))


def td_solution_set(mrp: Mrp, features: FeatureMap, lam):
    """(theta*, S_basis): theta* in E_{Phi,e} solving the restricted projected equation."""
    inst = _td_core(mrp, features, lam)
    return inst["theta_star"], inst["S_basis"]


def _td_core(mrp, features, lam):
    if not 0 <= lam < 1:
        raise ValueError("lambda must lie in [0, 1)")
    Phi = features.Phi
    n = mrp.n_states
    D = np.diag(mrp.mu)
    res = linalg.solve(np.eye(n) - lam * mrp.P, np.eye(n))
    P_lam = (1 - lam) * mrp.P @ res
    M = Phi.T @ D @ (P_lam - np.eye(n)) @ Phi
    c = Phi.T @ D @ (res @ mrp.R) - mrp.r / (1 - lam) * (Phi.T @ mrp.mu)
    S = _S_basis(Phi)
    B = complement_basis(S, features.d)
    if B.shape[1]:
        Mr = B.T @ M @ B
        if np.linalg.cond(Mr) > 1e12:
            raise ValueError("restricted TD system is singular")
        theta = B @ linalg.solve(Mr, -B.T @ c)
        G = B.T @ Phi.T @ D @ (np.eye(n) - P_lam) @ Phi @ B
        Delta = float(linalg.eigvalsh(0.5 * (G + G.T))[0])
    else:
        theta = np.zeros(features.d)
        Delta = np.inf
    full = np.abs(M @ theta + c).max()
    if full > 1e-8 * max(1.0, np.abs(c).max()):
        raise RuntimeError(f"projected Bellman residual {full:.3g} too large")
    return {"theta_star": theta, "S_basis": S, "E_basis": B, "M": M, "c": c,
            "P_lam": P_lam, "resolvent": res, "Delta": Delta}


@dataclass(eq=False)
class TDInstance:
    mrp: Mrp
    features: FeatureMap
    lam: float
    c_alpha: float
    theta_star: np.ndarray
    S_basis: np.ndarray
    Delta: float
    A_bar: np.ndarray
    b_bar: np.ndarray
    Theta_star: np.ndarray
    E: np.ndarray
    cert: LyapunovCertificate

    @property
    def c_alpha_min(self):
        return self.Delta + 1.0 / (self.Delta * (1 - self.lam) ** 2)

    @property
    def projector(self):
        """Orthogonal projection onto the complement of E."""
        C = complement_basis(self.E, self.features.d + 1)
        return C @ C.T

    def A_of(self, s, s2, z):
        d = self.features.d
        Phi = self.features.Phi
        A = np.zeros((d + 1, d + 1))
        A[0, 0] = -self.c_alpha
        A[1:, 0] = -z
        A[1:, 1:] = np.outer(z, Phi[s2] - Phi[s])
        return A

    def b_of(self, s, z):
        R = self.mrp.R[s]
        return R * np.r_[self.c_alpha, z]


def td_instance(mrp: Mrp, features: FeatureMap, lam, c_alpha=None, check=True):
    """TD(lambda) as linear SA: mean matrices, target, kernel and Lyapunov certificate.

    ``c_alpha`` defaults to the smallest value Delta + 1/(Delta (1-lambda)^2).
    """
    core = _td_core(mrp, features, lam)
    Delta = core["Delta"]
    c_min = Delta + 1 / (Delta * (1 - lam) ** 2) if np.isfinite(Delta) else 1.0
    if c_alpha is None:
        c_alpha = c_min
    if check and c_alpha < c_min * (1 - 1e-12):
        raise ValueError(f"c_alpha={c_alpha} below the admissible minimum {c_min}")
    Phi = features.Phi
    d = features.d
    D = np.diag(mrp.mu)
    A_bar = np.zeros((d + 1, d + 1))
    A_bar[0, 0] = -c_alpha
    A_bar[1:, 0] = -Phi.T @ mrp.mu / (1 - lam)
    A_bar[1:, 1:] = core["M"]
    b_bar = np.r_[c_alpha * mrp.r, Phi.T @ D @ (core["resolvent"] @ mrp.R)]
    E = np.vstack([np.zeros((1, core["S_basis"].shape[1])), core["S_basis"]])
    C = complement_basis(E, d + 1)
    P = C @ C.T
    Q = -(A_bar.T @ P + P @ A_bar)
    Q = 0.5 * (Q + Q.T)
    Qt = C.T @ Q @ C
    wq = linalg.eigvalsh(Qt)
    c2 = float(linalg.eigvalsh(Qt)[0]) if wq.size else 1.0  # P is identity on E-perp
    resid = float(linalg.norm(A_bar.T @ P + P @ A_bar + Q))
    cert = LyapunovCertificate("continuous", A_bar, P, Q, E, resid, c2,
                               float(wq[-1] / wq[0]) if wq.size and wq[0] > 0 else np.inf)
    Theta = np.r_[mrp.r, core["theta_star"]]
    return TDInstance(mrp, features, lam, float(c_alpha), core["theta_star"], core["S_basis"],
                      Delta, A_bar, b_bar, Theta, E, cert)


def td_lambda_run(inst: TDInstance, schedule: StepsizeSchedule, horizon, n_trials=100, seed=0,
                  theta0=None, r0=0.0, s0=0, record_at=None, store_iterates=False,
                  trace_states=False):
    """Algorithm-level TD(lambda) with beta_k from ``schedule`` and alpha_k = c_alpha beta_k.

    p-errors are Euclidean distances of Theta_k - Theta* to E.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    Phi = inst.features.Phi
    d = inst.features.d
    lam, ca = inst.lam, inst.c_alpha
    mrp = inst.mrp
    cum = mrp.chain.cumulative
    R = mrp.R
    Pr = inst.projector
    Ts = inst.Theta_star
    theta0 = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=float)
    ks = _record_mask(horizon, record_at)
    store = set(ks.tolist()) if store_iterates is True else set(store_iterates or ())
    rec_pos = {k: i for i, k in enumerate(ks.tolist())}
    betas = schedule(np.arange(horizon))

    def trials(ids):
        n = len(ids)
        streams = TrialStreams(seed, ids, 1)
        S = np.full(n, int(s0), dtype=np.int64)
        z = np.zeros((n, d))
        r = np.full(n, float(r0))
        th = np.tile(theta0, (n, 1))
        P_err = np.full((n, ks.size), np.nan)
        sup = np.full((n, ks.size), np.nan)
        its, zs = {}, {}
        states = np.zeros((n, horizon), dtype=np.int64) if trace_states else None
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(horizon):
                if trace_states:
                    states[:, k] = S
                z = lam * z + Phi[S]
                if k in rec_pos:
                    Th = np.column_stack([r, th])
                    j = rec_pos[k]
                    P_err[:, j] = np.linalg.norm((Th - Ts) @ Pr, axis=1)
                    sup[:, j] = np.abs(Th).max(axis=1)
                    if k in store:
                        its[k] = Th
                        zs[k] = z.copy()
                if k == horizon - 1:
                    break
                u = streams.next()[:, 0]
                S2 = np.minimum((u[:, None] >= cum[S]).sum(axis=1), mrp.n_states - 1)
                Rk = R[S]
                td = Rk - r + ((Phi[S2] - Phi[S]) * th).sum(axis=1)
                th = th + betas[k] * td[:, None] * z
                r = r + ca * betas[k] * (Rk - r)
                S = S2
        div = ~np.isfinite(th).all(axis=1)
        return {"p": P_err, "sup": sup, "div": div, "clips": 0, "it": its,
                "z": zs, "states": states}

    parts = _parallel(trials, n_trials)
    run = SARun(schedule, ks,
                np.concatenate([p["p"] for p in parts]),
                np.concatenate([p["sup"] for p in parts]),
                seed, Ts, np.concatenate([p["div"] for p in parts]))
    if store:
        run.iterates = {k: np.concatenate([p["it"][k] for p in parts]) for k in parts[0]["it"]}
        run.extras["z"] = {k: np.concatenate([p["z"][k] for p in parts]) for k in parts[0]["z"]}
    if trace_states:
        run.extras["states"] = np.concatenate([p["states"] for p in parts])
    return run


def td_mean_estimate(inst: TDInstance, n_steps, n_chains=50, seed=0, burn=200):
    """Time averages of A(Y_k), b(Y_k) along independent stationary-started chains.

    Returns (A_mean, A_se, b_mean, b_se) with standard errors across chains.
    """
    Phi = inst.features.Phi
    d = inst.features.d
    lam, ca = inst.lam, inst.c_alpha
    mrp = inst.mrp
    cum = mrp.chain.cumulative
    rng = np.random.default_rng(seed)
    S = rng.choice(mrp.n_states, size=n_chains, p=mrp.mu)
    z = np.zeros((n_chains, d))
    sz = np.zeros((n_chains, d))
    szd = np.zeros((n_chains, d, d))
    sRz = np.zeros((n_chains, d))
    cnt = 0
    for k in range(burn + n_steps):
        z = lam * z + Phi[S]
        u = rng.random(n_chains)
        S2 = np.minimum((u[:, None] >= cum[S]).sum(axis=1), mrp.n_states - 1)
        if k >= burn:
            sz += z
            szd += z[:, :, None] * (Phi[S2] - Phi[S])[:, None, :]
            sRz += mrp.R[S][:, None] * z
            cnt += 1
        S = S2
    A = np.zeros((n_chains, d + 1, d + 1))
    A[:, 0, 0] = -ca
    A[:, 1:, 0] = -sz / cnt
    A[:, 1:, 1:] = szd / cnt
    b = np.zeros((n_chains, d + 1))
    # the r-row of b averages c_alpha R(S_k); use the exact stationary value
    b[:, 0] = ca * mrp.r
    b[:, 1:] = sRz / cnt
    se = lambda X: X.std(axis=0, ddof=1) / np.sqrt(n_chains)
    return A.mean(axis=0), se(A), b.mean(axis=0), se(b)


# ---------------------------------------------------------------------------
# Q-learning
# ---------------------------------------------------------------------------

def _as_table(mdp, Q):
    Q = np.asarray(Q, dtype=float)
    return Q.reshape(mdp.n_states, mdp.n_actions)


def h_operator(mdp: Mdp, Q):
    """[H Q](s, a) = R(s, a) + sum_s' p(s'|s, a) max_a' Q(s', a')."""
    Q = _as_table(mdp, Q)
    return mdp.R + mdp.P @ Q.max(axis=1)


def greedy(Q):
    """Greedy actions; ties go to the lowest index."""
    return np.argmax(Q, axis=-1)


def j_step_h(mdp: Mdp, Q, J):
    """J-step lookahead with the greedy policy of Q held fixed along the rollout."""
    if J < 1:
        raise ValueError("J must be >= 1")
    Q = _as_table(mdp, Q)
    S = mdp.n_states
    mu = greedy(Q)
    P_mu = mdp.P[np.arange(S), mu]
    R_mu = mdp.R[np.arange(S), mu]
    v = Q[np.arange(S), mu]
    for _ in range(J - 1):
        v = R_mu + P_mu @ v
    return mdp.R + mdp.P @ v


def j_step_h_bruteforce(mdp: Mdp, Q, J):
    """Same operator by summing over every J-step state path."""
    Q = _as_table(mdp, Q)
    S, A = mdp.n_states, mdp.n_actions
    mu = greedy(Q)
    out = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            tot = 0.0
            for path in itertools.product(range(S), repeat=J):
                prob = mdp.P[s, a, path[0]]
                val = mdp.R[s, a]
                for j in range(1, J):
                    prob *= mdp.P[path[j - 1], mu[path[j - 1]], path[j]]
                    val += mdp.R[path[j - 1], mu[path[j - 1]]]
                val += Q[path[-1], mu[path[-1]]]
                tot += prob * val
            out[s, a] = tot
    return out


def q_star_oracle(mdp: Mdp, J=1, tol=1e-10, max_sweeps=10**6, damping=0.5):
    """Relative value iteration on H, anchored at (0, 0).

    The update Q <- Q + tau (H(Q) - Q) - anchor with tau = ``damping`` keeps
    the same fixed points and also converges for periodic chains. Returns
    (Q*, r*) with Q* shifted to min-entry 0.
    """
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    for sweep in range(max_sweeps):
        H = h_operator(mdp, Q)
        diff = H - Q
        if span(diff) <= tol:
            break
        Q = Q + damping * diff
        Q -= Q[0, 0]
    else:
        raise RuntimeError("relative value iteration did not converge")
    r_star = 0.5 * (diff.max() + diff.min())
    Q = Q - Q.min()
    resid_J = span(j_step_h(mdp, Q, J) - J * r_star - Q)
    if resid_J > 100 * tol * max(1, J):
        raise RuntimeError(f"J-step optimality residual {resid_J:.3g} too large")
    return Q, float(r_star)


def _q_pair_sampler(mdp):
    S, A = mdp.n_states, mdp.n_actions

    def sampler(rng, n):
        X = rng.standard_normal((n, S * A))
        Y = rng.standard_normal((n, S * A))
        # state indicators, constant across actions: these attain the
        # Dobrushin coefficient of the one-step operator
        m = min(n // 2, 2**S)
        for i in range(m):
            if 2**S <= n // 2:
                subset = np.array([(i >> b) & 1 for b in range(S)], dtype=bool)
            else:
                subset = rng.random(S) < 0.5
            X[i] = np.repeat(subset.astype(float), A)
            Y[i] = 0.0
        return X, Y

    return sampler


def q_contraction_estimate(mdp: Mdp, J, n_samples=2000, seed=0):
    """Sampled span-contraction factor of the J-step operator."""
    p = Seminorm.span(mdp.n_states * mdp.n_actions)

    def T(q):
        return j_step_h(mdp, q, J).ravel()

    return verify_contraction(T, p, n_samples, seed=seed, sampler=_q_pair_sampler(mdp))


def select_J(mdp: Mdp, max_J=None, threshold=0.99, n_samples=2000, seed=0):
    """Smallest J <= max_J (default 2 n_states) with sampled factor <= threshold."""
    max_J = 2 * mdp.n_states if max_J is None else max_J
    for J in range(1, max_J + 1):
        est = q_contraction_estimate(mdp, J, n_samples, seed)
        if est.gamma <= threshold:
            return J, est.gamma
    raise ValueError("no J with a sampled span contraction found")


def q_learning_run(mdp: Mdp, J, schedule: StepsizeSchedule, horizon, n_trials=100, seed=0,
                   Q0=None, q_star=None, noise_free=False, record_at=None,
                   store_iterates=False):
    """Synchronous J-step Q-learning; p-errors are span(Q_k - Q*).

    Each iteration draws one greedy J-step rollout for every (s, a). The
    sampled noise is checked against span(w) <= 2 span(Q) + 2 J span(R).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    S, A = mdp.n_states, mdp.n_actions
    if q_star is None:
        q_star, _ = q_star_oracle(mdp, J)
    Qs = np.asarray(q_star, dtype=float).reshape(S, A)
    Q0 = np.zeros((S, A)) if Q0 is None else np.asarray(Q0, dtype=float).reshape(S, A)
    ks = _record_mask(horizon, record_at)
    store = set(ks.tolist()) if store_iterates is True else set(store_iterates or ())
    rec_pos = {k: i for i, k in enumerate(ks.tolist())}
    alphas = schedule(np.arange(horizon))
    cum = mdp.cumulative
    spanR = span(mdp.R)
    sidx = np.arange(S)

    def exact_HJ(Q):
        # Q: (n, S, A) -> (n, S, A)
        mu = Q.argmax(axis=2)
        P_mu = mdp.P[sidx[None, :], mu]          # (n, S, S)
        R_mu = mdp.R[sidx[None, :], mu]          # (n, S)
        v = np.take_along_axis(Q, mu[..., None], axis=2)[..., 0]
        for _ in range(J - 1):
            v = R_mu + np.einsum("nst,nt->ns", P_mu, v)
        return mdp.R[None] + np.einsum("sat,nt->nsa", mdp.P, v)

    def trials(ids):
        n = len(ids)
        width = 0 if noise_free else J * S * A
        streams = TrialStreams(seed, ids, max(width, 1))
        Q = np.tile(Q0, (n, 1, 1))
        P_err = np.full((n, ks.size), np.nan)
        sup = np.full((n, ks.size), np.nan)
        its = {}
        n_idx = np.arange(n)[:, None, None]
        for k in range(horizon):
            if k in rec_pos:
                j = rec_pos[k]
                D = (Q - Qs).reshape(n, -1)
                P_err[:, j] = D.max(axis=1) - D.min(axis=1)
                sup[:, j] = np.abs(Q).reshape(n, -1).max(axis=1)
                if k in store:
                    its[k] = Q.reshape(n, -1).copy()
            if k == horizon - 1:
                break
            HJ = exact_HJ(Q)
            if noise_free:
                target = HJ
            else:
                U = streams.next().reshape(n, J, S, A)
                mu = Q.argmax(axis=2)
                # first transition from (s, a)
                cur = (U[:, 0, :, :, None] >= cum[None]).sum(axis=-1)
                cur = np.minimum(cur, S - 1)
                acc = np.broadcast_to(mdp.R[None], (n, S, A)).copy()
                for jj in range(1, J):
                    act = mu[n_idx, cur]
                    acc += mdp.R[cur, act]
                    c = cum[cur, act]
                    cur = np.minimum((U[:, jj, :, :, None] >= c).sum(axis=-1), S - 1)
                act = mu[n_idx, cur]
                target = acc + Q[n_idx, cur, act]
                w = HJ - target
                sw = span(w.reshape(n, -1), axis=1)
                sq = span(Q.reshape(n, -1), axis=1)
                if (sw > 2 * sq + 2 * J * spanR + 1e-9).any():
                    raise AssertionError("rollout noise exceeds its span bound")
            Q = Q + alphas[k] * (target - Q)
        return {"p": P_err, "sup": sup, "div": np.zeros(n, bool), "clips": 0, "it": its}

    parts = _parallel(trials, n_trials)
    run = SARun(schedule, ks,
                np.concatenate([p["p"] for p in parts]),
                np.concatenate([p["sup"] for p in parts]),
                seed, Qs.ravel(), np.concatenate([p["div"] for p in parts]))
    if store:
        run.iterates = {k: np.concatenate([p["it"][k] for p in parts]) for k in parts[0]["it"]}
    return run


def q_learning_schedule(mdp: Mdp, gamma):
    """Diminishing schedule alpha/(k+h) with alpha = 4/(1-g), h = 640 e log(SA)/(1-g)^3."""
    logsa = math.log(mdp.n_states * mdp.n_actions)
    return StepsizeSchedule.linear(4 / (1 - gamma), 640 * math.e * logsa / (1 - gamma) ** 3)


def q_learning_envelope(mdp: Mdp, J, gamma, schedule: StepsizeSchedule, ks, Q0=None,
                        q_star=None):
    """Closed-form bound on E[span(Q_k - Q*)^2] at indices ``ks``.

    Constant steps must satisfy alpha <= (1-g)^2 / (640 e log(SA)); the
    diminishing form applies to ``q_learning_schedule`` only. Raises
    ValueError for other schedules.
    """
    S, A = mdp.n_states, mdp.n_actions
    logsa = math.log(S * A)
    if q_star is None:
        q_star, _ = q_star_oracle(mdp, J)
    Qs = np.asarray(q_star, dtype=float).ravel()
    Q0 = np.zeros(S * A) if Q0 is None else np.asarray(Q0, dtype=float).ravel()
    e0, s0 = span(Q0 - Qs), span(Q0)
    ks = np.asarray(ks, dtype=float)
    g = 1 - gamma
    if schedule.kind == "constant":
        a = schedule.alpha
        if a > g**2 / (640 * math.e * logsa) * (1 + 1e-12):
            raise ValueError("constant step too large for the Q-learning bound")
        c1 = 3 * (e0 + s0 + 1) ** 2
        c2 = 912 * math.e * (span(Qs) + J) ** 2
        return c1 * (1 - g * a / 2) ** ks + c2 * logsa / g**2 * a
    ref = q_learning_schedule(mdp, gamma)
    if schedule.kind != "linear" or not (math.isclose(schedule.alpha, ref.alpha)
                                         and math.isclose(schedule.h, ref.h)):
        raise ValueError("no closed-form Q-learning bound for this schedule")
    with np.errstate(divide="ignore"):
        return 8192 * math.e**2 * (e0 + 2 * s0 + J**2) * logsa / (g**3 * ks)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def random_unichain_mdp(n_states, n_actions, seed=0, concentration=1.0):
    """Dense Dirichlet transitions, so every policy induces an ergodic chain."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(0, 1, size=(n_states, n_actions))
    return Mdp(P, R)


def random_mrp(n_states, seed=0, concentration=1.0):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(n_states, concentration), size=n_states)
    P /= P.sum(axis=1, keepdims=True)
    R = rng.uniform(0, 1, size=n_states)
    return mrp_from_matrix(P, R)
