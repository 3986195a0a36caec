"""Markovian stochastic approximation under seminorm contraction.

    x_{k+1} = x_k + alpha_k (F(x_k, Y_k) - x_k + w_k)

with {Y_k} a finite Markov chain and w_k a martingale-difference noise. All
trials of a run advance together as one (n_trials, d) array; each trial owns
an independent random stream spawned from the root seed, so a trial's path
does not depend on how many other trials run alongside it.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .lyapunov import LyapunovCertificate, solve_continuous
from .markov import MarkovChain, mixing_time, operator_mixing_time
from .moreau import MoreauEnvelope, moreau_eval, norm_equivalence, select_theta
from .seminorm import Seminorm, complement_basis, evaluate

__all__ = [
    "StepsizeSchedule",
    "SAProblem",
    "LinearSAProblem",
    "BoundConstants",
    "SARun",
    "Envelope",
    "Condition1Result",
    "bound_constants",
    "linear_bound_constants",
    "check_condition1",
    "check_linear_condition",
    "mixing_times",
    "window_sums",
    "burn_in",
    "run_sa",
    "run_linear_sa",
    "bound_envelope",
    "linear_bound_envelope",
    "drift_check",
    "iterate_window_check",
    "symmetric_noise",
    "scalar_test_problem",
    "TrialStreams",
    "n_threads",
    "random_linear_problem",
]

_KIND_ALIASES = {"const": "constant", "constant": "constant", "linear": "linear",
                 "poly": "polynomial", "polynomial": "polynomial"}


@dataclass(frozen=True)
class StepsizeSchedule:
    """alpha_k = alpha, alpha/(k+h) or alpha/(k+h)^xi."""

    kind: str
    alpha: float
    h: float = 0.0
    xi: float = 1.0

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind)
        if kind is None:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if kind != "constant" and self.h <= 0:
            raise ValueError("h must be positive for decaying schedules")
        if kind == "polynomial" and not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")

    @classmethod
    def constant(cls, alpha):
        return cls("constant", alpha)

    @classmethod
    def linear(cls, alpha, h):
        return cls("linear", alpha, h)

    @classmethod
    def polynomial(cls, alpha, h, xi):
        return cls("polynomial", alpha, h, xi)

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        if self.kind == "constant":
            out = np.full_like(k, self.alpha)
        elif self.kind == "linear":
            out = self.alpha / (k + self.h)
        else:
            out = self.alpha / (k + self.h) ** self.xi
        return float(out) if out.ndim == 0 else out

    def partial_sum(self, i, j):
        """alpha_{i,j} = sum_{k=i}^{j} alpha_k, correctly rounded."""
        if j < i:
            return 0.0
        return math.fsum(self(np.arange(i, j + 1)).tolist())

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "h": self.h, "xi": self.xi}


def mixing_times(chain: MarkovChain, deltas):
    """Exact t_delta for an array of accuracies."""
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    small = deltas[deltas < 1]
    if small.size == 0:
        return np.zeros(deltas.shape, dtype=np.int64)
    t_max = mixing_time(chain, small.min())
    tv = np.minimum.accumulate(chain.tv_profile(t_max))
    out = np.searchsorted(-tv, -deltas, side="left")
    out[deltas >= 1] = 0
    return out.astype(np.int64)


def window_sums(alphas, ts):
    """alpha_{k - t_k, k - 1} for each k, with math.fsum over each window."""
    out = np.empty(len(ts))
    al = alphas.tolist()
    for k, t in enumerate(ts):
        lo = max(k - int(t), 0)
        out[k] = math.fsum(al[lo:k])
    return out


def burn_in(ts):
    """K = min{k : k >= t_k}."""
    ks = np.arange(len(ts))
    hit = np.nonzero(ks >= ts)[0]
    if hit.size == 0:
        raise ValueError("burn-in index exceeds the horizon")
    return int(hit[0])


@dataclass(frozen=True)
class BoundConstants:
    phi1: float
    phi2: float
    phi3: float
    theta: float
    l_cs: float
    u_cs: float
    l_cm: float
    u_cm: float
    L: float
    A: float
    B: float
    gamma: float

    def threshold(self):
        """Right-hand side of the stepsize condition."""
        return min(self.phi2 / (self.phi3 * self.A**2), 1.0 / (4 * self.A))


def bound_constants(p: Seminorm, gamma, A1, B1, A2=0.0, B2=0.0, theta=None, L=1.0):
    """phi1, phi2, phi3 and friends for a seminorm contraction of factor gamma."""
    l_cs, u_cs = norm_equivalence(p)
    if theta is None:
        theta = select_theta(l_cs, u_cs, gamma)
    phi1 = (1 + theta * u_cs**2) / (1 + theta * l_cs**2)
    phi2 = 0.5 * (1 - gamma**2 * phi1)
    if not 0 < phi2 < 0.5 + 1e-15:
        raise ValueError(f"theta={theta} gives phi2={phi2} outside (0, 1/2)")
    phi3 = 82 * L * (1 + theta * u_cs**2) / (theta * l_cs**2)
    return BoundConstants(
        phi1, phi2, phi3, theta, l_cs, u_cs,
        math.sqrt(1 + theta * l_cs**2), math.sqrt(1 + theta * u_cs**2),
        L, A1 + A2 + 1, B1 + B2, gamma,
    )


@dataclass
class Condition1Result:
    passed: bool
    first_violation: int | None
    threshold: float
    max_window: float
    non_increasing: bool = True

    def __bool__(self):
        return self.passed


def _condition(schedule, ts, horizon, threshold):
    ks = np.arange(horizon)
    alphas = schedule(ks)
    mono = bool(np.all(np.diff(alphas) <= 0))
    w = window_sums(alphas, ts)
    active = ks >= ts
    bad = np.nonzero(active & (w > threshold))[0]
    max_w = float(w[active].max()) if active.any() else 0.0
    first = int(bad[0]) if bad.size else None
    return Condition1Result(mono and first is None, first, threshold, max_w, mono)


def check_condition1(schedule: StepsizeSchedule, chain: MarkovChain,
                     consts: BoundConstants, A=None, horizon=10_000):
    """Check alpha_{k-t_k,k-1} <= min(phi2/(phi3 A^2), 1/(4A)) for t_k <= k < horizon."""
    A = consts.A if A is None else A
    ts = mixing_times(chain, schedule(np.arange(horizon)))
    thr = min(consts.phi2 / (consts.phi3 * A**2), 1 / (4 * A))
    return _condition(schedule, ts, horizon, thr)


# ---------------------------------------------------------------------------
# problems and runs
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SAProblem:
    """A Markovian SA instance.

    ``F(X, Y)`` maps a stack of iterates (n, d) and chain states (n,) to
    (n, d). ``noise(X, Y, U)`` maps the same plus uniforms U of shape
    (n, noise_width) to zero-conditional-mean noise.
    """

    F: Callable
    chain: MarkovChain
    p_c: Seminorm
    gamma: float
    A1: float
    B1: float
    x_star: np.ndarray
    A2: float = 0.0
    B2: float = 0.0
    noise: Callable | None = None
    noise_width: int = 0

    @property
    def dim(self):
        return self.p_c.dim

    def constants(self, theta=None):
        return bound_constants(self.p_c, self.gamma, self.A1, self.B1, self.A2, self.B2, theta)


def symmetric_noise(vectors):
    """Noise oracle returning +v or -v for a uniformly chosen row v of ``vectors``.

    Conditional mean zero holds by construction. Needs noise_width = 1.
    """
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    m = V.shape[0]

    def noise(X, Y, U):
        u = U[:, 0]
        j = np.minimum((u * 2 * m).astype(np.int64), 2 * m - 1)
        sign = np.where(j % 2 == 0, 1.0, -1.0)
        return sign[:, None] * V[j // 2]

    return noise


def scalar_test_problem(sigma=0.5, a=(0.2, 0.8), b=(1.5, -0.5), switch=0.3):
    """Scalar contraction driven by a two-state chain.

    F(x, y) = a_y x + b_y, with the chain flipping state with probability
    ``switch``; the mean map is x -> mean(a) x + mean(b) and the noise is
    +-sigma. Multiplicative Markovian noise enters through a_y.
    """
    chain = MarkovChain(np.array([[1 - switch, switch], [switch, 1 - switch]]))
    a = np.asarray(a, dtype=float)
    bb = np.asarray(b, dtype=float)
    mu = chain.stationary
    abar, bbar = mu @ a, mu @ bb

    def F(X, Y):
        return a[Y][:, None] * X + bb[Y][:, None]

    p = Seminorm.quadratic(np.eye(1))
    noise = symmetric_noise([[sigma]]) if sigma > 0 else None
    return SAProblem(
        F=F, chain=chain, p_c=p, gamma=float(abs(abar)),
        A1=float(np.abs(a).max()), B1=float(np.abs(bb).max()),
        x_star=np.array([bbar / (1 - abar)]),
        A2=0.0, B2=float(sigma), noise=noise, noise_width=1 if sigma > 0 else 0,
    )


def n_threads():
    """Parallelism cap from SEMINORM_SA_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("SEMINORM_SA_THREADS", "1")))
    except ValueError:
        return 1


class TrialStreams:
    """Independent per-trial uniform streams spawned from one root seed."""

    def __init__(self, seed, trial_ids, width, chunk=4096):
        root = np.random.SeedSequence(seed)
        n_total = max(trial_ids) + 1 if len(trial_ids) else 0
        children = root.spawn(n_total)
        self.gens = [np.random.Generator(np.random.PCG64(children[i])) for i in trial_ids]
        self.width = width
        self.chunk = chunk
        self._buf = None
        self._pos = chunk

    def next(self):
        """Uniforms of shape (n_trials, width) for one step."""
        if self._pos >= self.chunk:
            self._buf = np.stack([g.random((self.chunk, self.width)) for g in self.gens], axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


def step_chain(chain: MarkovChain, Y, u):
    cum = chain.cumulative[Y]
    nxt = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(nxt, chain.n_states - 1)


@dataclass(eq=False)
class SARun:
    """Recorded output of an SA run.

    ``p_errors`` has shape (n_trials, len(ks)); ``iterates`` maps a recorded
    index k to the (n_trials, d) iterate array when iterates were stored.
    """

    schedule: StepsizeSchedule | None
    ks: np.ndarray
    p_errors: np.ndarray
    coord_sup: np.ndarray
    seed: int
    x_star: np.ndarray
    diverged: np.ndarray
    clip_count: int = 0
    iterates: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def n_trials(self):
        return self.p_errors.shape[0]

    def mean_sq(self):
        return np.mean(self.p_errors**2, axis=0)

    def stderr_sq(self):
        n = self.n_trials
        if n < 2:
            return np.zeros(self.ks.size)
        return np.std(self.p_errors**2, axis=0, ddof=1) / np.sqrt(n)

    def summary(self, z=1.96):
        m, se = self.mean_sq(), self.stderr_sq()
        return {"k": self.ks, "mean_sq_error": m, "ci_low": m - z * se, "ci_high": m + z * se}


def _record_mask(horizon, record_at):
    if record_at is None:
        return np.arange(horizon, dtype=np.int64)
    ks = np.unique(np.asarray(record_at, dtype=np.int64))
    if ks.size and (ks[0] < 0 or ks[-1] >= horizon):
        raise ValueError("record indices must lie in [0, horizon)")
    return ks


def _parallel(trials_fn, n_trials):
    """Run trials_fn over contiguous trial groups, concatenated in trial order."""
    workers = min(n_threads(), n_trials)
    ids = list(range(n_trials))
    if workers <= 1:
        return [trials_fn(ids)]
    groups = [list(g) for g in np.array_split(ids, workers) if len(g)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(trials_fn, groups))


def _merge(parts, schedule, ks, seed, x_star, store):
    p_err = np.concatenate([p["p"] for p in parts], axis=0)
    sup = np.concatenate([p["sup"] for p in parts], axis=0)
    div = np.concatenate([p["div"] for p in parts])
    clips = int(sum(p["clips"] for p in parts))
    its = {}
    if store:
        for k in parts[0]["it"]:
            its[k] = np.concatenate([p["it"][k] for p in parts], axis=0)
    return SARun(schedule, ks, p_err, sup, seed, x_star, div, clips, its)


def run_sa(problem: SAProblem, schedule: StepsizeSchedule, horizon, n_trials=100, seed=0,
           x0=None, y0=0, record_at=None, store_iterates=False, check=True):
    """Run the SA recursion for ``horizon`` recorded steps k = 0, ..., horizon-1.

    ``store_iterates`` may be True (all recorded k) or a collection of k.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    d = problem.dim
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).reshape(d)
    ks = _record_mask(horizon, record_at)
    store = set(ks.tolist()) if store_iterates is True else set(store_iterates or ())
    if check:
        try:
            consts = problem.constants()
            res = check_condition1(schedule, problem.chain, consts, horizon=horizon)
            if not res.passed:
                warnings.warn(
                    f"stepsize condition violated (first k={res.first_violation}); "
                    "the finite-sample envelope does not apply", RuntimeWarning, stacklevel=2)
        except ValueError as exc:
            warnings.warn(f"stepsize condition not checked: {exc}", RuntimeWarning, stacklevel=2)
    alphas = schedule(np.arange(horizon))
    p = problem.p_c
    xs = np.asarray(problem.x_star, dtype=float)
    width = 1 + problem.noise_width
    rec_pos = {k: i for i, k in enumerate(ks.tolist())}

    def trials(ids):
        n = len(ids)
        streams = TrialStreams(seed, ids, width)
        X = np.tile(x0, (n, 1))
        Y = np.full(n, int(y0), dtype=np.int64)
        P_err = np.full((n, ks.size), np.nan)
        sup = np.full((n, ks.size), np.nan)
        div = np.zeros(n, dtype=bool)
        clips = 0
        its = {}
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(horizon):
                if k in rec_pos:
                    j = rec_pos[k]
                    P_err[:, j] = evaluate(p, X - xs)
                    sup[:, j] = np.abs(X).max(axis=1)
                    if k in store:
                        its[k] = X.copy()
                if k == horizon - 1:
                    break
                U = streams.next()
                G = problem.F(X, Y) - X
                if problem.noise is not None:
                    W = problem.noise(X, Y, U[:, 1:])
                    pw = evaluate(p, W)
                    cap = problem.A2 * evaluate(p, X) + problem.B2
                    over = pw > cap
                    if over.any():
                        clips += int(over.sum())
                        W[over] *= (cap[over] / pw[over])[:, None]
                    G = G + W
                X = X + alphas[k] * G
                div |= ~np.isfinite(X).all(axis=1)
                Y = step_chain(problem.chain, Y, U[:, 0])
        return {"p": P_err, "sup": sup, "div": div, "clips": clips, "it": its}

    parts = _parallel(trials, n_trials)
    return _merge(parts, schedule, ks, seed, xs, bool(store))


# ---------------------------------------------------------------------------
# linear SA
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LinearSAProblem:
    """x_{k+1} = x_k + alpha_k (A(Y_k) x_k + b(Y_k)) on a finite chain."""

    A_table: np.ndarray
    b_table: np.ndarray
    chain: MarkovChain
    cert: LyapunovCertificate

    @classmethod
    def from_functions(cls, A_fn, b_fn, chain, cert):
        A_t = np.array([np.asarray(A_fn(y), dtype=float) for y in range(chain.n_states)])
        b_t = np.array([np.asarray(b_fn(y), dtype=float) for y in range(chain.n_states)])
        return cls(A_t, b_t, chain, cert)

    @property
    def dim(self):
        return self.b_table.shape[1]

    @property
    def A_bar(self):
        return np.tensordot(self.chain.stationary, self.A_table, axes=1)

    @property
    def b_bar(self):
        return self.chain.stationary @ self.b_table

    @property
    def seminorm(self):
        return Seminorm.quadratic(self.cert.P)

    def x_star(self):
        """Solve the mean equation on the complement of E."""
        C = complement_basis(self.cert.E_basis, self.dim)
        if C.shape[1] == 0:
            return np.zeros(self.dim)
        M = C.T @ self.A_bar @ C
        if np.linalg.cond(M) > 1e12:
            raise ValueError("mean matrix has no solution on the quotient space")
        return C @ linalg.solve(M, -C.T @ self.b_bar)

    def base_gram(self):
        """Gram matrix of the base norm ||x||_c^2 = x'(P + w Pi_E)x."""
        P = self.cert.P
        B = self.cert.E_basis
        C = complement_basis(B, self.dim)
        w = linalg.eigvalsh(C.T @ P @ C)[0] if C.shape[1] else 1.0
        return P + w * (B @ B.T)

    def lipschitz(self):
        """(L1, L2): sup_y ||A(y)||_c and sup_y ||b(y)||_c in the base norm."""
        G = self.base_gram()
        R = linalg.cholesky(G)  # G = R'R
        Rinv = linalg.solve_triangular(R, np.eye(self.dim))
        L1 = max(linalg.norm(R @ Ay @ Rinv, 2) for Ay in self.A_table)
        L2 = max(np.sqrt(max(by @ G @ by, 0.0)) for by in self.b_table)
        return float(L1), float(L2)

    def check_invariance(self, tol=1e-10):
        B = self.cert.E_basis
        if B.shape[1] == 0:
            return True
        for Ay in self.A_table:
            R = Ay @ B
            if linalg.norm(R - B @ (B.T @ R)) > tol * max(1.0, linalg.norm(Ay)):
                return False
        return True


def run_linear_sa(problem: LinearSAProblem, schedule: StepsizeSchedule, horizon,
                  n_trials=100, seed=0, x0=None, y0=0, record_at=None, store_iterates=False):
    """Run linear SA; p-errors use p(x) = sqrt(x'Px) from the certificate."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not problem.check_invariance():
        raise ValueError("E is not invariant under every A(y)")
    d = problem.dim
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).reshape(d)
    xs = problem.x_star()
    p = problem.seminorm
    ks = _record_mask(horizon, record_at)
    store = set(ks.tolist()) if store_iterates is True else set(store_iterates or ())
    alphas = schedule(np.arange(horizon))
    rec_pos = {k: i for i, k in enumerate(ks.tolist())}
    At, bt = problem.A_table, problem.b_table

    def trials(ids):
        n = len(ids)
        streams = TrialStreams(seed, ids, 1)
        X = np.tile(x0, (n, 1))
        Y = np.full(n, int(y0), dtype=np.int64)
        P_err = np.full((n, ks.size), np.nan)
        sup = np.full((n, ks.size), np.nan)
        div = np.zeros(n, dtype=bool)
        its = {}
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(horizon):
                if k in rec_pos:
                    j = rec_pos[k]
                    P_err[:, j] = evaluate(p, X - xs)
                    sup[:, j] = np.abs(X).max(axis=1)
                    if k in store:
                        its[k] = X.copy()
                if k == horizon - 1:
                    break
                U = streams.next()
                X = X + alphas[k] * (np.einsum("nij,nj->ni", At[Y], X) + bt[Y])
                div |= ~np.isfinite(X).all(axis=1)
                Y = step_chain(problem.chain, Y, U[:, 0])
        return {"p": P_err, "sup": sup, "div": div, "clips": 0, "it": its}

    parts = _parallel(trials, n_trials)
    return _merge(parts, schedule, ks, seed, xs, bool(store))


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------

@dataclass
class Envelope:
    """Bound sequences for k = K, ..., horizon-1."""

    ks: np.ndarray
    exact: np.ndarray
    closed_form: np.ndarray
    K: int
    binding: bool
    condition: Condition1Result | None = None

    def at(self, k):
        return self.exact[k - self.K]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("k,bound_exact,bound_closed_form\n")
            for k, a, b in zip(self.ks, self.exact, self.closed_form):
                fh.write(f"{k},{a:.17g},{b:.17g}\n")


def _envelope(a1, r, a3, schedule, ts, horizon, cond):
    """a1 prod(1 - r alpha_j) + a3 sum alpha_i w_i prod(1 - r alpha_j) and its closed form."""
    ks_all = np.arange(horizon)
    alphas = schedule(ks_all)
    w = window_sums(alphas, ts)
    K = burn_in(ts)
    n = horizon - K
    exact = np.empty(n)
    bias, var = a1, 0.0
    for idx in range(n):
        exact[idx] = bias + var
        i = K + idx
        f = 1.0 - r * alphas[i]
        bias *= f
        var = f * var + a3 * alphas[i] * w[i]
    ks = ks_all[K:]
    tk = ts[K:].astype(float)
    a, h = schedule.alpha, schedule.h
    if schedule.kind == "constant":
        t_alpha = float(ts[0])
        closed = a1 * (1 - r * a) ** (ks - K) + (a3 / r) * a * t_alpha
    elif schedule.kind == "linear":
        if a * r > 1:
            closed = (a1 * ((K + h) / (ks + h)) ** (a * r)
                      + 8 * math.e * a**2 * a3 / (r * a - 1) * tk / (ks + h))
        else:
            closed = np.full(n, np.inf)
    else:
        xi = schedule.xi
        closed = (a1 * np.exp(-r * a / (1 - xi) * ((ks + h) ** (1 - xi) - (K + h) ** (1 - xi)))
                  + 4 * a3 * a / r * tk / (ks + h) ** xi)
    return Envelope(ks, exact, closed, K, bool(cond.passed), cond)


def bound_envelope(consts: BoundConstants, schedule: StepsizeSchedule, chain: MarkovChain,
                   c1, c2, horizon):
    """Finite-sample bound on E[p(x_k - x*)^2] for general Markovian SA.

    Uses total-variation mixing times t_k = t_{alpha_k}.
    """
    ts = mixing_times(chain, schedule(np.arange(horizon)))
    cond = _condition(schedule, ts, horizon, consts.threshold())
    return _envelope(consts.phi1 * c1, consts.phi2, consts.phi3 * c2, schedule, ts, horizon, cond)


def sa_c1_c2(problem: SAProblem, consts: BoundConstants, x0):
    p = problem.p_c
    x0 = np.asarray(x0, dtype=float)
    xs = np.asarray(problem.x_star, dtype=float)
    c1 = (p(x0 - xs) + p(x0) + consts.B / consts.A) ** 2
    c2 = (consts.A * p(xs) + consts.B) ** 2
    return c1, c2


@dataclass(frozen=True)
class LinearBoundConstants:
    c1p: float
    c2p: float
    c3p: float
    L1: float
    L2: float

    def threshold(self):
        return min(1 / (4 * self.L1), self.c2p / (228 * self.L1**2))


def linear_bound_constants(problem: LinearSAProblem, x0):
    L1, L2 = problem.lipschitz()
    p = problem.seminorm
    xs = problem.x_star()
    x0 = np.asarray(x0, dtype=float)
    c1p = (p(x0) + p(x0 - xs) + L2 / L1) ** 2
    c3p = 114 * (L1 * p(xs) + L2) ** 2
    return LinearBoundConstants(c1p, problem.cert.c2_prime, c3p, L1, L2)


def _linear_mixing(problem: LinearSAProblem, deltas):
    # t_delta from the operator-norm mixing condition on both A(.) and b(.)
    chain = problem.chain
    L1, L2 = problem.lipschitz()
    uniq = np.unique(deltas)
    cache = {}
    for dl in uniq:
        if dl >= 1:
            cache[dl] = 0
            continue
        tA = operator_mixing_time(chain, problem.A_table, dl, bound=L1)
        tb = operator_mixing_time(chain, problem.b_table, dl, bound=L2)
        cache[dl] = max(tA, tb)
    return np.array([cache[dl] for dl in deltas], dtype=np.int64)


def check_linear_condition(problem, schedule, consts: LinearBoundConstants, horizon):
    ts = _linear_mixing(problem, schedule(np.arange(horizon)))
    return _condition(schedule, ts, horizon, consts.threshold())


def linear_bound_envelope(problem: LinearSAProblem, schedule, consts: LinearBoundConstants,
                          horizon, mixing="operator"):
    """Finite-sample bound on E[p(x_k - x*)^2] for linear SA.

    ``mixing='operator'`` uses the operator-norm mixing time of A(.), b(.);
    ``mixing='tv'`` uses the chain's total-variation mixing time, which is
    never smaller.
    """
    alphas = schedule(np.arange(horizon))
    if mixing == "operator":
        ts = _linear_mixing(problem, alphas)
    else:
        ts = mixing_times(problem.chain, alphas)
    cond = _condition(schedule, ts, horizon, consts.threshold())
    return _envelope(consts.c1p, consts.c2p / 2, consts.c3p, schedule, ts, horizon, cond)


# ---------------------------------------------------------------------------
# drift diagnostics
# ---------------------------------------------------------------------------

@dataclass
class DriftReport:
    k: int
    lhs: float
    rhs: float
    stderr: float
    passed: bool


def drift_check(problem: SAProblem, schedule: StepsizeSchedule, k, n_mc=1000, seed=0,
                x0=None, theta=None):
    """Monte-Carlo check of the one-step Moreau-envelope drift inequality at step k."""
    consts = problem.constants(theta)
    M = MoreauEnvelope(problem.p_c, consts.theta)
    horizon = k + 2
    ts = mixing_times(problem.chain, schedule(np.arange(horizon)))
    K = burn_in(ts)
    if k < K:
        raise ValueError(f"k={k} precedes the burn-in index K={K}")
    run = run_sa(problem, schedule, horizon, n_mc, seed, x0=x0, record_at=[k, k + 1],
                 store_iterates=True, check=False)
    xs = np.asarray(problem.x_star, dtype=float)
    mk = moreau_eval(M, run.iterates[k] - xs)
    mk1 = moreau_eval(M, run.iterates[k + 1] - xs)
    a_k = schedule(k)
    w_k = schedule.partial_sum(k - int(ts[k]), k - 1)
    c2 = (consts.A * problem.p_c(xs) + consts.B) ** 2
    extra = consts.phi3 * a_k * w_k * c2 / (2 * consts.u_cm**2)
    diff = mk1 - (1 - consts.phi2 * a_k) * mk
    se = float(np.std(diff, ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else 0.0
    lhs = float(np.mean(diff))
    return DriftReport(k, float(np.mean(mk1)), float((1 - consts.phi2 * a_k) * np.mean(mk) + extra),
                       se, lhs <= extra + 3 * se)


def iterate_window_check(run: SARun, schedule: StepsizeSchedule, p: Seminorm, A, B, k1, k2):
    """Worst slack of the iterate-drift window bounds between stored k1 <= k <= k2.

    Returns the maximum over trials and k of p(x_k - x_{k1}) minus each of the
    two bounds (non-positive when both hold). Requires alpha_{k1,k2-1} <= 1/(4A).
    """
    a = schedule.partial_sum(k1, k2 - 1)
    if a > 1 / (4 * A):
        raise ValueError("window too long for the drift bound")
    X1, X2 = run.iterates[k1], run.iterates[k2]
    b1 = 2 * a * (A * evaluate(p, X1) + B)
    b2 = 4 * a * (A * evaluate(p, X2) + B)
    worst = -np.inf
    for k in range(k1, k2 + 1):
        dk = evaluate(p, run.iterates[k] - X1)
        worst = max(worst, float(np.max(dk - b1)), float(np.max(dk - b2)))
    return worst


def random_linear_problem(d=3, n_states=3, kernel_dim=1, seed=0):
    """Linear SA on a random chain whose mean matrix is Hurwitz modulo E.

    Every A(y) vanishes on E and maps into its complement, so E is invariant;
    the certificate solves the continuous Lyapunov equation with Q = Pi_E-perp.
    """
    rng = np.random.default_rng(seed)
    E = linalg.qr(rng.standard_normal((d, d)))[0][:, :kernel_dim]
    C = complement_basis(E, d)
    r = C.shape[1]
    P = rng.dirichlet(np.ones(n_states), size=n_states)
    P /= P.sum(axis=1, keepdims=True)
    chain = MarkovChain(P)
    A_t, b_t = [], []
    for _ in range(n_states):
        S = rng.standard_normal((r, r))
        core = -rng.uniform(0.5, 1.5) * np.eye(r) + 0.3 * (S - S.T) + 0.1 * S
        A_t.append(C @ core @ C.T)
        b_t.append(rng.uniform(-1, 1, d))
    A_t, b_t = np.array(A_t), np.array(b_t)
    A_bar = np.tensordot(chain.stationary, A_t, axes=1)
    cert = solve_continuous(A_bar, C @ C.T, E)
    return LinearSAProblem(A_t, b_t, chain, cert)
