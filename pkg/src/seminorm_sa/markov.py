"""Finite Markov chains: stationary laws, total variation, exact mixing times."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.sparse.csgraph import breadth_first_order, connected_components

__all__ = [
    "MarkovChain",
    "MixingTable",
    "stationary",
    "tv_distance",
    "mixing_time",
    "mixing_table",
    "sample_path",
    "operator_mixing_time",
    "two_state_chain",
    "load_chain_csv",
]

MIXING_CAP = 10**6


def _validate_stochastic(P):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = P.shape[0]
    if P.shape != (n, n):
        raise ValueError("transition matrix must be square")
    if not np.all(np.isfinite(P)) or (P < 0).any():
        raise ValueError("transition matrix must have finite nonnegative entries")
    if np.abs(P.sum(axis=1) - 1).max() > 1e-12:
        raise ValueError("rows must sum to 1 within 1e-12")
    return P


def _period(P):
    """Period of an irreducible chain via BFS levels: gcd of level(u)+1-level(v)."""
    n = P.shape[0]
    adj = P > 0
    order, pred = breadth_first_order(adj.astype(float), 0, directed=True)
    level = np.full(n, -1)
    level[0] = 0
    for v in order[1:]:
        level[v] = level[pred[v]] + 1
    g = 0
    us, vs = np.nonzero(adj)
    for u, v in zip(us, vs):
        g = math.gcd(g, int(level[u] + 1 - level[v]))
    return abs(g)


def check_ergodic(P):
    """Raise unless P is irreducible and aperiodic."""
    n = P.shape[0]
    if n <= 1000:
        ncomp, _ = connected_components(P > 0, directed=True, connection="strong")
        if ncomp != 1:
            raise ValueError("chain is reducible")
        if _period(P) != 1:
            raise ValueError("chain is periodic")
    else:
        Pk = np.linalg.matrix_power(P, 64)
        mu = Pk.mean(axis=0)
        if np.abs(Pk - mu).max() > 1e-6:
            raise ValueError("power iteration did not converge: chain not ergodic")


def stationary(P):
    """Unique stationary distribution of an irreducible aperiodic chain."""
    P = _validate_stochastic(P)
    check_ergodic(P)
    n = P.shape[0]
    M = P.T - np.eye(n)
    M[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    mu = linalg.solve(M, rhs)
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    if np.abs(mu @ P - mu).max() > 1e-10:
        raise RuntimeError("stationary solve is inaccurate")
    return mu


def tv_distance(mu1, mu2):
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    if mu1.shape[-1] != mu2.shape[-1]:
        raise ValueError("dimension mismatch")
    return 0.5 * np.abs(mu1 - mu2).sum(axis=-1)


@dataclass(eq=False)
class MarkovChain:
    """Finite chain with lazily computed stationary law and TV profile."""

    P: np.ndarray
    _tv: list = field(default_factory=list, repr=False)
    _Pk: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.P = _validate_stochastic(self.P).copy()
        self.P.setflags(write=False)

    @property
    def n_states(self):
        return self.P.shape[0]

    @cached_property
    def stationary(self):
        return stationary(self.P)

    @cached_property
    def cumulative(self):
        c = np.cumsum(self.P, axis=1)
        c[:, -1] = 1.0
        return c

    def worst_tv(self, k):
        """max_y TV(P^k(y, .), mu), from a cached profile."""
        self._extend(k)
        return self._tv[k]

    def _extend(self, k):
        if k > MIXING_CAP:
            raise ValueError("step index beyond the mixing cap")
        mu = self.stationary
        if not self._tv:
            self._Pk = np.eye(self.n_states)
            self._tv.append(float(tv_distance(self._Pk, mu).max()))
        while len(self._tv) <= k:
            self._Pk = self._Pk @ self.P
            self._tv.append(float(tv_distance(self._Pk, mu).max()))

    def tv_profile(self, k_max):
        self._extend(k_max)
        return np.asarray(self._tv[: k_max + 1])

    def mixing_time(self, delta):
        return mixing_time(self, delta)

    @cached_property
    def ergodicity(self):
        """(C, rho) with worst TV at step k <= C rho^k above the roundoff floor.

        rho is the larger of a log-linear fit and the second largest
        eigenvalue modulus, which is the asymptotic rate.
        """
        t_hi = mixing_time(self, 1e-6)
        t_lo = mixing_time(self, 0.25)
        slem = np.sort(np.abs(np.linalg.eigvals(self.P)))[-2] if self.P.shape[0] > 1 else 0.0
        tv = self.tv_profile(max(t_hi, 1))
        ks = np.arange(t_lo, t_hi + 1)
        vals = tv[t_lo: t_hi + 1]
        pos = vals > 0
        rho = 0.0
        if pos.sum() >= 2:
            rho = math.exp(np.polyfit(ks[pos], np.log(vals[pos]), 1)[0])
        rho = float(min(max(rho, slem), 1 - 1e-12))
        if rho <= 0:
            return float(tv[0]), 0.0
        # extend until the profile hits the roundoff floor
        k_max = t_hi
        while tv[-1] > 1e-13 and k_max < MIXING_CAP:
            k_max = 2 * k_max + 1
            tv = self.tv_profile(k_max)
        keep = tv > 1e-13
        ks_all = np.arange(tv.size)
        C = float((tv[keep] / rho ** ks_all[keep]).max()) if keep.any() else float(tv[0])
        return C, rho


def mixing_time(chain: MarkovChain, delta):
    """Smallest k with max_y TV(P^k(y, .), mu) <= delta."""
    if delta >= 1:
        return 0
    if delta <= 0:
        raise ValueError("delta must be positive")
    k = 0
    while True:
        if chain.worst_tv(k) <= delta:
            return k
        k += 1
        if k > MIXING_CAP:
            raise ValueError(f"mixing time at delta={delta} exceeds {MIXING_CAP}")


@dataclass
class MixingTable:
    entries: list

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("delta,t_delta\n")
            for dl, t in self.entries:
                fh.write(f"{dl:.17g},{t}\n")

    def lookup(self, delta):
        for dl, t in self.entries:
            if dl == delta:
                return t
        raise KeyError(delta)


def mixing_table(chain: MarkovChain, deltas):
    deltas = sorted(float(x) for x in deltas)
    return MixingTable([(dl, mixing_time(chain, dl)) for dl in deltas])


def sample_path(chain: MarkovChain, y0, length, seed):
    """States Y_0 = y0, Y_1, ..., Y_{length-1}, deterministic per seed."""
    n = chain.n_states
    if not 0 <= y0 < n:
        raise ValueError("invalid start state")
    rng = np.random.default_rng(seed)
    u = rng.random(length)
    cum = chain.cumulative
    out = np.empty(length, dtype=np.int64)
    y = int(y0)
    for t in range(length):
        out[t] = y
        y = min(int(np.searchsorted(cum[y], u[t], side="right")), n - 1)
    return out


def operator_mixing_time(chain: MarkovChain, tables, delta, bound=None):
    """Smallest k with max_y ||E[X(Y_k) | Y_0 = y] - E_mu[X]||_2 <= delta * bound.

    ``tables`` holds one matrix or vector per state. ``bound`` defaults to
    max_y ||X(y)||_2, matching the normalization used for linear SA.
    """
    X = np.asarray(tables, dtype=float)
    n = chain.n_states
    shape = X.shape[1:]
    T = X.reshape(n, -1)

    def nrm(v):
        return np.linalg.norm(v.reshape(shape), 2) if len(shape) == 2 else np.linalg.norm(v)

    mean = chain.stationary @ T
    if bound is None:
        bound = max(nrm(T[y]) for y in range(n))
    Pk = np.eye(n)
    for k in range(MIXING_CAP + 1):
        dev = Pk @ T - mean
        if max(nrm(r) for r in dev) <= delta * bound:
            return k
        Pk = Pk @ chain.P
    raise ValueError("operator mixing time exceeds the cap")


def two_state_chain(a, b):
    return MarkovChain(np.array([[1 - a, a], [b, 1 - b]]))


def load_chain_csv(path):
    return MarkovChain(np.loadtxt(path, delimiter=",", ndmin=2))
