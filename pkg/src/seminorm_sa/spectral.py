"""Spectral structure of real square matrices.

Eigenvalues are classified as unstable when |lambda| >= 1 (discrete time) or
Re(lambda) >= 0 (continuous time). Invariant subspaces come from ordered
Schur forms. ``jordan_seminorm`` builds a seminorm under which a linear map
contracts, using a scaled Schur form of the stable block in place of a
literal Jordan basis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .seminorm import Seminorm, complement_basis

__all__ = [
    "LinearSystem",
    "InvariantSplit",
    "JordanSeminorm",
    "decompose",
    "unstable_subspace",
    "jordan_seminorm",
    "expm",
    "is_invariant",
    "contains",
    "BOUNDARY_TOL",
]

BOUNDARY_TOL = 1e-8

expm = linalg.expm  # scaling and squaring, Pade order 13


@dataclass(frozen=True, eq=False)
class LinearSystem:
    A: np.ndarray
    U: np.ndarray
    S: np.ndarray
    eigenvalues: np.ndarray

    @property
    def dim(self):
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class InvariantSplit:
    mode: str
    stable_basis: np.ndarray
    unstable_basis: np.ndarray
    unstable_eigenvalues: np.ndarray

    def to_dict(self):
        return {
            "mode": self.mode,
            "stable_basis": self.stable_basis.tolist(),
            "unstable_basis": self.unstable_basis.tolist(),
        }


def decompose(A):
    """Real Schur factorization A = U S U' with eigenvalues."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("A has non-finite entries")
    S, U = linalg.schur(A, output="real")
    return LinearSystem(A, U, S, linalg.eigvals(S))


def _margin(lam, mode):
    """Signed distance to the stability boundary (>= 0 means unstable)."""
    lam = np.asarray(lam)
    return np.abs(lam) - 1.0 if mode == "discrete" else lam.real


def _classify(sys: LinearSystem, mode):
    if mode not in ("discrete", "continuous"):
        raise ValueError("mode must be 'discrete' or 'continuous'")
    m = _margin(sys.eigenvalues, mode)
    exact = 64 * np.finfo(float).eps * max(1.0, linalg.norm(sys.A, 2))
    bad = (np.abs(m) > exact) & (np.abs(m) < BOUNDARY_TOL)
    if bad.any():
        lam = sys.eigenvalues[np.argmax(bad)]
        raise ValueError(
            f"eigenvalue {lam:.12g} lies within {BOUNDARY_TOL:g} of the stability "
            f"boundary ({mode} mode); classification is ambiguous"
        )
    return m >= -exact


def _sorted_basis(sys, mode, unstable_first):
    exact = 64 * np.finfo(float).eps * max(1.0, linalg.norm(sys.A, 2))

    def is_unstable(re, im=None):
        lam = re if im is None else re + 1j * im
        return _margin(lam, mode) >= -exact

    if unstable_first:
        sort = is_unstable
    else:
        def sort(re, im=None):
            return not is_unstable(re, im)
    _, Z, k = linalg.schur(sys.A, output="real", sort=sort)
    return Z, k


def unstable_subspace(sys: LinearSystem, mode="discrete"):
    """Split R^d into the stable and unstable invariant subspaces of A."""
    flags = _classify(sys, mode)
    n_unst = int(flags.sum())
    d = sys.dim
    Z1, k1 = _sorted_basis(sys, mode, unstable_first=True)
    Z2, k2 = _sorted_basis(sys, mode, unstable_first=False)
    if k1 != n_unst or k2 != d - n_unst:
        raise ValueError("Schur reordering disagrees with eigenvalue classification")
    return InvariantSplit(mode, Z2[:, :k2], Z1[:, :k1], sys.eigenvalues[flags])


def _proj_out(B, X):
    """(I - BB') X for orthonormal B."""
    if B.shape[1] == 0:
        return X
    return X - B @ (B.T @ X)


def is_invariant(A, E, tol=1e-8):
    """Whether span(E) is mapped into itself by A."""
    A = np.asarray(A, dtype=float)
    E = np.asarray(E, dtype=float).reshape(A.shape[0], -1)
    if E.shape[1] == 0:
        return True
    B = linalg.orth(E)
    R = _proj_out(B, A @ B)
    return linalg.norm(R, 2) <= tol * max(1.0, linalg.norm(A, 2))


def contains(E, F, tol=1e-8):
    """Whether span(F) is a subspace of span(E)."""
    F = np.asarray(F, dtype=float)
    if F.size == 0 or F.shape[1] == 0:
        return True
    E = np.asarray(E, dtype=float).reshape(F.shape[0], -1)
    if E.shape[1] == 0:
        return False
    B = linalg.orth(E)
    Fo = linalg.orth(F)
    return linalg.norm(_proj_out(B, Fo), 2) <= tol


@dataclass(frozen=True, eq=False)
class JordanSeminorm:
    seminorm: Seminorm
    gamma: float
    delta: float
    rho: float
    measured: float
    scaling: float


def jordan_seminorm(sys: LinearSystem, E, delta=None, n_samples=10_000, seed=0):
    """Seminorm with kernel span(E) under which x -> Ax contracts by gamma.

    The stable block of a complex Schur form A = Z T Z^H (unstable
    eigenvalues first) is T22 = D + N with N strictly upper triangular.
    Conjugating by diag(t^i) scales N_ij by t^(j-i); t is shrunk until the
    scaled nilpotent part has 2-norm at most delta = (1 - rho)/2. Then
    p(x) = ||D_t^-1 Z2^H x||_2 contracts by gamma = rho + delta on the quotient
    by the unstable subspace, and the seminorm is finally lifted to the
    larger kernel span(E) by minimizing over that subspace.
    """
    A = sys.A
    d = sys.dim
    E = np.asarray(E, dtype=float).reshape(d, -1)
    Eb = linalg.orth(E) if E.shape[1] else np.zeros((d, 0))
    if not is_invariant(A, Eb):
        raise ValueError("E is not invariant under A")
    split = unstable_subspace(sys, "discrete")
    if not contains(Eb, split.unstable_basis):
        raise ValueError("E does not contain the unstable subspace of A")

    k_unst = split.unstable_basis.shape[1]
    exact = 64 * np.finfo(float).eps * max(1.0, linalg.norm(A, 2))
    T, Z, _ = linalg.schur(A.astype(complex), output="complex",
                           sort=lambda lam: abs(lam) - 1.0 >= -exact)
    T22 = T[k_unst:, k_unst:]
    Z2 = Z[:, k_unst:]
    r = d - k_unst
    stable_eigs = np.diag(T22)
    rho = float(np.abs(stable_eigs).max()) if r else 0.0
    if delta is None:
        delta = (1.0 - rho) / 2.0
    if not 0 < delta:
        raise ValueError("delta must be positive")
    gamma = rho + delta

    N = np.triu(T22, 1)
    idx = np.arange(r)
    powers = idx[None, :] - idx[:, None]
    t = 1.0
    for _ in range(2000):
        Nt = N * t ** powers.clip(min=0)
        if linalg.norm(Nt, 2) <= delta:
            break
        t *= 0.5
    else:
        raise RuntimeError("failed to scale the nilpotent part")

    # x -> W x with W = D_t^-1 Z2^H ; p(x)^2 = x^H W^H W x
    Dinv = t ** (-idx.astype(float))
    W = Dinv[:, None] * Z2.conj().T
    M = np.real(W.conj().T @ W)
    M = 0.5 * (M + M.T)
    if Eb.shape[1]:
        # lift to kernel span(E): min over e in E of (x - e)' M (x - e)
        MB = M @ Eb
        M = M - MB @ linalg.pinv(Eb.T @ MB) @ MB.T
        M = 0.5 * (M + M.T)
        C = complement_basis(Eb, d)
        M = C @ (C.T @ M @ C) @ C.T
    p = Seminorm.quadratic(M)

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_samples, d))
    px = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, M, X), 0))
    AX = X @ A.T
    pax = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", AX, M, AX), 0))
    ok = px > 1e-12 * px.max() if px.size and px.max() > 0 else np.zeros(0, bool)
    measured = float((pax[ok] / px[ok]).max()) if ok.any() else 0.0
    return JordanSeminorm(p, gamma, delta, rho, measured, t)
