"""Lyapunov equations whose solutions are PSD with a prescribed kernel E.

Discrete:    A' P A - P + Q = 0
Continuous:  A' P + P A + Q = 0

Both P and Q vanish on E, so the equation is projected onto the orthogonal
complement of E and solved there by vectorization, then zero-padded back.
A solution with kernel exactly E exists iff E is A-invariant and contains
the unstable subspace of A.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .seminorm import KERNEL_RTOL, Seminorm, complement_basis
from .spectral import contains, decompose, expm, is_invariant, jordan_seminorm, unstable_subspace

__all__ = [
    "LyapunovCertificate",
    "LyapunovError",
    "StabilityReport",
    "solve_discrete",
    "solve_continuous",
    "stability_verdict",
    "contraction_factor_from_certificate",
    "residual_tolerance",
    "random_psd_with_kernel",
    "random_instance",
]


class LyapunovError(ValueError):
    """Raised when no PSD solution with the requested kernel exists."""


def residual_tolerance(Q):
    return 1e-8 * (1.0 + linalg.norm(Q, "fro"))


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    mode: str
    A: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    E_basis: np.ndarray
    residual: float
    c2_prime: float
    pencil_cond: float
    oracle_gap: float = field(default=np.nan)

    @property
    def seminorm(self):
        return Seminorm.quadratic(self.P)

    def to_dict(self):
        return {
            "mode": self.mode,
            "A": self.A.tolist(),
            "P": self.P.tolist(),
            "Q": self.Q.tolist(),
            "E_basis": self.E_basis.tolist(),
            "residual": self.residual,
            "c2_prime": self.c2_prime,
            "pencil_cond": self.pencil_cond,
            "oracle_gap": None if np.isnan(self.oracle_gap) else self.oracle_gap,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _kernel_of(Q):
    Q = np.asarray(Q, dtype=float)
    w, V = linalg.eigh(0.5 * (Q + Q.T))
    wmax = max(w[-1], 0.0)
    if wmax == 0:
        return np.eye(Q.shape[0])
    return V[:, w <= KERNEL_RTOL * wmax]


def _full_residual(A, P, Q, mode):
    if mode == "discrete":
        R = A.T @ P @ A - P + Q
    else:
        R = A.T @ P + P @ A + Q
    return float(linalg.norm(R, "fro"))


def _reduced_solve(At, Qt, mode):
    r = At.shape[0]
    I = np.eye(r)
    # column-major vec: vec(X' P Y) = (Y' kron X') vec(P)
    if mode == "discrete":
        K = np.eye(r * r) - np.kron(At.T, At.T)
        rhs = Qt.ravel(order="F")
    else:
        K = np.kron(I, At.T) + np.kron(At.T, I)
        rhs = -Qt.ravel(order="F")
    cond = np.linalg.cond(K) if r else 1.0
    if not np.isfinite(cond) or cond > 1e12:
        raise LyapunovError("the projected Lyapunov operator is singular")
    Pt = linalg.solve(K, rhs).reshape(r, r, order="F")
    return 0.5 * (Pt + Pt.T)


def _solve(A, Q, E, mode, check, oracle):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d) or Q.shape != (d, d):
        raise ValueError("A and Q must be square of equal size")
    if np.abs(Q - Q.T).max() > 1e-10 * max(1.0, np.abs(Q).max()):
        raise ValueError("Q must be symmetric")
    Q = 0.5 * (Q + Q.T)
    Eb = _kernel_of(Q) if E is None else np.asarray(E, dtype=float).reshape(d, -1)
    Eb = linalg.orth(Eb) if Eb.shape[1] else np.zeros((d, 0))
    if check:
        split = unstable_subspace(decompose(A), mode)
        if not (is_invariant(A, Eb) and contains(Eb, split.unstable_basis)):
            kind = "|lambda| >= 1" if mode == "discrete" else "Re(lambda) >= 0"
            raise LyapunovError(
                "no PSD solution with the requested kernel: E must be invariant under A "
                f"and contain every generalized eigenvector with {kind}"
            )
    C = complement_basis(Eb, d)
    At = C.T @ A @ C
    Qt = C.T @ Q @ C
    Pt = _reduced_solve(At, Qt, mode)
    P = C @ Pt @ C.T
    P = 0.5 * (P + P.T)

    gap = np.nan
    if oracle and C.shape[1]:
        if mode == "discrete":
            Po = linalg.solve_discrete_lyapunov(At.T, Qt)
        else:
            Po = linalg.solve_continuous_lyapunov(At.T, -Qt)
        gap = float(linalg.norm(Po - Pt) / max(linalg.norm(Pt), 1e-300))

    if C.shape[1]:
        wq = linalg.eigvalsh(Qt)
        wp = linalg.eigvalsh(Pt)
        if wp[0] > 0 and wq[0] > 0:
            pencil = linalg.eigh(Qt, Pt, eigvals_only=True)
            c2 = float(pencil[0])
            pencil_cond = float(pencil[-1] / pencil[0])
        else:
            c2, pencil_cond = float("nan"), float("inf")
    else:
        c2, pencil_cond = 1.0, 1.0
    res = _full_residual(A, P, Q, mode)
    return LyapunovCertificate(mode, A, P, Q, Eb, res, c2, pencil_cond, gap)


def solve_discrete(A, Q, E=None, check=True, oracle=True):
    """Solve A'PA - P + Q = 0 for P PSD with kernel E (default: ker Q)."""
    return _solve(A, Q, E, "discrete", check, oracle)


def solve_continuous(A, Q, E=None, check=True, oracle=True):
    """Solve A'P + PA + Q = 0 for P PSD with kernel E (default: ker Q)."""
    return _solve(A, Q, E, "continuous", check, oracle)


def certificate_valid(cert: LyapunovCertificate, tol=None):
    """Residual small, P PSD, and ker P = span(E_basis)."""
    tol = residual_tolerance(cert.Q) if tol is None else tol
    if not np.isfinite(cert.residual) or cert.residual > tol:
        return False
    d = cert.P.shape[0]
    C = complement_basis(cert.E_basis, d)
    Pt = C.T @ cert.P @ C
    if C.shape[1] == 0:
        return True
    w = linalg.eigvalsh(Pt)
    return bool(w[0] > KERNEL_RTOL * max(w[-1], 1e-300))


def contraction_factor_from_certificate(cert: LyapunovCertificate):
    """sqrt(1 - c2') for a discrete certificate, c2' = min eig of (Q, P) on E-perp."""
    if cert.mode != "discrete":
        raise ValueError("contraction factor is defined for discrete certificates only")
    if not np.isfinite(cert.c2_prime):
        raise ValueError("certificate has no positive definite restriction")
    return float(np.sqrt(max(0.0, 1.0 - cert.c2_prime)))


def random_psd_with_kernel(E, rng, d=None, cond=10.0):
    """Random symmetric PSD matrix whose kernel is exactly span(E)."""
    E = np.asarray(E, dtype=float)
    d = E.shape[0] if d is None else d
    C = complement_basis(E.reshape(d, -1), d)
    r = C.shape[1]
    V = linalg.qr(rng.standard_normal((r, r)))[0] if r else np.zeros((0, 0))
    w = np.exp(rng.uniform(0, np.log(cond), r))
    M = C @ V @ np.diag(w) @ V.T @ C.T
    return 0.5 * (M + M.T)


# ---------------------------------------------------------------------------
# five-statement verdict
# ---------------------------------------------------------------------------

@dataclass
class StabilityReport:
    mode: str
    statements: dict
    details: dict

    @property
    def unanimous(self):
        return len(set(self.statements.values())) == 1

    @property
    def verdict(self):
        return all(self.statements.values())


def _decays(A_step, W, Eb, C, k_max=5000, target=0.5):
    """Geometric decay of x -> ||W x|| along x_{k+1} = A_step x_k.

    Needs the kernel span(Eb) preserved by every power and some power whose
    induced quotient gain drops below ``target``. Returns (decays, k, gain).
    """
    WC = W @ C
    if C.shape[1] == 0:
        return True, 0, 0.0
    inv = linalg.pinv(WC)
    X, Y = C.copy(), Eb.copy()
    normW = linalg.norm(W, 2)
    gain = np.inf
    for k in range(1, k_max + 1):
        X = A_step @ X
        Y = A_step @ Y
        if Y.shape[1]:
            leak = linalg.norm(W @ Y, 2)
            if leak > 1e-8 * normW * max(1.0, linalg.norm(Y, 2)):
                return False, k, np.inf
        gain = linalg.norm(W @ X @ inv, 2)
        if gain <= target:
            return True, k, gain
        if not np.isfinite(gain) or gain > 1e12:
            return False, k, gain
    return False, k_max, gain


def stability_verdict(A, E, mode="discrete", seed=0, n_random_q=3):
    """Evaluate each of the five equivalent stability statements separately.

    (1) spectral: E is A-invariant and contains the unstable subspace.
    (2) a specific seminorm with kernel E decays geometrically (the
        Jordan-type construction when available, else the projection).
    (3) geometric decay for several different seminorms with kernel E.
    (4) the Lyapunov equation has a solution pair with Q = projection on E-perp.
    (5) for several random Q with kernel E the solution is PSD with kernel E.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    E = np.asarray(E, dtype=float).reshape(d, -1)
    Eb = linalg.orth(E) if E.shape[1] else np.zeros((d, 0))
    C = complement_basis(Eb, d)
    rng = np.random.default_rng(seed)
    statements, details = {}, {}

    # (1)
    try:
        split = unstable_subspace(decompose(A), mode)
        s1 = is_invariant(A, Eb) and contains(Eb, split.unstable_basis)
    except ValueError as exc:
        s1, details[1] = False, str(exc)
    statements[1] = bool(s1)

    A_step = A if mode == "discrete" else expm(A)

    # (2)
    W2 = None
    try:
        js = jordan_seminorm(decompose(A_step), Eb, n_samples=256, seed=seed)
        W2 = _sqrt_factor(js.seminorm.matrix)
        details["2_route"] = "jordan"
    except ValueError:
        details["2_route"] = "projection"
    if W2 is None:
        W2 = C.T.copy()
    ok2, k2, g2 = _decays(A_step, W2, Eb, C)
    statements[2] = bool(ok2)
    details[2] = (k2, g2)

    # (3)
    ok3 = True
    for W in (C.T, _sqrt_factor(random_psd_with_kernel(Eb, rng, d))):
        ok, k3, g3 = _decays(A_step, W, Eb, C)
        ok3 &= ok
    statements[3] = bool(ok3)

    solve = solve_discrete if mode == "discrete" else solve_continuous

    # (4)
    try:
        cert = solve(A, C @ C.T, Eb, check=False, oracle=False)
        statements[4] = certificate_valid(cert)
    except (LyapunovError, linalg.LinAlgError):
        statements[4] = False

    # (5)
    ok5 = True
    for _ in range(n_random_q):
        Q = random_psd_with_kernel(Eb, rng, d)
        try:
            cert = solve(A, Q, Eb, check=False, oracle=False)
            ok5 &= certificate_valid(cert)
        except (LyapunovError, linalg.LinAlgError):
            ok5 = False
        if not ok5:
            break
    statements[5] = bool(ok5)
    return StabilityReport(mode, statements, details)


def _sqrt_factor(M):
    """W with W'W = M, rows spanning the range of M."""
    w, V = linalg.eigh(M)
    keep = w > KERNEL_RTOL * max(w[-1], 1e-300)
    return (V[:, keep] * np.sqrt(w[keep])).T


def random_instance(rng, d=None, mode="discrete", extra_kernel=True):
    """Random (A, E) with spectrum on both sides of the stability boundary.

    A = V blockdiag(...) V^-1 with 1x1 and rotation 2x2 blocks. E spans the
    unstable blocks plus, when ``extra_kernel``, possibly one stable block.
    """
    d = int(rng.integers(2, 11)) if d is None else d
    blocks, sizes = [], []
    while sum(sizes) < d:
        two = d - sum(sizes) >= 2 and rng.random() < 0.3
        blocks.append(two)
        sizes.append(2 if two else 1)
    n_blocks = len(blocks)
    n_unst = int(rng.integers(1, n_blocks)) if n_blocks > 1 else 0
    unstable = np.zeros(n_blocks, dtype=bool)
    unstable[rng.choice(n_blocks, n_unst, replace=False)] = True
    if n_blocks > 1 and unstable.all():
        unstable[0] = False
    J = np.zeros((d, d))
    pos = 0
    for two, unst in zip(blocks, unstable):
        if mode == "discrete":
            mag = rng.uniform(1.05, 2.0) if unst else rng.uniform(0.0, 0.95)
            if two:
                th = rng.uniform(0.2, 2.9)
                J[pos:pos + 2, pos:pos + 2] = mag * np.array([[np.cos(th), -np.sin(th)],
                                                            [np.sin(th), np.cos(th)]])
            else:
                J[pos, pos] = mag * rng.choice([-1.0, 1.0])
        else:
            re = rng.uniform(0.05, 1.0) if unst else -rng.uniform(0.05, 2.0)
            if two:
                im = rng.uniform(0.1, 2.0)
                J[pos:pos + 2, pos:pos + 2] = np.array([[re, -im], [im, re]])
            else:
                J[pos, pos] = re
        pos += 2 if two else 1
    V = linalg.qr(rng.standard_normal((d, d)))[0] @ (np.eye(d) + 0.3 * np.triu(
        rng.standard_normal((d, d)), 1))
    A = V @ J @ linalg.inv(V)
    keep = unstable.copy()
    if extra_kernel and (~unstable).sum() > 1 and rng.random() < 0.5:
        keep[rng.choice(np.flatnonzero(~unstable))] = True
    cols, pos = [], 0
    for s, k in zip(sizes, keep):
        if k:
            cols.extend(range(pos, pos + s))
        pos += s
    E = V[:, cols] if cols else np.zeros((d, 0))
    return A, E
