"""Seminorms on R^d: construction, evaluation, kernels, equivalence constants,
deterministic fixed-point iteration and sampled contraction checks.

Three kinds are supported.

``quadratic``
    p(x) = sqrt(x' P x) for a symmetric PSD matrix P.
``span``
    p(x) = max(x) - min(x).
``subspace_distance``
    p(x) = scale * min_{c} ||x - B c|| for a base norm tag in {l2, l1, linf}
    and a basis B of the kernel.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg, optimize

KERNEL_RTOL = 1e-10

__all__ = [
    "Seminorm",
    "EquivalenceConstants",
    "FixedPointTrace",
    "ContractionEstimate",
    "evaluate",
    "kernel_basis",
    "complement_basis",
    "distance_form",
    "equivalence_constants",
    "fixed_point_iterate",
    "affine_fixed_point",
    "verify_contraction",
    "gd_seminorm_operator",
    "write_trace_csv",
]


def _orth(B, d):
    B = np.asarray(B, dtype=float).reshape(d, -1)
    if B.shape[1] == 0:
        return np.zeros((d, 0))
    U, s, _ = linalg.svd(B, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((d, 0))
    return U[:, s > KERNEL_RTOL * s[0]]


def complement_basis(B, d=None):
    """Orthonormal basis of the orthogonal complement of span(B)."""
    B = np.asarray(B, dtype=float)
    if d is None:
        d = B.shape[0]
    B = _orth(B, d)
    if B.shape[1] == 0:
        return np.eye(d)
    U, _, _ = linalg.svd(B, full_matrices=True)
    return U[:, B.shape[1]:]


@dataclass(frozen=True, eq=False)
class Seminorm:
    """A seminorm with an explicit orthonormal kernel basis.

    Use the constructors :meth:`quadratic`, :meth:`span` and
    :meth:`subspace_distance` rather than the raw initializer.
    """

    kind: str
    dim: int
    matrix: np.ndarray | None = None
    norm_id: str = "l2"
    scale: float = 1.0
    kernel_basis: np.ndarray = field(default=None, repr=False)

    # -- constructors -----------------------------------------------------
    @classmethod
    def quadratic(cls, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        if not np.all(np.isfinite(P)):
            raise ValueError("P has non-finite entries")
        scale = max(1.0, np.abs(P).max())
        if np.abs(P - P.T).max() > 1e-10 * scale:
            raise ValueError("P is not symmetric")
        P = 0.5 * (P + P.T)
        w, V = linalg.eigh(P)
        if w.size and w[0] < -1e-10 * scale:
            raise ValueError(f"P is not PSD (min eigenvalue {w[0]:.3g})")
        wmax = w[-1] if w.size else 0.0
        ker = V[:, w <= KERNEL_RTOL * wmax] if wmax > 0 else np.eye(P.shape[0])
        return cls("quadratic", P.shape[0], P, "l2", 1.0, ker)

    @classmethod
    def span(cls, d):
        d = int(d)
        if d < 1:
            raise ValueError("dimension must be positive")
        return cls("span", d, None, "linf", 2.0, np.full((d, 1), 1.0 / np.sqrt(d)))

    @classmethod
    def subspace_distance(cls, basis, norm_id="linf", scale=1.0, dim=None):
        if norm_id not in ("l2", "l1", "linf"):
            raise ValueError(f"unknown base norm {norm_id!r}")
        if scale <= 0:
            raise ValueError("scale must be positive")
        basis = np.asarray(basis, dtype=float)
        if basis.ndim == 1:
            basis = basis[:, None]
        d = basis.shape[0] if dim is None else int(dim)
        return cls("subspace_distance", d, None, norm_id, float(scale), _orth(basis, d))

    @classmethod
    def projection(cls, E, d=None):
        """Quadratic seminorm ||(I - Pi_E) x||_2 with kernel span(E)."""
        E = np.asarray(E, dtype=float)
        if d is None:
            d = E.shape[0]
        C = complement_basis(E.reshape(d, -1), d)
        return cls.quadratic(C @ C.T)

    # -- evaluation -------------------------------------------------------
    def __call__(self, x):
        return evaluate(self, x)

    @property
    def rank(self):
        return self.dim - self.kernel_basis.shape[1]

    def kernel_projector(self):
        B = self.kernel_basis
        return B @ B.T

    # -- serialization ----------------------------------------------------
    def to_dict(self):
        doc = {
            "kind": self.kind,
            "dim": self.dim,
            "kernel_basis": self.kernel_basis.tolist(),
        }
        if self.kind == "quadratic":
            doc["matrix"] = self.matrix.tolist()
        if self.kind == "subspace_distance":
            doc["norm_id"] = self.norm_id
            doc["scale"] = self.scale
        return doc

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc):
        kind = doc["kind"]
        if kind == "quadratic":
            return cls.quadratic(doc["matrix"])
        if kind == "span":
            return cls.span(doc["dim"])
        if kind == "subspace_distance":
            basis = np.asarray(doc["kernel_basis"], dtype=float).reshape(doc["dim"], -1)
            return cls.subspace_distance(
                basis, doc.get("norm_id", "linf"), doc.get("scale", 1.0), dim=doc["dim"]
            )
        raise ValueError(f"unknown seminorm kind {kind!r}")

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# distances to a subspace under l2 / l1 / linf
# ---------------------------------------------------------------------------

def _linf_dist_1d(X, b):
    """min_c max_i |x_i - c b_i| for each row of X, exactly.

    The objective is convex piecewise linear in c; its minimum sits at a
    crossing of two of the lines +-(x_i - c b_i), so all crossings are
    enumerated.
    """
    X = np.atleast_2d(X)
    nz = np.abs(b) > 0
    if not nz.any():
        return np.abs(X).max(axis=1)
    out = np.empty(X.shape[0])
    bi, bj = b[:, None], b[None, :]
    for r, x in enumerate(X):
        xi, xj = x[:, None], x[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            c1 = (xi - xj) / (bi - bj)
            c2 = (xi + xj) / (bi + bj)
        cand = np.concatenate([c1.ravel(), c2.ravel(), x[nz] / b[nz]])
        cand = cand[np.isfinite(cand)]
        vals = np.abs(x[None, :] - cand[:, None] * b[None, :]).max(axis=1)
        out[r] = vals.min()
    return out


def _l1_dist_1d(X, b):
    """min_c sum_i |x_i - c b_i|: a weighted median problem."""
    X = np.atleast_2d(X)
    nz = np.abs(b) > 0
    out = np.empty(X.shape[0])
    w = np.abs(b[nz])
    for r, x in enumerate(X):
        if not nz.any():
            out[r] = np.abs(x).sum()
            continue
        ratios = x[nz] / b[nz]
        order = np.argsort(ratios)
        cw = np.cumsum(w[order])
        c = ratios[order][np.searchsorted(cw, 0.5 * cw[-1])]
        out[r] = np.abs(x - c * b).sum()
    return out


def _lp_dist(x, B, norm_id):
    """Distance from x to span(B) under l1 or linf, via linear programming."""
    d, m = B.shape
    if norm_id == "linf":
        # variables (c, t): minimize t s.t. -t <= x - Bc <= t
        cost = np.r_[np.zeros(m), 1.0]
        A_ub = np.block([[-B, -np.ones((d, 1))], [B, -np.ones((d, 1))]])
        b_ub = np.r_[-x, x]
    else:
        # variables (c, s): minimize sum s s.t. -s <= x - Bc <= s
        cost = np.r_[np.zeros(m), np.ones(d)]
        A_ub = np.block([[-B, -np.eye(d)], [B, -np.eye(d)]])
        b_ub = np.r_[-x, x]
    bounds = [(None, None)] * m + [(0, None)] * (A_ub.shape[1] - m)
    res = optimize.linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"distance LP failed: {res.message}")
    return max(res.fun, 0.0)


def _subspace_dist(X, B, norm_id):
    X = np.atleast_2d(X)
    if B.shape[1] == 0:
        ords = {"l2": 2, "l1": 1, "linf": np.inf}
        return np.linalg.norm(X, ord=ords[norm_id], axis=1)
    if norm_id == "l2":
        R = X - (X @ B) @ B.T
        return np.linalg.norm(R, axis=1)
    if B.shape[1] == 1:
        f = _linf_dist_1d if norm_id == "linf" else _l1_dist_1d
        return f(X, B[:, 0])
    return np.array([_lp_dist(x, B, norm_id) for x in X])


def evaluate(p: Seminorm, x):
    """Evaluate p at x. Accepts a vector or a stack of row vectors."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != p.dim:
        raise ValueError(f"dimension mismatch: got {X.shape[1]}, seminorm has {p.dim}")
    if p.kind == "quadratic":
        q = np.einsum("ij,jk,ik->i", X, p.matrix, X)
        out = np.sqrt(np.maximum(q, 0.0))
    elif p.kind == "span":
        out = X.max(axis=1) - X.min(axis=1)
    else:
        out = p.scale * _subspace_dist(X, p.kernel_basis, p.norm_id)
    return float(out[0]) if single else out


def kernel_basis(p: Seminorm):
    """Orthonormal basis (d x m) of ker(p)."""
    return p.kernel_basis.copy()


def _quadratic_base_gram(p: Seminorm):
    # designated base norm for quadratic kind: ||x||_c^2 = x'(P + w Pi_E)x,
    # which is Euclidean when P is an orthogonal projection
    B = p.kernel_basis
    C = complement_basis(B, p.dim)
    w = linalg.eigvalsh(C.T @ p.matrix @ C)[0] if C.shape[1] else 1.0
    return p.matrix + w * (B @ B.T)


def distance_form(p: Seminorm, x):
    """min over y in ker(p) of ||x - y|| under the designated base norm.

    The base norm is 2*linf for ``span``, the seminorm's own scaled base norm
    for ``subspace_distance``, and the P-weighted Euclidean norm for
    ``quadratic`` (plain Euclidean whenever P is an orthogonal projection).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.dim:
        raise ValueError("dimension mismatch")
    B = p.kernel_basis
    if p.kind == "quadratic":
        G = _quadratic_base_gram(p)
        X = np.atleast_2d(x)
        if B.shape[1]:
            c = linalg.solve(B.T @ G @ B, B.T @ G @ X.T, assume_a="pos")
            R = X - (B @ c).T
        else:
            R = X
        out = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", R, G, R), 0.0))
    elif p.kind == "span":
        # 2 * min_c ||x - c e||_inf, solved as an exact 1-D piecewise-linear problem
        out = 2.0 * _linf_dist_1d(np.atleast_2d(x), np.ones(p.dim))
    else:
        out = p.scale * _subspace_dist(np.atleast_2d(x), B, p.norm_id)
    return float(out[0]) if x.ndim == 1 else out


@dataclass(frozen=True)
class EquivalenceConstants:
    c_lower: float
    c_upper: float
    exact: bool = False

    def __post_init__(self):
        if not (0 < self.c_lower <= self.c_upper * (1 + 1e-12)):
            raise ValueError("need 0 < c_lower <= c_upper")


def _same_kernel(p, q, tol=1e-8):
    Bp, Bq = p.kernel_basis, q.kernel_basis
    if Bp.shape != Bq.shape:
        return False
    return np.abs(Bp @ Bp.T - Bq @ Bq.T).max() <= tol


def equivalence_constants(p: Seminorm, q: Seminorm, n_samples=2000, seed=0):
    """Constants with c_lower*q(x) <= p(x) <= c_upper*q(x).

    Exact (restricted generalized eigenvalues) for two quadratic seminorms;
    otherwise the extreme ratios over random directions in the complement of
    the shared kernel, polished by local optimization. The sampled constants
    hold on every sampled direction by construction.
    """
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    if not _same_kernel(p, q):
        raise ValueError("seminorms have different kernels")
    C = complement_basis(p.kernel_basis, p.dim)
    r = C.shape[1]
    if r == 0:
        return EquivalenceConstants(1.0, 1.0, exact=True)
    if p.kind == "quadratic" and q.kind == "quadratic":
        w = linalg.eigh(C.T @ p.matrix @ C, C.T @ q.matrix @ C, eigvals_only=True)
        w = np.clip(w, 0.0, None)
        return EquivalenceConstants(float(np.sqrt(w[0])), float(np.sqrt(w[-1])), exact=True)

    rng = np.random.default_rng(seed)
    U = rng.standard_normal((max(n_samples, 1000), r))
    X = U @ C.T
    ratios = evaluate(p, X) / evaluate(q, X)
    lo, hi = ratios.min(), ratios.max()

    def ratio(u):
        x = C @ u
        qx = q(x)
        return p(x) / qx if qx > 0 else np.nan

    for sign, start in ((1.0, U[np.argmin(ratios)]), (-1.0, U[np.argmax(ratios)])):
        res = optimize.minimize(lambda u: sign * ratio(u), start, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        val = ratio(res.x)
        if np.isfinite(val):
            lo, hi = min(lo, val), max(hi, val)
    return EquivalenceConstants(float(lo), float(hi), exact=False)


# ---------------------------------------------------------------------------
# fixed-point iteration and contraction checks
# ---------------------------------------------------------------------------

@dataclass
class FixedPointTrace:
    iterates: np.ndarray
    errors: np.ndarray
    x_star: np.ndarray
    gamma: float

    def to_csv(self, path):
        write_trace_csv(path, self.errors)


def affine_fixed_point(A, b, p: Seminorm):
    """A point x* with p(A x* + b - x*) = 0, found on the complement of ker(p).

    Requires ker(p) to be A-invariant; then the quotient map I - A on the
    complement must be invertible.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    C = complement_basis(p.kernel_basis, p.dim)
    if C.shape[1] == 0:
        return np.zeros(p.dim)
    M = C.T @ (A - np.eye(p.dim)) @ C
    u = linalg.solve(M, -C.T @ b)
    return C @ u


def fixed_point_iterate(T: Callable, p: Seminorm, x0, k_max, x_star=None,
                        affine=None, blowup=1e3):
    """Iterate x_{k+1} = T(x_k) and record p(x_k - x*).

    ``x_star`` may be given directly, or ``affine=(A, b)`` requests the
    quotient-space solve. The returned ``gamma`` is the largest one-step
    error ratio observed.
    """
    x = np.asarray(x0, dtype=float).copy()
    if x_star is None:
        if affine is None:
            raise ValueError("supply x_star or affine=(A, b)")
        x_star = affine_fixed_point(*affine, p)
    x_star = np.asarray(x_star, dtype=float)
    xs = [x.copy()]
    errs = [p(x - x_star)]
    e0 = errs[0]
    for _ in range(int(k_max)):
        x = np.asarray(T(x), dtype=float)
        e = p(x - x_star)
        if e0 > 0 and e > blowup * e0:
            raise RuntimeError(
                f"p-error grew from {e0:.3g} to {e:.3g}: T is not a p-contraction"
            )
        xs.append(x.copy())
        errs.append(e)
    errs = np.asarray(errs)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = errs[1:] / errs[:-1]
    r = r[np.isfinite(r)]
    gamma = float(r.max()) if r.size else 0.0
    return FixedPointTrace(np.asarray(xs), errs, x_star, gamma)


@dataclass
class ContractionEstimate:
    gamma: float
    witness: tuple | None = None

    @property
    def is_contraction(self):
        return self.gamma < 1.0


def verify_contraction(T: Callable, p: Seminorm, n_samples=10_000, seed=0,
                       scale=1.0, refine=True, sampler=None):
    """Largest sampled ratio p(T(x)-T(y)) / p(x-y).

    Pairs are Gaussian with standard deviation ``scale`` unless a custom
    ``sampler(rng, n) -> (X, Y)`` is given. With ``refine`` the worst pairs
    are improved by a short random local search, which tightens the estimate
    for operators whose worst case is not hit by plain sampling.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    if sampler is None:
        X = scale * rng.standard_normal((n_samples, p.dim))
        Y = scale * rng.standard_normal((n_samples, p.dim))
    else:
        X, Y = sampler(rng, n_samples)

    def ratio(x, y):
        den = p(x - y)
        if den <= 1e-10:
            return -np.inf
        return p(np.asarray(T(x)) - np.asarray(T(y))) / den

    ratios = np.array([ratio(x, y) for x, y in zip(X, Y)])
    best = int(np.argmax(ratios))
    g, bx, by = ratios[best], X[best], Y[best]
    if refine:
        for idx in np.argsort(ratios)[-5:]:
            x, y, r = X[idx].copy(), Y[idx].copy(), ratios[idx]
            step = 0.1 * scale
            for _ in range(200):
                xn = x + step * rng.standard_normal(p.dim)
                yn = y + step * rng.standard_normal(p.dim)
                rn = ratio(xn, yn)
                if rn > r:
                    x, y, r = xn, yn, rn
                else:
                    step *= 0.98
            if r > g:
                g, bx, by = r, x, y
    witness = (bx, by) if g >= 1.0 else None
    return ContractionEstimate(float(g), witness)


def gd_seminorm_operator(grad: Callable, alpha, mu, L, condition="strong"):
    """Gradient step T(x) = x - alpha*grad(x) with its predicted factor.

    ``condition='strong'`` gives sqrt(1 - 2 alpha mu + alpha^2 L^2) and needs
    alpha in (0, 2 mu / L^2); ``condition='quadratic_growth'`` gives
    sqrt(1 - alpha mu + alpha^2 L^2) and needs that radicand in [0, 1).
    The operator carries the factor as ``T.gamma``.
    """
    if not (mu > 0 and L > 0):
        raise ValueError("mu and L must be positive")
    if condition == "strong":
        if not (0 < alpha < 2 * mu / L**2):
            raise ValueError(f"alpha={alpha} outside (0, 2 mu / L^2)")
        rad = 1 - 2 * alpha * mu + alpha**2 * L**2
    elif condition == "quadratic_growth":
        rad = 1 - alpha * mu + alpha**2 * L**2
        if not (alpha > 0 and 0 <= rad < 1):
            raise ValueError(f"alpha={alpha} gives 1 - a mu + a^2 L^2 = {rad} outside [0, 1)")
    else:
        raise ValueError(f"unknown condition {condition!r}")

    def T(x):
        x = np.asarray(x, dtype=float)
        return x - alpha * np.asarray(grad(x), dtype=float)

    T.gamma = float(np.sqrt(max(rad, 0.0)))
    T.alpha = alpha
    return T


def write_trace_csv(path, errors):
    """Write a (k, p_error) trace with 17 significant digits."""
    errors = np.asarray(errors, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write("k,p_error\n")
        for k, e in enumerate(errors):
            fh.write(f"{k},{e:.17g}\n")
