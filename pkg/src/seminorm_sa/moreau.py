"""Generalized Moreau envelope of a squared seminorm.

    M_E(x) = min_y  1/2 p(y)^2 + 1/(2 theta) ||x - y||_2^2

with the Euclidean smoothing norm (so L = 1). For a quadratic seminorm the
minimizer is available in closed form. For ``span`` and
``subspace_distance`` seminorms p(y) = s * min_c N(y - Bc), and the problem
splits into an exact one-dimensional inner envelope of (s N)^2 / 2 and a
smooth convex outer minimization over the kernel coordinates c.

The module also carries a small exact min-plus convolution on integer grids,
used to check the algebra of infimal convolutions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .seminorm import Seminorm, complement_basis, evaluate

__all__ = [
    "MoreauEnvelope",
    "moreau_eval",
    "moreau_grad",
    "moreau_numeric",
    "norm_equivalence",
    "select_theta",
    "inf_convolve",
    "indicator_grid",
]


def norm_equivalence(p: Seminorm):
    """(l_cs, u_cs) with l_cs ||x||_2 <= ||x||_c <= u_cs ||x||_2.

    ||.||_c is the designated base norm of ``p`` (see ``distance_form``).
    """
    d = p.dim
    if p.kind == "quadratic":
        C = complement_basis(p.kernel_basis, d)
        if C.shape[1] == 0:
            raise ValueError("seminorm is identically zero")
        w = linalg.eigvalsh(C.T @ p.matrix @ C)
        return float(np.sqrt(w[0])), float(np.sqrt(w[-1]))
    s = p.scale
    if p.norm_id == "l2":
        return s, s
    if p.norm_id == "linf":
        return s / np.sqrt(d), s
    return s, s * np.sqrt(d)


@dataclass(frozen=True, eq=False)
class MoreauEnvelope:
    """Moreau envelope of p^2/2 with Euclidean smoothing of weight 1/theta."""

    p_c: Seminorm
    theta: float
    s_norm: str = "l2"
    L: float = 1.0

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.s_norm != "l2":
            raise ValueError("only the Euclidean smoothing norm is implemented")

    @property
    def l_cs(self):
        return norm_equivalence(self.p_c)[0]

    @property
    def u_cs(self):
        return norm_equivalence(self.p_c)[1]

    @property
    def l_cm(self):
        return float(np.sqrt(1 + self.theta * self.l_cs**2))

    @property
    def u_cm(self):
        return float(np.sqrt(1 + self.theta * self.u_cs**2))

    def p_s(self, x):
        """Euclidean distance to the kernel: the seminorm p_{s,E}."""
        B = self.p_c.kernel_basis
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - (x @ B) @ B.T, axis=-1)

    def __call__(self, x):
        return moreau_eval(self, x)


def select_theta(l_cs, u_cs, gamma, margin=0.1, max_i=80):
    """First theta = 2^-i (i = 0, 1, ...) with gamma^2 phi1 <= 1 - margin (1 - gamma^2).

    phi1 = (1 + theta u^2) / (1 + theta l^2) decreases to 1 as theta -> 0, so
    a feasible grid point always exists for gamma < 1.
    """
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    target = 1 - margin * (1 - gamma**2)
    for i in range(max_i + 1):
        theta = 2.0**-i
        phi1 = (1 + theta * u_cs**2) / (1 + theta * l_cs**2)
        if gamma**2 * phi1 <= target:
            return theta
    raise ValueError("no admissible theta on the grid")


# ---------------------------------------------------------------------------
# inner envelopes of (s N)^2 / 2, exact
# ---------------------------------------------------------------------------

def _inner_linf(v, s, theta):
    # minimize s^2 t^2 / 2 + sum (|v_i| - t)_+^2 / (2 theta) over t >= 0
    a = np.sort(np.abs(v))[::-1]
    cs = np.cumsum(a)
    k = s * s * theta
    t = 0.0
    for m in range(1, a.size + 1):
        t = cs[m - 1] / (k + m)
        nxt = a[m] if m < a.size else 0.0
        if nxt <= t <= a[m - 1]:
            break
    z = np.clip(v, -t, t)
    val = 0.5 * s * s * t * t + np.sum((v - z) ** 2) / (2 * theta)
    return val, z


def _inner_l1(v, s, theta):
    # z_i = sign(v_i) (|v_i| - tau)_+ with tau = theta s^2 ||z||_1
    a = np.sort(np.abs(v))[::-1]
    cs = np.cumsum(a)
    k = s * s * theta
    tau = 0.0
    for m in range(1, a.size + 1):
        T = cs[m - 1] / (1 + m * k)
        tau = k * T
        nxt = a[m] if m < a.size else 0.0
        if nxt <= tau <= a[m - 1]:
            break
    z = np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)
    val = 0.5 * s * s * np.abs(z).sum() ** 2 + np.sum((v - z) ** 2) / (2 * theta)
    return val, z


def _inner_l2(v, s, theta):
    z = v / (1 + theta * s * s)
    val = 0.5 * s * s * z @ z + np.sum((v - z) ** 2) / (2 * theta)
    return val, z


_INNER = {"linf": _inner_linf, "l1": _inner_l1, "l2": _inner_l2}


def _prox_distance(M: MoreauEnvelope, x):
    """Value and prox point for span / subspace_distance seminorms."""
    p = M.p_c
    inner = _INNER[p.norm_id]
    B = p.kernel_basis
    th, s = M.theta, p.scale
    if B.shape[1] == 0:
        val, z = inner(x, s, th)
        return val, z

    def h(c):
        v = x - B @ c
        val, z = inner(v, s, th)
        return val, -B.T @ (v - z) / th

    c0 = B.T @ x
    if B.shape[1] == 1:
        width = max(1.0, np.abs(x).max() * np.sqrt(p.dim))
        res = optimize.minimize_scalar(lambda c: h(np.array([c]))[0],
                                       bracket=(c0[0] - width, c0[0] + width),
                                       tol=1e-14)
        c = np.array([res.x])
        ok = res.success if hasattr(res, "success") else True
    else:
        res = optimize.minimize(h, c0, jac=True, method="BFGS",
                                options={"gtol": 1e-12, "maxiter": 5000})
        c = res.x
        ok = res.success or np.linalg.norm(res.jac) < 1e-9
    if not ok:
        raise RuntimeError(f"Moreau envelope minimization did not converge: {res.message}")
    v = x - B @ c
    val, z = inner(v, s, th)
    return val, B @ c + z


def _check_sandwich(M, x, val, tol=1e-9):
    half_p2 = 0.5 * evaluate(M.p_c, x) ** 2
    lo, hi = M.l_cm**2 * val, M.u_cm**2 * val
    slack = tol * max(1.0, half_p2)
    if not (lo <= half_p2 + slack and half_p2 <= hi + slack):
        raise RuntimeError("Moreau envelope value violates the sandwich bound")


def moreau_eval(M: MoreauEnvelope, x, check=True):
    """Value of the envelope at x (a vector or a stack of rows)."""
    x = np.asarray(x, dtype=float)
    p = M.p_c
    if x.shape[-1] != p.dim:
        raise ValueError("dimension mismatch")
    if p.kind == "quadratic":
        G = _quadratic_gain(M)
        X = np.atleast_2d(x)
        out = 0.5 * np.einsum("ij,jk,ik->i", X, G, X)
        out = np.maximum(out, 0.0)
        return float(out[0]) if x.ndim == 1 else out
    if x.ndim == 2:
        return np.array([moreau_eval(M, row, check) for row in x])
    val, _ = _prox_distance(M, x)
    if check:
        _check_sandwich(M, x, val)
    return float(val)


def _quadratic_gain(M):
    # 1/2 y'Py + |x - y|^2/(2 theta) is minimized at y = (I + theta P)^-1 x,
    # leaving M(x) = 1/2 x' P (I + theta P)^-1 x
    P = M.p_c.matrix
    d = P.shape[0]
    G = P @ linalg.solve(np.eye(d) + M.theta * P, np.eye(d), assume_a="pos")
    return 0.5 * (G + G.T)


def moreau_grad(M: MoreauEnvelope, x):
    """Gradient (x - prox(x)) / theta."""
    x = np.asarray(x, dtype=float)
    if M.p_c.kind == "quadratic":
        return x @ _quadratic_gain(M)
    if x.ndim == 2:
        return np.array([moreau_grad(M, row) for row in x])
    _, y = _prox_distance(M, x)
    return (x - y) / M.theta


def moreau_numeric(M: MoreauEnvelope, x):
    """Envelope value by direct minimization over y.

    Quadratic seminorms use BFGS; the others a smooth epigraph form solved
    by SLSQP. Independent of the exact evaluations above; used as a
    cross-check.
    """
    x = np.asarray(x, dtype=float)
    p = M.p_c
    th = M.theta
    if p.kind == "quadratic":
        P = p.matrix

        def f(y):
            r = x - y
            return 0.5 * y @ P @ y + r @ r / (2 * th), P @ y - r / th
    else:
        return _numeric_distance(M, x)
    res = optimize.minimize(f, x.copy(), jac=True, method="BFGS",
                            options={"gtol": 1e-13, "maxiter": 10000})
    return float(res.fun)


def _numeric_distance(M, x):
    # smooth epigraph form in z = (y, c, u): u bounds |y - Bc| entrywise (l1)
    # or as a scalar (linf), so SLSQP sees only smooth pieces
    p = M.p_c
    B = p.kernel_basis
    d, m = p.dim, B.shape[1]
    s2, th = p.scale**2, M.theta
    if p.norm_id == "l2":
        def f(z):
            y, c = z[:d], z[d:]
            r, v = x - y, z[:d] - B @ c
            return 0.5 * s2 * v @ v + r @ r / (2 * th)
        res = optimize.minimize(f, np.r_[x, B.T @ x], method="BFGS", options={"gtol": 1e-12})
        return float(res.fun)
    nu = 1 if p.norm_id == "linf" else d

    def f(z):
        y, u = z[:d], z[d + m:]
        r = x - y
        return 0.5 * s2 * (u.max() if nu == 1 else u.sum()) ** 2 + r @ r / (2 * th)

    def cons(z):
        y, c, u = z[:d], z[d:d + m], z[d + m:]
        v = y - B @ c
        return np.r_[u - v, u + v]

    z0 = np.r_[x, B.T @ x, np.full(nu, np.abs(x).max())]
    res = optimize.minimize(f, z0, method="SLSQP", constraints=[{"type": "ineq", "fun": cons}],
                            options={"ftol": 1e-15, "maxiter": 1000})
    # status 8 is SLSQP's precision floor; accept it at a feasible point
    if not (res.success or (res.status == 8 and cons(res.x).min() >= -1e-10)):
        raise RuntimeError(f"numeric Moreau minimization failed: {res.message}")
    return float(res.fun)


# ---------------------------------------------------------------------------
# exact min-plus convolution on integer grids
# ---------------------------------------------------------------------------

def inf_convolve(f, g):
    """Full min-plus convolution of two arrays on integer grids.

    out[i + j] = min f[i] + g[j]; the result has shape f.shape + g.shape - 1
    and its origin is the sum of the input origins. +inf encodes points
    outside the effective domain.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.ndim != g.ndim:
        raise ValueError("grids must have the same dimension")
    shape = tuple(a + b - 1 for a, b in zip(f.shape, g.shape))
    out = np.full(shape, np.inf)
    for idx in zip(*np.nonzero(np.isfinite(f))):
        sl = tuple(slice(i, i + n) for i, n in zip(idx, g.shape))
        np.minimum(out[sl], f[idx] + g, out=out[sl])
    return out


def indicator_grid(shape, direction, origin):
    """Indicator of the lattice line through 0 along ``direction`` on a grid.

    ``origin`` is the integer coordinate of element [0, ..., 0].
    """
    direction = np.asarray(direction)
    out = np.full(shape, np.inf)
    for idx in np.ndindex(*shape):
        pt = np.asarray(idx) + np.asarray(origin)
        # pt is on the line iff it is parallel to direction
        M = np.vstack([pt, direction])
        if np.linalg.matrix_rank(M) <= 1:
            out[idx] = 0.0
    return out
