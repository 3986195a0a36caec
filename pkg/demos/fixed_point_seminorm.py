"""
Fixed-point iteration in a seminorm
===================================

The map T(x) = (x1/2, 2 x2) is not a contraction in any norm: the second
coordinate doubles every step. Measured with p(x) = |x1|, whose kernel is
the x2 axis, it contracts with factor 1/2. Iterating T drives the
p-error to zero while the iterate itself runs off to infinity.
"""
import numpy as np

from seminorm_sa.seminorm import Seminorm, fixed_point_iterate, verify_contraction

p = Seminorm.quadratic(np.diag([1.0, 0.0]))


def T(x):
    return np.array([x[0] / 2, 2 * x[1]])


# the contraction factor, estimated from random pairs
est = verify_contraction(T, p, 500)
print(f"sampled contraction factor: {est.gamma:.6f}")

trace = fixed_point_iterate(T, p, np.array([1.0, 1.0]), 20, x_star=np.zeros(2))
for k in (0, 5, 10, 20):
    print(f"k={k:2d}  p-error={trace.errors[k]:.3e}  x_k(2)={trace.iterates[k][1]:.0f}")

# binary arithmetic makes both values exact
assert trace.errors[20] == 2.0**-20 and trace.iterates[20][1] == 2.0**20

# span seminorm: a row-stochastic matrix contracts by its Dobrushin coefficient
P = np.array([[0.5, 0.5, 0.0], [0.2, 0.3, 0.5], [0.0, 0.4, 0.6]])
est = verify_contraction(lambda x: P @ x, Seminorm.span(3), 2000)
print(f"span contraction of P: {est.gamma:.4f}")
