"""
Lyapunov equations with a prescribed kernel
===========================================

A matrix with an eigenvalue outside the unit circle has no positive
definite Lyapunov certificate. If we only care about convergence modulo an
invariant subspace E that contains the unstable directions, a positive
semidefinite P with kernel exactly E still certifies stability.
"""
import numpy as np

from seminorm_sa.lyapunov import (LyapunovError, contraction_factor_from_certificate,
                                  random_instance, solve_discrete, stability_verdict)

A = np.diag([0.5, 2.0])
Q = np.diag([1.0, 0.0])
cert = solve_discrete(A, Q)
print("P =\n", cert.P)
print(f"residual {cert.residual:.2e}, contraction factor "
      f"{contraction_factor_from_certificate(cert):.3f}")

# the kernel of Q must contain the unstable direction
try:
    solve_discrete(A, np.diag([0.0, 1.0]))
except LyapunovError as exc:
    print("rejected:", exc)

# the five equivalent statements agree on random instances
rng = np.random.default_rng(0)
for mode in ("discrete", "continuous"):
    agree = 0
    for i in range(20):
        A, E = random_instance(rng, mode=mode)
        rep = stability_verdict(A, E, mode, seed=i)
        agree += rep.unanimous and rep.verdict
    print(f"{mode}: {agree}/20 unanimous stable verdicts")
