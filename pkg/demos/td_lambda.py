"""
Average-reward TD(lambda) as linear SA
======================================

With tabular features the all-ones vector lies in the feature span, so the
projected Bellman equation has a line of solutions. Writing TD(lambda) as a
linear SA in Theta = [r; theta], its mean matrix is singular along that line
and is not Hurwitz, yet the iterates converge in the seminorm that ignores
the line.
"""
import numpy as np

from seminorm_sa.rl import FeatureMap, random_mrp, td_instance, td_lambda_run
from seminorm_sa.sa import StepsizeSchedule

mrp = random_mrp(5, seed=0)
inst = td_instance(mrp, FeatureMap.tabular(5), lam=0.5)
print(f"average reward r = {mrp.r:.4f}")
print(f"Delta = {inst.Delta:.4f}, c_alpha = {inst.c_alpha:.3f}")
print("eigenvalues of the mean matrix:", np.round(np.linalg.eigvals(inst.A_bar).real, 3))
print("kernel basis of the solution set:", np.round(inst.S_basis[:, 0], 3))

beta = max(25.0, 2.5 / inst.Delta)
sched = StepsizeSchedule.linear(beta, max(300.0, 2 * inst.c_alpha * beta))
ks = [0, 100, 1000, 10_000, 50_000]
run = td_lambda_run(inst, sched, 50_001, 50, seed=0, record_at=ks)
for k, m in zip(run.ks, run.mean_sq()):
    print(f"k={k:6d}  mean-square distance to the solution set {m:.3e}")
