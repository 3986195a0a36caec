"""
J-step synchronous Q-learning in the span seminorm
==================================================

The average-reward optimality operator is not a contraction in any norm,
but a J-step version contracts in the span seminorm. We pick J from a
sampled contraction estimate, compute Q* by relative value iteration, and
compare constant-step plateaus for alpha and alpha/2.
"""
import numpy as np

from seminorm_sa.rl import q_learning_run, q_star_oracle, random_unichain_mdp, select_J
from seminorm_sa.sa import StepsizeSchedule

mdp = random_unichain_mdp(3, 2, seed=1)
J, gamma = select_J(mdp)
Qs, r_star = q_star_oracle(mdp, J)
print(f"J={J}, sampled span factor {gamma:.3f}, optimal average reward {r_star:.4f}")
print("greedy policy:", Qs.argmax(axis=1))

plateau = {}
for alpha in (0.1, 0.05):
    run = q_learning_run(mdp, J, StepsizeSchedule.constant(alpha), 20_000, 50, seed=2,
                         q_star=Qs, record_at=np.arange(10_000, 20_000, 10))
    plateau[alpha] = run.mean_sq().mean()
    print(f"alpha={alpha}: plateau of span^2 error {plateau[alpha]:.3e}")
print(f"ratio {plateau[0.1] / plateau[0.05]:.2f} (linear in alpha gives 2)")
