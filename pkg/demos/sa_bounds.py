"""
Finite-sample envelopes for Markovian stochastic approximation
==============================================================

A scalar contraction driven by a two-state Markov chain, with
multiplicative Markovian noise and an additive martingale term. We run 100
trials under a constant step and compare the mean-square error with the
finite-sample envelope. Then we check the O(1/k) rate of a linear schedule.
"""
import numpy as np

from seminorm_sa.sa import StepsizeSchedule, bound_envelope, run_sa, sa_c1_c2, scalar_test_problem

prob = scalar_test_problem()
consts = prob.constants()
print(f"phi1={consts.phi1}, phi2={consts.phi2}, phi3={consts.phi3}, "
      f"step threshold={consts.threshold():.3e}")

sched = StepsizeSchedule.constant(5e-4)
horizon = 5000
c1, c2 = sa_c1_c2(prob, consts, np.zeros(1))
env = bound_envelope(consts, sched, prob.chain, c1, c2, horizon)
run = run_sa(prob, sched, horizon, 100, seed=0, check=False)
m = run.mean_sq()
for k in (env.K, 1000, horizon - 1):
    print(f"k={k:5d}  MC mean-square={m[k]:.3e}  envelope={env.at(k):.3e}")
print(f"envelope is {np.min(env.exact / m[env.K:]):.0f}x looser than the MC estimate at best")

# rate: slope of log mean-square error against log k
sched = StepsizeSchedule.linear(3.0, 10.0)
ks = np.unique(np.geomspace(1, 20_000, 60).astype(int))
run = run_sa(prob, sched, 20_001, 100, seed=1, record_at=ks, check=False)
sel = run.ks >= 1000
slope = np.polyfit(np.log(run.ks[sel]), np.log(run.mean_sq()[sel]), 1)[0]
print(f"log-log slope over k in [1e3, 2e4]: {slope:.2f}")
