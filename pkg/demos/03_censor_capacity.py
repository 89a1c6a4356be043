"""
How many processors does a censor need?
=======================================

A censor that classifies whole flows can only use a verdict before the
server rotates away.  With N processors each spending T_p per flow and
flows arriving at lambda per second, the share of DoH flows it can even
look at is min(1, N / (lambda T_p)); detection is that times the
classifier's true positive rate.
"""

from ladderdoh.sim import DetectionScenario, analytic_p_detect, simulate_detection, sweep_csv, sweep_detection

s = DetectionScenario(flows_per_minute=12000, t_p=0.01, n_proc=1, n_flows=100_000, seed=0)
res = simulate_detection(s)
print(f"lambda={s.lam:.0f}/s T_p={s.t_p}s N=1: analytic {analytic_p_detect(s):.3f}, "
      f"simulated {res.p_detect_doh:.3f}, processor utilization {res.utilization:.2f}")

# grid over load, per-flow cost and processor count
rows = sweep_detection([600, 6000, 60000, 600000], [0.001, 0.01, 0.1], [1, 8, 64],
                       base=DetectionScenario(flows_per_minute=600, t_p=0.001, n_flows=20000))
print(sweep_csv(rows)[:1200])

# ISP-scale example: a million flows a minute and 50 ms of model time per flow
big = DetectionScenario(flows_per_minute=1_000_000, t_p=0.05, n_proc=64)
print(f"64 processors at 1M flows/min, 50 ms each: P(detect) = {analytic_p_detect(big):.3f}")
