"""
When does rotation drop queries?
================================

A client can only lose queries if the address it uses is retired before
it notices the replacement.  With K addresses on the ladder, the newest
one stays live for (K - 1) rotations, so the client is safe whenever

    poll + d < (K - 1) * R_min
"""

from ladderdoh.sim import AvailabilityScenario, simulate_availability

print(" K     R     d  poll  holds  dropped/total")
for k, r, d, poll in [(2, 60, 10, 5), (2, 60, 50, 5), (2, 60, 56, 5), (2, 60, 70, 5),
                      (3, 60, 70, 5), (2, (30, 90), 20, 5), (2, (30, 90), 30, 5), (1, 60, 0, 5)]:
    s = AvailabilityScenario(K=k, R=r, d=d, poll=poll, query_rate=10, horizon=3600, seed=0)
    res = simulate_availability(s)
    print(f"{k:2d} {str(r):>5} {d:5} {poll:5}  {str(s.ladder_holds()):5}  {res.dropped}/{res.total}")

# a random rotation schedule is judged by its shortest interval: (30, 90) with d=30
# violates the law, but only loses queries when a short interval actually comes up
