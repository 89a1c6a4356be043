"""
Ping-adjusted latency
=====================

Each sample is one lookup minus one round trip to the same endpoint.
With a synthetic resolver taking 20 ms per lookup and 7 ms per ping the
harness should report about 13 ms.  Point it at real resolvers with
``ladderdoh bench dns --resolver https://... --domain ...``.
"""

from ladderdoh.bench import SyntheticTarget, bench_dns

report = bench_dns([SyntheticTarget("synthetic-a", 20, 7), SyntheticTarget("synthetic-b", 9, 2),
                    SyntheticTarget("offline", 5, 1, up=False)],
                   ["example.com", "example.org"], n_per=100, seed=0, parallel=True)
print(report.report_csv())
print("ranking:", report.ranking())
