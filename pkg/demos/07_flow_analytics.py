"""
Flows, clumps and durations
===========================

Synthetic traffic whose flows have Normal(10.30, 5.20) clump counts goes
through the same pipeline a real packet log would: stitch packets into
flows, count clumps, summarize durations.  The flow-duration model used by
the censor simulation is a log-normal fitted to a mean and a median.
"""

import numpy as np

from ladderdoh import flows

packets, target_counts = flows.synth_clumped_trace(2000, 10.30, 5.20, seed=3)
fl = flows.stitch_flows(packets)
st = flows.clump_stats(fl)
print(f"{len(packets)} packets -> {len(fl)} flows; clumps mean {st.mean:.2f} std {st.std:.2f}")

x = flows.extract_features(fl[0])
print("first flow:", x)

d = flows.duration_stats(fl)
print(f"durations: mean {d.mean:.0f} ms, median {d.median:.0f} ms, skew {d.skewness:.2f}")

for label, mean, median in [("moving DoH", 742, 246), ("non-DoH", 7430, 313)]:
    mu, sigma = flows.fit_lognormal(mean, median)
    draws = flows.sample_durations_ms(1_000_000, mean, median, seed=0)
    print(f"{label}: mu={mu:.3f} sigma={sigma:.3f}; 1e6 draws mean {draws.mean():.0f} median {np.median(draws):.0f}")
