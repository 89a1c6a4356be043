"""
A moving DoH server on one laptop
=================================

Two rotating addresses inside 127.77.20.0/24, a name channel that takes
ten seconds to propagate, and a client that polls every five seconds.
Virtual time skips ahead while every query still goes through the local
UDP listener, across TLS, to whichever address the client currently uses.
"""

from ladderdoh.testbed import Testbed

zone = {"example.test": "203.0.113.5", "www.example.test": "203.0.113.6"}

bed = Testbed(zone, app_interfaces=2, rotation_interval=60, delay=10, poll=5,
              block="127.77.20.0/24", seed=1).start()
print("bootstrap addresses:", [str(a) for a in bed.server.live_addresses])
print("client uses:", bed.client.last_ip)

# ten virtual minutes at five queries per second
stats = bed.run(600, query_rate=5)
print(f"{stats.queries} queries, {stats.failed} failed, {stats.rotations} rotations")

# each rotation logs which address came in and which went out
for r in bed.server.reports:
    print(f"  rotation {r.iteration}: +{r.new_ip} -{r.released_ip} path_len={r.path_len}")

print("client now uses:", bed.client.last_ip, "state:", bed.client.state.value)
bed.close()
