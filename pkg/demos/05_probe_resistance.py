"""
What an active prober sees
==========================

The resolver only answers on secret paths that change every rotation.
Everything else, including the well-known /dns-query, gets the same
plain 404 a static web server would send.
"""

import http.client

from ladderdoh import dnsutil
from ladderdoh.testbed import Testbed

bed = Testbed({"example.test": "203.0.113.5"}, block="127.77.22.0/24").start()
host, port = str(bed.server.live_addresses[-1]), bed.server.port
ctx = bed.client.forwarder.context


def post(path):
    conn = http.client.HTTPSConnection(host, port, context=ctx)
    conn.request("POST", path, body=dnsutil.make_query("example.test"),
                 headers={"Content-Type": "application/dns-message"})
    resp = conn.getresponse()
    body = resp.read()
    conn.close()
    return resp.status, resp.getheaders(), body


for path in ["/dns-query", "/resolve", "/" + "a" * 24, bed.server.active_paths[-1]]:
    status, headers, body = post(path)
    shown = dnsutil.answer_addresses(body) if status == 200 else body[:40]
    print(f"{path[:30]:32} {status} {headers} {shown}")
bed.close()
