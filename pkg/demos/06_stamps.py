"""
Handing the client a stamp
==========================

dnscrypt-proxy and friends take DoH servers as sdns:// stamps.  The stamp
pins the root certificate hash, so no public CA is involved.
"""

from ladderdoh.certs import init_ca
from ladderdoh.client.stamp import decode_stamp, encode_stamp, proxy_config_fragment, stamp_for

ca = init_ca("Demo Root")
stamp = encode_stamp(stamp_for("127.77.23.5", 8443, "/k3v9q0a7b2c4d6e8f1g3", ca.fingerprint()))
print(stamp)
print(decode_stamp(stamp))
print()
print(proxy_config_fragment(stamp))
