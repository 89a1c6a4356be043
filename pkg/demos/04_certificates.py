"""
Certificates that follow the addresses
======================================

Every rotation gets a fresh leaf whose IP SANs are exactly the live
addresses.  The client pins the private root, connects to IP literals
(no SNI on the wire) and rejects any address the leaf does not name.
"""

import socket
import ssl

from ladderdoh.certs import client_context, init_ca, issue_server_cert, server_context, verify_chain

ca = init_ca("Demo Root")
print("root sha256:", ca.fingerprint().hex())

live = ["127.0.0.1", "127.77.21.2"]
leaf = issue_server_cert(ca, live)
print("leaf CN:", leaf.common_name, "SANs:", sorted(map(str, leaf.san_ips)))

# rotate: 127.0.0.1 retires, 127.77.21.3 arrives, same key pair
rotated = issue_server_cert(ca, live[1:] + ["127.77.21.3"], key=leaf.private_key)
for ip in live + ["127.77.21.3"]:
    print(f"  {ip}: valid under rotated leaf = {verify_chain(ca.certificate, rotated.certificate, ip)}")

# a live handshake against the first leaf
srv = socket.socket()
srv.bind(("127.0.0.1", 0))
srv.listen(1)
port = srv.getsockname()[1]
client = client_context(ca.certificate_pem)
with socket.create_connection(("127.0.0.1", port)) as raw:
    conn, _ = srv.accept()
    import threading
    t = threading.Thread(target=lambda: server_context(leaf).wrap_socket(conn, server_side=True))
    t.start()
    with client.wrap_socket(raw, server_hostname="127.0.0.1") as tls:
        print("handshake ok:", tls.version(), tls.getpeercert()["subjectAltName"])
    t.join()
srv.close()
