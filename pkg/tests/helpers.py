"""Bits shared by several test modules."""

import socket
import ssl
import struct
import threading

SNI_EXTENSION = 0x0000


def client_hello_extensions(record: bytes) -> list[int]:
    """Extension type codes in a TLS ClientHello (first handshake record)."""
    assert record[0] == 0x16, "not a handshake record"
    body = record[5:]
    assert body[0] == 0x01, "not a ClientHello"
    p = 4 + 2 + 32  # handshake header, client_version, random
    p += 1 + body[p]  # session id
    p += 2 + struct.unpack("!H", body[p:p + 2])[0]  # cipher suites
    p += 1 + body[p]  # compression methods
    end = p + 2 + struct.unpack("!H", body[p:p + 2])[0]
    p += 2
    types = []
    while p < end:
        etype, elen = struct.unpack("!HH", body[p:p + 4])
        types.append(etype)
        p += 4 + elen
    return types


def capture_client_hello(context: ssl.SSLContext, server_hostname: str, host: str = "127.0.0.1") -> bytes:
    """Run a TLS client against a raw listener and return the bytes it sends first."""
    lsock = socket.socket()
    lsock.bind((host, 0))
    lsock.listen(1)
    got = {}

    def accept():
        conn, _ = lsock.accept()
        conn.settimeout(3)
        buf = b""
        while len(buf) < 5 or len(buf) < 5 + struct.unpack("!H", buf[3:5])[0]:
            chunk = conn.recv(65536)
            if not chunk:
                break
            buf += chunk
        got["hello"] = buf
        conn.close()

    t = threading.Thread(target=accept)
    t.start()
    with socket.create_connection(lsock.getsockname(), timeout=3) as raw:
        try:
            with context.wrap_socket(raw, server_hostname=server_hostname):
                pass
        except (ssl.SSLError, OSError):
            pass
    t.join(5)
    lsock.close()
    return got["hello"]


def raw_https(host: str, port: int, context: ssl.SSLContext, request: bytes):
    """Send one raw HTTP/1.1 request; return (status line, [header names], headers dict, body)."""
    with socket.create_connection((host, port), timeout=3) as raw:
        with context.wrap_socket(raw, server_hostname=host) as s:
            s.sendall(request)
            data = b""
            while b"\r\n\r\n" not in data:
                chunk = s.recv(65536)
                if not chunk:
                    break
                data += chunk
            head, _, body = data.partition(b"\r\n\r\n")
            lines = head.decode("latin-1").split("\r\n")
            headers = dict(line.split(": ", 1) for line in lines[1:])
            length = int(headers.get("Content-Length", 0))
            while len(body) < length:
                chunk = s.recv(65536)
                if not chunk:
                    break
                body += chunk
    return lines[0], [line.split(":", 1)[0] for line in lines[1:]], headers, body


def http_request(method: str, target: str, host: str, body: bytes = b"", ctype: str | None = None) -> bytes:
    lines = [f"{method} {target} HTTP/1.1", f"Host: {host}", "Connection: close"]
    if ctype:
        lines.append(f"Content-Type: {ctype}")
    if body or method == "POST":
        lines.append(f"Content-Length: {len(body)}")
    return ("\r\n".join(lines) + "\r\n\r\n").encode() + body


class LoopbackCapture:
    """Minimal packet capture on ``lo`` via AF_PACKET (needs CAP_NET_RAW).

    Records (src_ip, dst_ip, src_port, dst_port, proto) for every IPv4
    TCP/UDP packet seen while active.
    """

    def __init__(self, iface: str = "lo"):
        self.iface = iface
        self.packets: list[tuple[str, str, int, int, str]] = []
        self._stop = threading.Event()

    @staticmethod
    def available() -> bool:
        try:
            socket.socket(socket.AF_PACKET, socket.SOCK_RAW, socket.htons(0x0003)).close()
            return True
        except (OSError, AttributeError):
            return False

    def __enter__(self):
        self.sock = socket.socket(socket.AF_PACKET, socket.SOCK_RAW, socket.htons(0x0003))
        self.sock.bind((self.iface, 0))
        self.sock.settimeout(0.05)
        self.thread = threading.Thread(target=self._loop, daemon=True)
        self.thread.start()
        return self

    def _loop(self):
        while not self._stop.is_set():
            try:
                frame, addr = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                return
            if addr[2] == socket.PACKET_OUTGOING:
                continue  # every loopback packet shows up twice
            if len(frame) < 14 + 20 or frame[12:14] != b"\x08\x00":
                continue
            ip = frame[14:]
            ihl = (ip[0] & 0x0F) * 4
            proto = {6: "tcp", 17: "udp"}.get(ip[9])
            if proto is None:
                continue
            sport, dport = struct.unpack("!HH", ip[ihl:ihl + 4])
            self.packets.append((socket.inet_ntoa(ip[12:16]), socket.inet_ntoa(ip[16:20]), sport, dport, proto))

    def __exit__(self, *exc):
        self._stop.set()
        self.thread.join(1)
        self.sock.close()
