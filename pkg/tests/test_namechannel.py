import hashlib
import json
import threading
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from ladderdoh.clock import VirtualClock
from ladderdoh.namechannel import (
    ChannelError,
    DirectoryChannel,
    IntegrityError,
    IpfsHttpChannel,
    NotFound,
    PointerRecord,
    SimulatedChannel,
    TransportError,
    UnknownContent,
    content_id,
    publish_and_verify,
    redact,
)


def test_content_id_is_sha256_hex():
    assert content_id(b"abc") == hashlib.sha256(b"abc").hexdigest()


def test_pointer_becomes_visible_after_delay():
    clock = VirtualClock(1000.0)
    ch = SimulatedChannel(clock, delay=10)
    cid = ch.publish_content(b"v1")
    ch.update_pointer("n", cid)
    with pytest.raises(NotFound):
        ch.resolve_pointer("n")
    clock.advance(9.999)
    with pytest.raises(NotFound):
        ch.resolve_pointer("n")
    clock.advance(0.001)
    assert ch.resolve_pointer("n") == cid
    assert ch.fetch_content(cid) == b"v1"


def test_last_writer_wins_by_sequence():
    clock = VirtualClock(0.0)
    ch = SimulatedChannel(clock, delay=10)
    a, b = ch.publish_content(b"a"), ch.publish_content(b"b")
    ch.update_pointer("n", a, delay=20)
    clock.advance(1)
    ch.update_pointer("n", b, delay=5)
    clock.advance(6)
    assert ch.resolve_pointer("n") == b
    clock.advance(30)
    # a propagated later but was written first
    assert ch.resolve_pointer("n") == b


def test_unknown_and_tampered_content():
    ch = SimulatedChannel(VirtualClock(0.0), delay=0)
    with pytest.raises(UnknownContent):
        ch.update_pointer("n", "0" * 64)
    with pytest.raises(UnknownContent):
        ch.fetch_content("f" * 64)
    cid = ch.publish_content(b"good")
    ch.tamper(cid, b"evil")
    with pytest.raises(IntegrityError):
        ch.fetch_content(cid)


def test_sever_and_restore():
    ch = SimulatedChannel(VirtualClock(0.0), delay=0)
    cid = ch.publish_content(b"x")
    ch.update_pointer("n", cid)
    ch.sever()
    for op in (lambda: ch.resolve_pointer("n"), lambda: ch.fetch_content(cid), lambda: ch.publish_content(b"y")):
        with pytest.raises(TransportError):
            op()
    ch.restore()
    assert ch.resolve_pointer("n") == cid


def test_pointer_record_limits():
    with pytest.raises(ValueError):
        PointerRecord("n", "0" * 64, 0.0, lifetime=3600, ttl=120, rotation_interval=60)
    with pytest.raises(ValueError):
        PointerRecord("n", "0" * 64, 0.0, lifetime=30, ttl=10, rotation_interval=60)
    assert "secret-name" not in repr(PointerRecord("secret-name", "0" * 64, 0.0))


def test_redact_hides_name():
    assert "hunter2" not in redact("hunter2-long-secret")


def test_directory_channel_across_instances(tmp_path):
    clock = VirtualClock(0.0)
    writer = DirectoryChannel(tmp_path, clock, delay=5)
    reader = DirectoryChannel(tmp_path, clock)
    cid = writer.publish_content(b"record")
    writer.update_pointer("n", cid)
    with pytest.raises(NotFound):
        reader.resolve_pointer("n")
    clock.advance(5)
    assert reader.fetch_content(reader.resolve_pointer("n")) == b"record"
    (tmp_path / "blobs" / cid).write_bytes(b"changed")
    with pytest.raises(IntegrityError):
        reader.fetch_content(cid)
    with pytest.raises(UnknownContent):
        reader.fetch_content("../../etc/passwd")


def test_publish_and_verify_strict():
    clock = VirtualClock(0.0)
    ch = SimulatedChannel(clock, delay=0)
    cid = publish_and_verify(ch, "n", b"x", strict=True)
    assert ch.resolve_pointer("n") == cid
    slow = SimulatedChannel(clock, delay=10)
    publish_and_verify(slow, "n", b"x")  # lenient: logs and carries on
    with pytest.raises(ChannelError):
        publish_and_verify(slow, "n", b"y", strict=True)


# -- fake IPFS daemon -----------------------------------------------------------

class FakeIpfs(BaseHTTPRequestHandler):
    blobs: dict = {}
    names: dict = {}
    calls: list = []
    corrupt = False

    def log_message(self, *a):
        pass

    def _json(self, code, doc):
        body = json.dumps(doc).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        url = urllib.parse.urlsplit(self.path)
        q = dict(urllib.parse.parse_qsl(url.query))
        endpoint = url.path.removeprefix("/api/v0/")
        self.calls.append((endpoint, q))
        body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
        if endpoint == "add":
            # pull the single file part out of the multipart body
            boundary = self.headers["Content-Type"].split("boundary=")[1].encode()
            part = body.split(b"--" + boundary)[1]
            data = part.split(b"\r\n\r\n", 1)[1].rsplit(b"\r\n", 1)[0]
            cid = "Qm" + hashlib.sha256(data).hexdigest()[:44]
            if q.get("only-hash") != "true":
                self.blobs[cid] = data
            return self._json(200, {"Name": "record.json", "Hash": cid, "Size": str(len(data))})
        if endpoint == "name/publish":
            self.names[q["key"]] = q["arg"]
            return self._json(200, {"Name": q["key"], "Value": q["arg"]})
        if endpoint == "name/resolve":
            if q["arg"] not in self.names:
                return self._json(500, {"Message": "could not resolve name", "Code": 0, "Type": "error"})
            return self._json(200, {"Path": self.names[q["arg"]]})
        if endpoint == "cat":
            data = self.blobs.get(q["arg"])
            if data is None:
                return self._json(500, {"Message": "block not found", "Code": 0, "Type": "error"})
            if self.corrupt:
                data = data + b" "
            self.send_response(200)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
            return
        self._json(404, {"Message": "unknown command"})


@pytest.fixture
def ipfs():
    FakeIpfs.blobs, FakeIpfs.names, FakeIpfs.calls, FakeIpfs.corrupt = {}, {}, [], False
    srv = ThreadingHTTPServer(("127.0.0.1", 0), FakeIpfs)
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()
    srv.server_close()


def test_ipfs_channel_round_trip(ipfs):
    ch = IpfsHttpChannel(ipfs, lifetime="24h", ttl="10s")
    cid = ch.publish_content(b'{"ips":[]}')
    ch.update_pointer("k51name", cid)
    assert ch.resolve_pointer("k51name") == cid
    assert ch.fetch_content(cid) == b'{"ips":[]}'
    publish = [q for e, q in FakeIpfs.calls if e == "name/publish"][0]
    assert publish == {"arg": f"/ipfs/{cid}", "lifetime": "24h", "ttl": "10s", "key": "k51name"}


def test_ipfs_channel_errors(ipfs):
    ch = IpfsHttpChannel(ipfs)
    with pytest.raises(NotFound):
        ch.resolve_pointer("missing")
    with pytest.raises(UnknownContent):
        ch.fetch_content("QmNothing")
    cid = ch.publish_content(b"data")
    FakeIpfs.corrupt = True
    with pytest.raises(IntegrityError):
        ch.fetch_content(cid)


def test_ipfs_channel_daemon_down():
    ch = IpfsHttpChannel("http://127.0.0.1:9", timeout=1)
    with pytest.raises(TransportError):
        ch.publish_content(b"x")
