"""Private CA and per-rotation leaf issuance.

Leaves name the newest address in CN and list every live address as an
IP subjectAltName, so a client dialing any rung of the ladder validates.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import ipaddress
import os
import ssl
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import ExtendedKeyUsageOID, NameOID

from .model import as_address

LEAF_VALIDITY = dt.timedelta(days=7)
CA_VALIDITY = dt.timedelta(days=3650)
SKEW = dt.timedelta(seconds=300)


class CertError(ValueError):
    pass


def _utc(now) -> dt.datetime:
    if now is None:
        return dt.datetime.now(dt.timezone.utc)
    if isinstance(now, (int, float)):
        return dt.datetime.fromtimestamp(now, dt.timezone.utc)
    return now if now.tzinfo else now.replace(tzinfo=dt.timezone.utc)


def _new_key():
    return ec.generate_private_key(ec.SECP256R1())


def _key_pem(key) -> bytes:
    return key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )


@dataclass(frozen=True)
class CaBundle:
    certificate: x509.Certificate
    private_key: ec.EllipticCurvePrivateKey = field(repr=False)

    @property
    def certificate_pem(self) -> bytes:
        return self.certificate.public_bytes(serialization.Encoding.PEM)

    @property
    def key_pem(self) -> bytes:
        return _key_pem(self.private_key)

    def fingerprint(self) -> bytes:
        """SHA-256 of the root's DER encoding; the value pinned in stamps."""
        return root_digest(self.certificate)

    def export(self, cert_path, key_path=None):
        Path(cert_path).write_bytes(self.certificate_pem)
        if key_path is not None:
            fd = os.open(key_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
            with os.fdopen(fd, "wb") as fh:
                fh.write(self.key_pem)

    @classmethod
    def load(cls, cert_path, key_path) -> "CaBundle":
        cert = x509.load_pem_x509_certificate(Path(cert_path).read_bytes())
        key = serialization.load_pem_private_key(Path(key_path).read_bytes(), password=None)
        return cls(cert, key)


def root_digest(cert: x509.Certificate) -> bytes:
    return hashlib.sha256(cert.public_bytes(serialization.Encoding.DER)).digest()


def load_root(path) -> x509.Certificate:
    return x509.load_pem_x509_certificate(Path(path).read_bytes())


@dataclass(frozen=True)
class ServerCertificate:
    certificate: x509.Certificate
    private_key: ec.EllipticCurvePrivateKey = field(repr=False)
    covered_ips: tuple
    issued_at: dt.datetime
    expires_at: dt.datetime

    @property
    def certificate_pem(self) -> bytes:
        return self.certificate.public_bytes(serialization.Encoding.PEM)

    @property
    def key_pem(self) -> bytes:
        return _key_pem(self.private_key)

    @property
    def san_ips(self) -> frozenset:
        return san_ips(self.certificate)

    @property
    def common_name(self) -> str:
        return self.certificate.subject.get_attributes_for_oid(NameOID.COMMON_NAME)[0].value


def san_ips(cert: x509.Certificate) -> frozenset:
    try:
        ext = cert.extensions.get_extension_for_class(x509.SubjectAlternativeName)
    except x509.ExtensionNotFound:
        return frozenset()
    return frozenset(ext.value.get_values_for_type(x509.IPAddress))


def init_ca(common_name: str = "Private DoH Root", validity: dt.timedelta = CA_VALIDITY, now=None) -> CaBundle:
    if validity <= dt.timedelta(0):
        raise CertError("validity must be positive")
    key = _new_key()
    subject = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    start = _utc(now)
    ski = x509.SubjectKeyIdentifier.from_public_key(key.public_key())
    cert = (
        x509.CertificateBuilder()
        .subject_name(subject)
        .issuer_name(subject)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(start - SKEW)
        .not_valid_after(start + validity)
        .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
        .add_extension(
            x509.KeyUsage(
                digital_signature=False, content_commitment=False, key_encipherment=False,
                data_encipherment=False, key_agreement=False, key_cert_sign=True,
                crl_sign=True, encipher_only=False, decipher_only=False,
            ),
            critical=True,
        )
        .add_extension(ski, critical=False)
        .sign(key, hashes.SHA256())
    )
    return CaBundle(cert, key)


def issue_server_cert(
    ca: CaBundle,
    ips: Sequence,
    validity: dt.timedelta = LEAF_VALIDITY,
    now=None,
    key: ec.EllipticCurvePrivateKey | None = None,
) -> ServerCertificate:
    """Sign a leaf for ``ips`` (newest last). Pass ``key`` to reuse a key pair."""
    addrs = tuple(as_address(ip) for ip in ips)
    if not addrs:
        raise CertError("cannot issue a certificate for zero addresses")
    if len(set(addrs)) != len(addrs):
        raise CertError("duplicate addresses")
    key = key or _new_key()
    start = _utc(now)
    cert = (
        x509.CertificateBuilder()
        .subject_name(x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, str(addrs[-1]))]))
        .issuer_name(ca.certificate.subject)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(start - SKEW)
        .not_valid_after(start + validity)
        .add_extension(x509.SubjectAlternativeName([x509.IPAddress(a) for a in addrs]), critical=False)
        .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
        .add_extension(
            x509.KeyUsage(
                digital_signature=True, content_commitment=False, key_encipherment=False,
                data_encipherment=False, key_agreement=False, key_cert_sign=False,
                crl_sign=False, encipher_only=False, decipher_only=False,
            ),
            critical=True,
        )
        .add_extension(x509.ExtendedKeyUsage([ExtendedKeyUsageOID.SERVER_AUTH]), critical=False)
        .add_extension(
            x509.AuthorityKeyIdentifier.from_issuer_public_key(ca.private_key.public_key()),
            critical=False,
        )
        .sign(ca.private_key, hashes.SHA256())
    )
    return ServerCertificate(cert, key, addrs, start, start + validity)


def verify_chain(root: x509.Certificate, leaf: x509.Certificate, target_ip, now=None) -> bool:
    """True iff ``leaf`` is signed by ``root``, currently valid, and covers ``target_ip``."""
    when = _utc(now)
    try:
        leaf.verify_directly_issued_by(root)
    except (ValueError, TypeError, InvalidSignature):
        return False
    for cert in (root, leaf):
        if not cert.not_valid_before_utc <= when <= cert.not_valid_after_utc:
            return False
    try:
        target = ipaddress.ip_address(str(target_ip))
    except ValueError:
        return False
    return target in san_ips(leaf)


def server_context(cert: ServerCertificate) -> ssl.SSLContext:
    """TLS server context presenting ``cert``."""
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_2
    ctx.set_alpn_protocols(["http/1.1"])
    # load_cert_chain only takes paths
    with tempfile.TemporaryDirectory() as tmp:
        cert_file = Path(tmp, "leaf.pem")
        key_file = Path(tmp, "leaf.key")
        cert_file.write_bytes(cert.certificate_pem)
        key_file.write_bytes(cert.key_pem)
        ctx.load_cert_chain(cert_file, key_file)
    return ctx


def client_context(root_pem: bytes | str) -> ssl.SSLContext:
    """Client context that trusts only the private root and checks IP SANs."""
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_2
    ctx.set_alpn_protocols(["http/1.1"])
    if isinstance(root_pem, bytes):
        root_pem = root_pem.decode("ascii")
    ctx.load_verify_locations(cadata=root_pem)
    # check_hostname stays on: with an IP literal as server_hostname CPython
    # matches it against IP SANs and sends no SNI
    return ctx
