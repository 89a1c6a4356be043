from .daemon import CredentialMismatch, DohServer, RotationReport, ServerConfig, run_rotation_loop
from .doh import NOT_FOUND, CredentialSlot, HttpsListener, Response, handle_doh_request
from .upstream import DohUpstream, Resolver, StubUpstream, UpstreamError, resolve_upstream
