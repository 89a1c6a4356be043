from .daemon import ClientConfig, ClientState, ClientStatus, DohClient, run_client_loop
from .forwarder import DohForwarder, Egress, ProbeResult, udp_query
from .stamp import (
    MalformedStamp,
    StampData,
    StampError,
    UnsupportedProtocol,
    decode_stamp,
    encode_stamp,
    proxy_config_fragment,
    stamp_for,
)
