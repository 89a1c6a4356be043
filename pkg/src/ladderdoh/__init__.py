"""Moving-target DNS-over-HTTPS.

A server that keeps rotating its addresses through a ladder of network
interfaces, reissues its certificate and query path each rotation and
publishes where it lives on a name channel; a client that follows it and
fails closed; plus the simulators and traffic analyzers used to study it.
"""

__version__ = "0.1.0"
