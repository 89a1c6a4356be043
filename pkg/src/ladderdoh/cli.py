"""Command line entry point.

    ladderdoh ca init --out DIR
    ladderdoh serve --channel-dir DIR --ca-dir DIR --block 127.77.0.0/24 --port 8443
    ladderdoh client --channel-dir DIR --ca-root DIR/root.pem --server-port 8443
    ladderdoh stamp encode|decode ...
    ladderdoh sim availability|detect|sweep ...
    ladderdoh analyze stitch|features|clumps|durations PACKETS.jsonl
    ladderdoh bench dns --resolver URL --domain example.com

Every subcommand takes ``--config FILE`` (a JSON object whose keys are
option names, overridden by explicit flags), ``--seed`` and ``--out``.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import secrets
import sys
import threading
from pathlib import Path

log = logging.getLogger("ladderdoh")


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _channel(args, clock=None):
    from . import namechannel
    if getattr(args, "ipfs_api", None):
        return namechannel.IpfsHttpChannel(args.ipfs_api)
    if getattr(args, "channel_dir", None):
        return namechannel.DirectoryChannel(args.channel_dir, clock=clock, delay=args.delay)
    raise CliError("config", "need --channel-dir or --ipfs-api")


# -- ca ----------------------------------------------------------------------

def cmd_ca_init(args):
    from .certs import init_ca
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    ca = init_ca(args.cn)
    ca.export(out / "root.pem", out / "root.key")
    print(f"root={out / 'root.pem'} sha256={ca.fingerprint().hex()}")


def cmd_ca_export(args):
    from .certs import CaBundle
    ca_dir = Path(args.ca_dir)
    ca = CaBundle.load(ca_dir / "root.pem", ca_dir / "root.key")
    with _output(args.out) as fh:
        fh.write(ca.certificate_pem.decode())


# -- stamp ---------------------------------------------------------------------

def cmd_stamp_encode(args):
    from .certs import load_root, root_digest
    from .client.stamp import StampData, encode_stamp
    if args.hash:
        digest = bytes.fromhex(args.hash)
    elif args.ca_root:
        digest = root_digest(load_root(args.ca_root))
    else:
        raise CliError("usage", "need --hash or --ca-root")
    data = StampData(args.address, (digest,), args.hostname or args.address.rsplit(":", 1)[0],
                     args.path, args.props)
    with _output(args.out) as fh:
        print(encode_stamp(data), file=fh)


def cmd_stamp_decode(args):
    from .client.stamp import decode_stamp
    d = decode_stamp(args.stamp)
    doc = {"protocol": d.protocol, "properties": d.properties, "address": d.address,
           "hashes": [h.hex() for h in d.hashes], "hostname": d.hostname, "path": d.path}
    with _output(args.out) as fh:
        print(json.dumps(doc, indent=2), file=fh)


# -- serve / client ------------------------------------------------------------

def cmd_serve(args):
    from .certs import CaBundle
    from .provider import ProviderConfig, SimulatedProvider
    from .server import DohServer, ServerConfig
    ca_dir = Path(args.ca_dir)
    ca = CaBundle.load(ca_dir / "root.pem", ca_dir / "root.key")
    zone = json.loads(Path(args.zone).read_text()) if args.zone else {}
    provider = SimulatedProvider(
        ProviderConfig(pool_size=args.pool, address_block=args.block, app_interfaces=args.k,
                       reuse_policy=args.reuse),
        seed=args.seed,
    )
    config = ServerConfig(
        name=args.name, app_interfaces=args.k, rotation_interval=args.r,
        rotation_range=tuple(args.r_range) if args.r_range else None,
        upstreams=tuple(args.upstream or ()), static_zone=zone, listen_port=args.port,
        fresh_keys=args.fresh_keys,
    )
    server = DohServer(config, provider, _channel(args), ca, seed=args.seed)
    stop = threading.Event()
    with server:
        print(json.dumps({"port": server.port, "addresses": [str(a) for a in server.live_addresses]}),
              flush=True)
        try:
            server.run_rotation_loop(stop, iterations=args.iterations)
        except KeyboardInterrupt:
            stop.set()


def cmd_client(args):
    from .client import ClientConfig, DohClient
    config = ClientConfig(
        name=args.name, ca_root_path=args.ca_root, update_interval=args.interval,
        rotation_interval=args.rotation, local_listen=_hostport(args.listen),
        probe_name=args.probe_name, proxy_config_path=args.proxy_config, server_port=args.server_port,
    )
    client = DohClient(config, _channel(args), seed=args.seed)
    bound = client.forwarder.serve(*config.local_listen)
    log.info("local DNS on %s:%d", *bound)
    try:
        client.run_client_loop(ticks=args.ticks)
    except KeyboardInterrupt:
        pass
    finally:
        client.forwarder.close()


# -- sim -----------------------------------------------------------------------

def cmd_sim_availability(args):
    from .sim import AvailabilityScenario, simulate_availability
    r = tuple(args.r_range) if args.r_range else args.r
    sc = AvailabilityScenario(K=args.k, R=r, d=args.d, poll=args.poll, query_rate=args.rate,
                              horizon=args.horizon, seed=args.seed)
    res = simulate_availability(sc)
    with _output(args.out) as fh:
        print(f"dropped={res.dropped} total={res.total}", file=fh)


def cmd_sim_detect(args):
    from .sim import DetectionScenario, analytic_p_detect, simulate_detection
    sc = DetectionScenario(flows_per_minute=args.fpm, t_p=args.tp, n_proc=args.nproc,
                           t_rotation=args.trot, tpr=args.tpr, doh_fraction=args.doh_fraction,
                           n_flows=args.n_flows, seed=args.seed)
    res = simulate_detection(sc)
    with _output(args.out) as fh:
        print(f"analytic_p={analytic_p_detect(sc):.6f} simulated_p={res.p_detect_doh:.6f} "
              f"processed_fraction={res.processed_fraction:.6f} n_flows={res.n_flows}", file=fh)


def cmd_sim_sweep(args):
    from .sim import DetectionScenario, sweep_csv, sweep_detection
    from .sim.detection import gnuplot_script
    base = DetectionScenario(flows_per_minute=args.fpm[0], t_p=args.tp[0], t_rotation=args.trot,
                             tpr=args.tpr, n_flows=args.n_flows, seed=args.seed)
    rows = sweep_detection(args.fpm, args.tp, args.nproc, base=base, simulate=not args.analytic_only)
    with _output(args.out) as fh:
        fh.write(sweep_csv(rows))
    if args.gnuplot:
        Path(args.gnuplot).write_text(gnuplot_script(args.out or "sweep.csv", args.tpr))


# -- analyze -------------------------------------------------------------------

def _load_flows(args):
    from . import flows
    with open(args.packets) as fh:
        packets, skipped = flows.read_packets(fh)
    if skipped:
        log.warning("skipped %d malformed packet records", skipped)
    return flows.stitch_flows(packets, idle_timeout=args.idle_timeout)


def cmd_analyze_stitch(args):
    from . import flows
    with _output(args.out) as fh:
        flows.write_csv(flows.FLOW_HEADER, flows.flow_rows(_load_flows(args)), fh)


def cmd_analyze_features(args):
    from . import flows
    with _output(args.out) as fh:
        flows.write_csv(flows.FEATURE_HEADER, flows.feature_rows(_load_flows(args)), fh)


def cmd_analyze_clumps(args):
    from . import flows
    fl = _load_flows(args)
    st = flows.clump_stats(fl, args.gap)
    with _output(args.out) as fh:
        flows.write_csv(flows.CLUMP_HEADER, enumerate(st.counts), fh)
    print(f"mean={st.mean:.4f} std={st.std:.4f} threshold={st.threshold}", file=sys.stderr)


def cmd_analyze_durations(args):
    from . import flows
    fl = _load_flows(args)
    groups = {"all": fl}
    for f in fl:
        if f.label != "unknown":
            groups.setdefault(f.label, []).append(f)
    rows = []
    for label, group in groups.items():
        s = flows.duration_stats(group)
        rows.append([label, f"{s.mean:g}", f"{s.median:g}", f"{s.skewness:g}", s.n])
    with _output(args.out) as fh:
        if args.out:
            flows.write_csv(flows.DURATION_HEADER, rows, fh)
        else:
            for label, mean, median, skew, n in rows:
                print(f"{label}: mean {mean} median {median} skew {skew} n {n}", file=fh)


# -- bench ---------------------------------------------------------------------

def cmd_bench_dns(args):
    from .bench import Do53Target, DohTarget, bench_dns
    from .certs import client_context
    ctx = client_context(Path(args.ca_root).read_bytes()) if args.ca_root else None
    targets = []
    for spec in args.resolver:
        if spec.startswith("https://"):
            targets.append(DohTarget(spec, context=ctx))
        else:
            host, port = _hostport(spec) if ":" in spec else (spec, 53)
            targets.append(Do53Target(host, port))
    report = bench_dns(targets, args.domain, args.n, randomize_subdomains=args.randomize,
                       seed=args.seed, parallel=args.parallel)
    with _output(args.out) as fh:
        fh.write(report.samples_csv())
    sys.stderr.write(f"# ping method: {report.ping_method}\n" + report.report_csv())


# -- parser --------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON file of option defaults")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output file (default stdout)")


def _channel_opts(p):
    p.add_argument("--name", default="ladder", help="pointer name shared with clients")
    p.add_argument("--channel-dir", help="directory-backed channel")
    p.add_argument("--ipfs-api", help="IPFS daemon API URL, e.g. http://127.0.0.1:5001")
    p.add_argument("--delay", type=float, default=0.0, help="propagation delay for --channel-dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ladderdoh", description="moving-target DNS over HTTPS")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def leaf(subs, name, func, help=None):
        p = subs.add_parser(name, help=help)
        _common(p)
        p.set_defaults(func=func, _parser=p)
        return p

    ca = sub.add_parser("ca", help="private certificate authority").add_subparsers(dest="action", required=True)
    p = leaf(ca, "init", cmd_ca_init)
    p.add_argument("--cn", default="Private DoH Root")
    p = leaf(ca, "export", cmd_ca_export)
    p.add_argument("--ca-dir", required=True)

    st = sub.add_parser("stamp", help="sdns:// stamps").add_subparsers(dest="action", required=True)
    p = leaf(st, "encode", cmd_stamp_encode)
    p.add_argument("--address", required=True, help="ip:port")
    p.add_argument("--path", required=True)
    p.add_argument("--hostname")
    p.add_argument("--hash", help="hex SHA-256 of the pinned root certificate")
    p.add_argument("--ca-root", help="root certificate PEM to pin")
    p.add_argument("--props", type=int, default=0)
    p = leaf(st, "decode", cmd_stamp_decode)
    p.add_argument("stamp")

    p = leaf(sub, "serve", cmd_serve, help="run the rotating DoH server")
    _channel_opts(p)
    p.add_argument("--ca-dir", required=True)
    p.add_argument("--k", type=int, default=2, help="application interfaces")
    p.add_argument("--r", type=float, default=60.0, help="rotation interval, seconds")
    p.add_argument("--r-range", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--pool", type=int, default=64)
    p.add_argument("--block", default="127.77.0.0/24", help="address block (loopback for local runs)")
    p.add_argument("--reuse", default="uniform-random-free", choices=["uniform-random-free", "lru-free"])
    p.add_argument("--port", type=int, default=8443)
    p.add_argument("--zone", help="JSON file mapping names to IPv4 addresses")
    p.add_argument("--upstream", action="append", help="upstream DoH URL (repeatable)")
    p.add_argument("--fresh-keys", action="store_true")
    p.add_argument("--iterations", type=int, default=None)

    p = leaf(sub, "client", cmd_client, help="follow the server and serve local DNS")
    _channel_opts(p)
    p.add_argument("--ca-root", required=True)
    p.add_argument("--server-port", type=int, default=443)
    p.add_argument("--listen", default="127.0.0.1:5353")
    p.add_argument("--interval", type=float, default=5.0)
    p.add_argument("--rotation", type=float, default=60.0)
    p.add_argument("--probe-name", default="example.test")
    p.add_argument("--proxy-config", help="also write a dnscrypt-proxy config fragment here")
    p.add_argument("--ticks", type=int, default=None)

    sim = sub.add_parser("sim", help="simulators").add_subparsers(dest="action", required=True)
    p = leaf(sim, "availability", cmd_sim_availability)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--r", type=float, default=60.0)
    p.add_argument("--r-range", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--d", type=float, default=10.0)
    p.add_argument("--poll", type=float, default=5.0)
    p.add_argument("--rate", type=float, default=10.0)
    p.add_argument("--horizon", type=float, default=3600.0)
    for name, func in (("detect", cmd_sim_detect), ("sweep", cmd_sim_sweep)):
        p = leaf(sim, name, func)
        many = name == "sweep"
        p.add_argument("--fpm", type=_floats if many else float, default=[6000.0] if many else 6000.0,
                       help="flows per minute" + (" (comma list)" if many else ""))
        p.add_argument("--tp", type=_floats if many else float, default=[0.001] if many else 0.001,
                       help="processing time per flow, seconds")
        p.add_argument("--nproc", type=_ints if many else int, default=[1] if many else 1)
        p.add_argument("--trot", type=float, default=60.0)
        p.add_argument("--tpr", type=float, default=0.52)
        p.add_argument("--n-flows", type=int, default=20000 if many else 100000)
        if many:
            p.add_argument("--analytic-only", action="store_true")
            p.add_argument("--gnuplot", help="write a gnuplot script for the CSV")
        else:
            p.add_argument("--doh-fraction", type=float, default=0.3)

    an = sub.add_parser("analyze", help="packet-log analytics").add_subparsers(dest="action", required=True)
    for name, func in (("stitch", cmd_analyze_stitch), ("features", cmd_analyze_features),
                       ("clumps", cmd_analyze_clumps), ("durations", cmd_analyze_durations)):
        p = leaf(an, name, func)
        p.add_argument("packets", help="JSONL packet records")
        p.add_argument("--idle-timeout", type=float, default=30.0)
        if name == "clumps":
            p.add_argument("--gap", type=float, default=0.1)

    bench = sub.add_parser("bench", help="latency benchmarking").add_subparsers(dest="action", required=True)
    p = leaf(bench, "dns", cmd_bench_dns)
    p.add_argument("--resolver", action="append", required=True,
                   help="https:// DoH URL or host[:port] for plain DNS (repeatable)")
    p.add_argument("--domain", action="append", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--randomize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--ca-root")
    p.add_argument("--parallel", action="store_true")
    return parser


def _with_config(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise CliError("config", f"cannot read {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise CliError("config", "config file must hold a JSON object")
        args._parser.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _with_config(parser, argv)
    except CliError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        stream=sys.stderr,
        format='{"t":"%(asctime)s","level":"%(levelname)s","logger":"%(name)s","msg":%(message)r}',
    )
    if getattr(args, "name", None) == "ladder" and args.command in ("serve", "client"):
        log.warning("using the default pointer name; pass --name with a shared secret")
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: input: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    return 0


def new_name() -> str:
    return secrets.token_urlsafe(24)


if __name__ == "__main__":
    sys.exit(main())
