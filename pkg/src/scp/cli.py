"""Command line: ``node`` runs a worker, ``bench`` compares backends, ``gen`` prints people."""
from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from typing import Optional

from . import bench as bench_pkg
from .errors import BindFailure, RegistryMismatch, ScpError
from .runtime import NodeConfig, start_node

DEFAULTS = {"backend": "specialized", "batch_size": 512, "timeout_ms": 30_000}


def read_kv(path: str) -> dict[str, str]:
    """Parse a ``key=value`` file; blank lines and ``#`` comments are skipped."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def parse_address(text: str) -> tuple[str, int]:
    """``host:port``; an empty host (``:7001``) listens on every interface."""
    host, sep, port = text.rpartition(":")
    if not sep:
        raise ValueError(f"address {text!r} needs a port")
    return (host or "0.0.0.0", int(port))


def read_peers(path: str) -> dict[int, tuple[str, int]]:
    return {int(k): parse_address(v) for k, v in read_kv(path).items()}


def _settings(args) -> dict:
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update(read_kv(args.config))
    for key, value in vars(args).items():
        if value is not None and key not in ("cmd", "config", "func"):
            merged[key] = value
    return merged


def cmd_node(args) -> int:
    s = _settings(args)
    if "id" not in s or "listen" not in s:
        print("node: --id and --listen are required (flag or config file)", file=sys.stderr)
        return 2
    peers = read_peers(s["peers"]) if s.get("peers") else {}
    cfg = NodeConfig(int(s["id"]), listen=parse_address(s["listen"]), peers=peers,
                     backend=s["backend"], batch_size=int(s["batch_size"]),
                     timeout=int(s["timeout_ms"]) / 1000.0)
    try:
        rt = start_node(cfg)
    except (BindFailure, RegistryMismatch) as exc:
        print(f"node {cfg.node_id}: {exc}", file=sys.stderr)
        return 1
    stop = threading.Event()
    for sig in (signal.SIGTERM, signal.SIGINT):
        signal.signal(sig, lambda *_: stop.set())
    host, port = rt.transport.address
    print(f"ready {cfg.node_id} {host}:{port}", flush=True)
    while not stop.wait(0.5):
        pass
    rt.close()
    return 0


def cmd_bench(args) -> int:
    s = _settings(args)
    backends = ("generic", "specialized") if s.get("backend_choice", "both") == "both" \
        else (s["backend_choice"],)
    try:
        bench_pkg.bench(records=int(s["records"]), reps=int(s["reps"]), warmup=int(s["warmup"]),
                        seed=int(s["seed"]), nodes=int(s["nodes"]), backends=backends,
                        local=bool(s.get("local")), batch_size=int(s["batch_size"]),
                        timeout=int(s["timeout_ms"]) / 1000.0,
                        log=lambda line: print(line, flush=True))
    except (ScpError, RuntimeError) as exc:
        print(f"bench failed: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_gen(args) -> int:
    print("id,name,age")
    for p in bench_pkg.gen_people(args.records, args.seed):
        print(f"{p.id},{p.name},{p.age}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scp", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log at debug level")
    sub = ap.add_subparsers(dest="cmd", required=True)

    node = sub.add_parser("node", help="run a worker node until SIGTERM")
    node.add_argument("--id", type=int)
    node.add_argument("--listen", help="host:port, or :port for all interfaces")
    node.add_argument("--peers", help="key=value file mapping node id to host:port")
    node.add_argument("--backend", choices=["generic", "specialized"])
    node.add_argument("--batch-size", type=int)
    node.add_argument("--timeout-ms", type=int)
    node.add_argument("--config", help="key=value file with any of the settings above")
    node.set_defaults(func=cmd_node)

    b = sub.add_parser("bench", help="compare serialization backends on map + group_by_key")
    b.add_argument("--records", type=int, default=100_000)
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--seed", type=int, default=7)
    b.add_argument("--nodes", type=int, default=4)
    b.add_argument("--backend", dest="backend_choice", choices=["generic", "specialized", "both"],
                   default="both")
    b.add_argument("--local", action="store_true", default=None,
                   help="run the nodes in this process over loopback")
    b.add_argument("--batch-size", type=int)
    b.add_argument("--timeout-ms", type=int)
    b.add_argument("--config")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen", help="print generated Person records as CSV")
    g.add_argument("--records", type=int, default=10)
    g.add_argument("--seed", type=int, default=42)
    g.set_defaults(func=cmd_gen)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"scp: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
