"""End-to-end backend comparison: map then group_by_key over Person silos.

Each backend gets its own cluster, since every node in a cluster must use
the same backend. Timing covers only first send to last completed future;
data generation and populating the silos happen before the clock starts.
"""
from __future__ import annotations

import os
import signal
import socket
import statistics
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..combinators import Partitioner, group_by_key, map_silo
from ..errors import ScpError
from ..picklers import Backend
from ..runtime import LocalCluster, NodeConfig, NodeRuntime, start_node
from ..silo import Place
from ..tags import INT64, List
from .people import PERSON, by_decile, decile, gen_people, split

REFERENCE_SPEEDUP = 0.48

HEADER = ("# timing: first send() to last future completion (map + group_by_key + "
          "result transfer); data generation and populate are excluded")


class GateFailure(ScpError):
    """The distributed result differs from the single-process oracle."""


@dataclass
class BenchReport:
    backend: str
    nodes: int
    records: int
    reps: int
    warmup: int
    runs_ms: list[float] = field(default_factory=list)
    gate_passed: bool = False

    @property
    def median_ms(self) -> float:
        return statistics.median(self.runs_ms) if self.runs_ms else float("nan")


def speedup(t_generic: float, t_specialized: float) -> float:
    """Fractional time saved by the specialized backend."""
    return (t_generic - t_specialized) / t_generic


def oracle(people) -> dict[int, list]:
    groups: dict[int, list] = {}
    for p in people:
        groups.setdefault(decile(p), []).append(p)
    return {k: sorted(vs, key=lambda p: p.id) for k, vs in groups.items()}


def check_gate(results: list[list], people, part: Partitioner) -> None:
    """Raise GateFailure unless the grouped outputs match the oracle exactly."""
    seen: dict[int, list] = {}
    for j, groups in enumerate(results):
        for k, vs in groups:
            if k in seen:
                raise GateFailure(f"key {k} appears in more than one output")
            if part(k) != j:
                raise GateFailure(f"key {k} landed in output {j}, partitioner says {part(k)}")
            seen[k] = sorted(vs, key=lambda p: p.id)
    expected = oracle(people)
    if seen != expected:
        missing = sorted(set(expected) ^ set(seen))
        raise GateFailure(f"grouped result differs from oracle (keys differing: {missing or 'values'})")


class Workload:
    """Populated Person silos, one per place, plus the map + group_by_key program."""

    def __init__(self, driver: NodeRuntime, places: list[Place], people):
        self.driver = driver
        self.places = places
        self.people = people
        self.part = Partitioner.hash(len(places), INT64)
        self.spore = by_decile()
        self.sources = [driver.populate(pl, chunk, List(PERSON))
                        for pl, chunk in zip(places, split(people, len(places)))]

    def run(self) -> tuple[float, list[list]]:
        # Fresh lineage every time, so nothing is served from a node's cache.
        mapped = [map_silo(s, self.spore) for s in self.sources]
        outs = group_by_key(mapped, self.part, self.places)
        t0 = time.perf_counter()
        futs = [o.send() for o in outs]
        results = [f.result() for f in futs]
        return (time.perf_counter() - t0) * 1000.0, results


def run_backend(driver: NodeRuntime, places: list[Place], backend: str, records: int, seed: int,
                reps: int, warmup: int, log: Callable[[str], None] = print) -> BenchReport:
    people = gen_people(records, seed)
    w = Workload(driver, places, people)
    report = BenchReport(backend, len(places), records, reps, warmup)
    _, results = w.run()
    check_gate(results, people, w.part)
    report.gate_passed = True
    log(f"gate,{backend},pass")
    for _ in range(warmup):
        w.run()
    for i in range(reps):
        ms, _ = w.run()
        report.runs_ms.append(ms)
        log(f"run,{backend},{i},{ms:.3f}")
    return report


# --- worker processes -------------------------------------------------------

def _free_ports(n: int) -> list[int]:
    socks = []
    try:
        for _ in range(n):
            s = socket.socket()
            s.bind(("127.0.0.1", 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


class WorkerProcesses:
    """``n`` ``node`` subprocesses on localhost, torn down on exit."""

    def __init__(self, n: int, backend: str, batch_size: int, timeout: float):
        self.n = n
        self.backend = backend
        self.batch_size = batch_size
        self.timeout = timeout
        self.procs: list[subprocess.Popen] = []
        self.addresses: dict[int, tuple[str, int]] = {}
        self._tmp = tempfile.TemporaryDirectory(prefix="scp-bench-")

    def __enter__(self) -> "WorkerProcesses":
        ports = _free_ports(self.n)
        self.addresses = {i + 1: ("127.0.0.1", p) for i, p in enumerate(ports)}
        peers = os.path.join(self._tmp.name, "peers.cfg")
        with open(peers, "w") as f:
            for nid, (host, port) in self.addresses.items():
                f.write(f"{nid}={host}:{port}\n")
        try:
            for nid, (host, port) in self.addresses.items():
                cmd = [sys.executable, "-m", "scp", "node", "--id", str(nid),
                       "--listen", f"{host}:{port}", "--peers", peers, "--backend", self.backend,
                       "--batch-size", str(self.batch_size),
                       "--timeout-ms", str(int(self.timeout * 1000))]
                self.procs.append(subprocess.Popen(cmd, stdout=subprocess.PIPE, text=True))
            for p in self.procs:
                self._await_ready(p)
        except BaseException:
            self.__exit__()
            raise
        return self

    def _await_ready(self, p: subprocess.Popen) -> None:
        result = []
        t = threading.Thread(target=lambda: result.append(p.stdout.readline()), daemon=True)
        t.start()
        t.join(30.0)
        if not result or not result[0].startswith("ready"):
            raise RuntimeError(f"worker {p.args[4]} did not start (exit code {p.poll()})")

    def places(self) -> list[Place]:
        return [Place(nid, host, port) for nid, (host, port) in sorted(self.addresses.items())]

    def __exit__(self, *exc) -> None:
        for p in self.procs:
            if p.poll() is None:
                p.send_signal(signal.SIGTERM)
        for p in self.procs:
            try:
                p.wait(10)
            except subprocess.TimeoutExpired:
                p.kill()
                p.wait()
            if p.stdout:
                p.stdout.close()
        self._tmp.cleanup()


def bench(records: int = 100_000, reps: int = 10, warmup: int = 3, seed: int = 7, nodes: int = 4,
          backends=("generic", "specialized"), local: bool = False, batch_size: int = 512,
          timeout: float = 60.0, log: Callable[[str], None] = print) -> list[BenchReport]:
    log(HEADER)
    mode = "loopback, one process" if local else "sockets, one process per node"
    log(f"# nodes={nodes} records={records} reps={reps} warmup={warmup} seed={seed} mode={mode}")
    reports = []
    for backend in backends:
        backend = Backend.parse(backend).value
        if local:
            with LocalCluster(nodes, backend, batch_size=batch_size, timeout=timeout) as c:
                reports.append(run_backend(c.driver, c.places, backend, records, seed, reps, warmup, log))
        else:
            with WorkerProcesses(nodes, backend, batch_size, timeout) as workers:
                cfg = NodeConfig(0, peers=workers.addresses, backend=backend,
                                 batch_size=batch_size, timeout=timeout)
                driver = start_node(cfg)
                try:
                    for nid in workers.addresses:
                        driver.connect(nid)
                    reports.append(run_backend(driver, workers.places(), backend, records, seed,
                                               reps, warmup, log))
                finally:
                    driver.close()
        log(f"median,{backend},{reports[-1].median_ms:.3f}")
    by = {r.backend: r for r in reports}
    if "generic" in by and "specialized" in by:
        s = speedup(by["generic"].median_ms, by["specialized"].median_ms)
        log(f"speedup,{s * 100:.1f}")
        log(f"# specialized vs generic: {s * 100:.1f}% less time "
            f"(reference point with a different baseline serializer: about {REFERENCE_SPEEDUP * 100:.0f}%)")
    return reports


def parse_report(text: str) -> dict:
    """Recover raw runs, gates and medians from the machine-readable lines."""
    runs: dict[str, list[float]] = {}
    gates: dict[str, str] = {}
    medians: dict[str, float] = {}
    speed: Optional[float] = None
    for line in text.splitlines():
        parts = line.strip().split(",")
        if parts[0] == "run" and len(parts) == 4:
            runs.setdefault(parts[1], []).append(float(parts[3]))
        elif parts[0] == "gate" and len(parts) == 3:
            gates[parts[1]] = parts[2]
        elif parts[0] == "median" and len(parts) == 3:
            medians[parts[1]] = float(parts[2])
        elif parts[0] == "speedup" and len(parts) == 2:
            speed = float(parts[1]) / 100.0
    return {"runs": runs, "gates": gates, "medians": medians, "speedup": speed}
