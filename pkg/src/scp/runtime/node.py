"""Worker node: silo store, lineage materialization, pumps and send() futures.

Every node can both host silos and issue requests. A request names the
lineage to materialize; the node that owns its root evaluates applies
locally and, for a pump, asks each source's owner to stream its elements.
The destination owns all pump state; sources just stream and report done.
"""
from __future__ import annotations

import itertools
import logging
import threading
import time
from collections import OrderedDict
from concurrent.futures import Future
from dataclasses import dataclass, field
from typing import Any, Optional

from ..errors import (DecodeFailure, NodeUnreachable, RegistryMismatch, RemoteEvalError,
                      ScpError, TypeMismatch, UnknownSilo)
from ..picklers import Backend, Pickler, pickler_for
from ..registry import DEFAULT, Registry
from ..silo import Apply, Emitter, Lineage, Place, PumpTo, SiloId, SiloRef, Source, pump_elem_tag
from ..tags import TypeTag, conforms, infer_tag, render
from . import wire
from .transport import LoopbackHub, SocketTransport

log = logging.getLogger(__name__)


@dataclass
class NodeConfig:
    node_id: int
    listen: Optional[tuple[str, int]] = None
    peers: dict[int, tuple[str, int]] = field(default_factory=dict)
    backend: Backend = Backend.SPECIALIZED
    batch_size: int = 512
    timeout: float = 30.0
    window: int = 4
    max_frame: int = wire.DEFAULT_MAX_FRAME
    reply_warn_bytes: int = 64 * 1024 * 1024
    # Derived silos kept for reuse; least recently used ones beyond this are
    # dropped and recomputed from lineage if needed again.
    cache_limit: int = 64
    registry: Registry = field(default_factory=lambda: DEFAULT)

    def __post_init__(self):
        self.backend = Backend.parse(self.backend)
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.window < 1:
            raise ValueError("window must be positive")


class SendFuture(Future):
    """Future for a send(); the reply is decoded lazily by the first waiter."""

    def __init__(self, pickler: Optional[Pickler]):
        super().__init__()
        self.pickler = pickler
        self.payload: Optional[bytes] = None
        self._decoded = False
        self._value = None
        self._lock = threading.Lock()

    def result(self, timeout=None):
        raw = super().result(timeout)
        if self.pickler is None:
            return raw
        with self._lock:
            if not self._decoded:
                self._value = self.pickler.decode(raw)
                self._decoded = True
            return self._value


def _remote_error(origin: int, exc: BaseException) -> wire.Error:
    if isinstance(exc, RemoteEvalError):
        return wire.Error(0, exc.origin, exc.kind, exc.message)
    return wire.Error(0, origin, type(exc).__name__, str(exc))


class _Pump:
    __slots__ = ("pump_id", "tag", "builder", "elem_pickler", "sources", "buffers", "done", "future")

    def __init__(self, pump_id, tag, builder, elem_pickler, sources):
        self.pump_id = pump_id
        self.tag = tag
        self.builder = builder
        self.elem_pickler = elem_pickler
        self.sources = sources  # role -> node id
        self.buffers: list[list] = [[] for _ in sources]
        self.done = [False] * len(sources)
        self.future: Future = Future()


class NetEmitter(Emitter):
    """Batches encoded elements to a pump destination, at most ``window`` batches in flight."""

    def __init__(self, rt: "NodeRuntime", dest: int, pump_id: int, role: int, elem_tag: TypeTag):
        self.rt = rt
        self.dest = dest
        self.pump_id = pump_id
        self.role = role
        self.elem_tag = elem_tag
        self.pickler = pickler_for(elem_tag, rt.backend)
        self._encode = self.pickler.encode
        self._buf: list[bytes] = []
        self.batches = 0
        self._window = threading.Semaphore(rt.config.window)
        self.failed: Optional[BaseException] = None

    def emit(self, v, pickler: Optional[Pickler] = None) -> None:
        if pickler is not None:
            self._check_pickler(pickler)
            if pickler.backend is not self.pickler.backend:
                raise TypeMismatch(f"emitting with a {pickler.backend.value} pickler into a "
                                   f"{self.pickler.backend.value} cluster")
        self._buf.append(self._encode(v))
        if len(self._buf) >= self.rt.config.batch_size:
            self.flush()

    def flush(self) -> None:
        if not self._buf:
            return
        if not self._window.acquire(timeout=self.rt.config.timeout):
            raise NodeUnreachable(f"no acknowledgement from node {self.dest} for pump {self.pump_id}")
        if self.failed is not None:
            raise self.failed
        batch = wire.EmitBatch(self.pump_id, self.role, len(self._buf), wire.pack_elements(self._buf))
        self._buf = []
        self.batches += 1
        self.rt._send(self.dest, batch)

    def acked(self) -> None:
        self._window.release()

    def fail(self, exc: BaseException) -> None:
        self.failed = exc
        for _ in range(self.rt.config.window):
            self._window.release()

    def close(self) -> None:
        self.flush()
        self.rt._send(self.dest, wire.PumpDone(self.pump_id, self.role, self.rt.node_id))


class NodeRuntime:
    def __init__(self, config: NodeConfig):
        self.config = config
        self.node_id = config.node_id
        self.registry = config.registry
        self.backend = config.backend
        self.transport = None
        self._ids = itertools.count(1)
        self._silo_seq = itertools.count(1)
        self._lock = threading.RLock()
        self._sources: dict[SiloId, Any] = {}
        self._derived: "OrderedDict[SiloId, Future]" = OrderedDict()
        self._pending: dict[int, tuple[Future, int, float]] = {}
        self._pumps: dict[int, _Pump] = {}
        self._emitters: dict[tuple[int, int, int], NetEmitter] = {}
        self._closed = threading.Event()
        self.counters = {"spore_evals": 0, "pump_elements": 0, "pumps": 0}
        self._reaper = threading.Thread(target=self._reap, daemon=True, name=f"reaper-{self.node_id}")
        self._reaper.start()

    # --- identity / handshake ---------------------------------------------

    @property
    def place(self) -> Place:
        if isinstance(self.transport, SocketTransport) and self.transport.address:
            host, port = self.transport.address
            return Place(self.node_id, host, port)
        return Place(self.node_id)

    def hello(self) -> wire.Handshake:
        return wire.Handshake(self.node_id, self.registry.fingerprint(), self.backend.value)

    def check_hello(self, hs: wire.Handshake) -> None:
        mine = self.registry.fingerprint()
        if hs.fingerprint != mine:
            raise RegistryMismatch(f"node {hs.node_id} has registry {hs.fingerprint}, "
                                   f"node {self.node_id} has {mine}")
        if hs.backend != self.backend.value:
            raise RegistryMismatch(f"node {hs.node_id} uses the {hs.backend} backend, "
                                   f"node {self.node_id} uses {self.backend.value}")

    def connect(self, peer: int) -> None:
        self.transport.connect(peer)

    def live_peers(self) -> set[int]:
        return self.transport.live_peers()

    # --- client side (Context protocol) -----------------------------------

    def next_silo_id(self) -> SiloId:
        return SiloId(self.node_id, next(self._silo_seq))

    def _next_id(self) -> int:
        return next(self._ids)

    def _track(self, dest: int, fut: Future) -> int:
        rid = self._next_id()
        with self._lock:
            self._pending[rid] = (fut, dest, time.monotonic() + self.config.timeout)
        return rid

    def send_lineage(self, lineage: Lineage) -> SendFuture:
        fut = SendFuture(pickler_for(lineage.tag, self.backend))
        dest = lineage.place.node_id
        rid = self._track(dest, fut)
        self._send_or_fail(rid, dest, wire.SendRequest(rid, lineage))
        return fut

    def populate(self, place: Place, data, tag: Optional[TypeTag] = None) -> SiloRef:
        """Store *data* as a new source silo at *place* and return a ref to it."""
        if tag is None:
            tag = infer_tag(data)
            if tag is None:
                raise TypeMismatch(f"cannot infer a type for {type(data).__name__}; pass tag=")
        elif not conforms(tag, data):
            raise TypeMismatch(f"data does not conform to {render(tag)}")
        sid = self.next_silo_id()
        payload = pickler_for(tag, self.backend).encode(data)
        fut = SendFuture(None)
        rid = self._track(place.node_id, fut)
        self._send_or_fail(rid, place.node_id, wire.PopulateRequest(rid, sid, tag, payload))
        fut.result()
        return SiloRef(Source(sid, place, tag), self)

    def ref(self, place: Place, silo_id: SiloId, tag: TypeTag) -> SiloRef:
        """A ref to a source silo that already exists at *place*."""
        return SiloRef(Source(silo_id, place, tag), self)

    def _send_or_fail(self, rid: int, dest: int, msg) -> None:
        try:
            self._send(dest, msg)
        except ScpError as exc:
            self._complete(rid, exc=exc)

    def _complete(self, rid: int, payload=None, exc: Optional[BaseException] = None) -> bool:
        with self._lock:
            entry = self._pending.pop(rid, None)
        if entry is None:
            return False
        fut = entry[0]
        if exc is not None:
            fut.set_exception(exc)
        else:
            if isinstance(fut, SendFuture):
                fut.payload = payload
            fut.set_result(payload)
        return True

    def _reap(self) -> None:
        while not self._closed.wait(0.2):
            now = time.monotonic()
            with self._lock:
                late = [rid for rid, (_, _, deadline) in self._pending.items() if deadline < now]
            for rid in late:
                self._complete(rid, exc=NodeUnreachable(f"request {rid} timed out after "
                                                        f"{self.config.timeout:g}s"))

    # --- transport callbacks ----------------------------------------------

    def _send(self, dest: int, msg) -> None:
        tag, payload = wire.encode_message(msg)
        self.transport.send(dest, tag, payload)

    def on_frame(self, src: int, tag: int, payload: bytes) -> None:
        try:
            msg = wire.decode_message(tag, payload)
        except DecodeFailure:
            log.exception("node %s: undecodable %s frame from node %s",
                          self.node_id, wire.TAG_NAMES.get(tag, tag), src)
            return
        if isinstance(msg, wire.SendReply):
            self._complete(msg.request_id, msg.payload)
        elif isinstance(msg, wire.Error):
            err = RemoteEvalError(msg.origin, msg.kind, msg.text)
            if not self._complete(msg.request_id, exc=err):
                self._fail_pump(msg.request_id, err)
        elif isinstance(msg, wire.EmitBatch):
            self._on_batch(src, msg)
        elif isinstance(msg, wire.EmitAck):
            em = self._emitters.get((src, msg.pump_id, msg.role))
            if em is not None:
                em.acked()
        elif isinstance(msg, wire.PumpDone):
            self._on_pump_done(msg)
        elif isinstance(msg, wire.SendRequest):
            self._spawn(self._serve_send, src, msg)
        elif isinstance(msg, wire.PumpToRequest):
            self._spawn(self._serve_pump_source, src, msg)
        elif isinstance(msg, wire.PopulateRequest):
            self._serve_populate(src, msg)
        else:
            log.warning("node %s: unexpected %s from node %s", self.node_id, type(msg).__name__, src)

    def on_peer_lost(self, peer: int) -> None:
        err = NodeUnreachable(f"lost connection to node {peer}")
        with self._lock:
            rids = [rid for rid, (_, dest, _) in self._pending.items() if dest == peer]
            pumps = [p.pump_id for p in self._pumps.values() if peer in p.sources]
            emitters = [em for key, em in self._emitters.items() if key[0] == peer]
        for rid in rids:
            self._complete(rid, exc=err)
        for pid in pumps:
            self._fail_pump(pid, err)
        for em in emitters:
            em.fail(err)

    def _spawn(self, fn, *args) -> None:
        threading.Thread(target=fn, args=args, daemon=True).start()

    # --- serving ----------------------------------------------------------

    def _reply_error(self, dest: int, rid: int, exc: BaseException) -> None:
        e = _remote_error(self.node_id, exc)
        try:
            self._send(dest, wire.Error(rid, e.origin, e.kind, e.text))
        except ScpError:
            log.warning("node %s: could not report failure of %s to node %s", self.node_id, rid, dest)

    def _serve_populate(self, src: int, m: wire.PopulateRequest) -> None:
        try:
            data = pickler_for(m.tag, self.backend).decode(m.payload)
            with self._lock:
                if m.silo_id in self._sources:
                    raise ValueError(f"silo {m.silo_id} already exists")
                self._sources[m.silo_id] = data
        except Exception as exc:
            self._reply_error(src, m.request_id, exc)
            return
        self._send(src, wire.SendReply(m.request_id, b""))

    def _serve_send(self, src: int, m: wire.SendRequest) -> None:
        try:
            lin = m.lineage
            if lin.place.node_id != self.node_id:
                raise UnknownSilo(f"silo {lin.id} lives on node {lin.place.node_id}, not {self.node_id}")
            data = self.materialize(lin)
            payload = pickler_for(lin.tag, self.backend).encode(data)
            if len(payload) > self.config.reply_warn_bytes:
                log.warning("node %s: reply for silo %s is %d bytes", self.node_id, lin.id, len(payload))
        except Exception as exc:
            self._reply_error(src, m.request_id, exc)
            return
        try:
            self._send(src, wire.SendReply(m.request_id, payload))
        except ScpError as exc:
            log.warning("node %s: reply to node %s failed: %s", self.node_id, src, exc)

    def _serve_pump_source(self, dest: int, m: wire.PumpToRequest) -> None:
        key = (dest, m.pump_id, m.role)
        em = None
        try:
            if m.source.place.node_id != self.node_id:
                raise UnknownSilo(f"silo {m.source.id} lives on node {m.source.place.node_id}")
            em = NetEmitter(self, dest, m.pump_id, m.role, pump_elem_tag(m.fun))
            with self._lock:
                self._emitters[key] = em
            data = self.materialize(m.source)
            fn = m.fun.bound(self.registry)
            n = 0
            for x in data:
                fn((x, em))
                n += 1
            with self._lock:
                self.counters["pump_elements"] += n
            em.close()
        except Exception as exc:
            self._reply_error(dest, m.pump_id, exc)
        finally:
            with self._lock:
                self._emitters.pop(key, None)

    # --- materialization --------------------------------------------------

    def materialize(self, lin: Lineage):
        if isinstance(lin, Source):
            if lin.place.node_id != self.node_id:
                raise UnknownSilo(f"source {lin.id} lives on node {lin.place.node_id}")
            try:
                return self._sources[lin.id]
            except KeyError:
                raise UnknownSilo(f"no silo {lin.id} on node {self.node_id}") from None
        with self._lock:
            fut = self._derived.get(lin.id)
            owner = fut is None
            if owner:
                fut = self._derived[lin.id] = Future()
                self._evict()
            else:
                self._derived.move_to_end(lin.id)
        if not owner:
            return fut.result()
        try:
            if isinstance(lin, Apply):
                parent = self.materialize(lin.parent)
                fn = lin.spore.bound(self.registry)
                with self._lock:
                    self.counters["spore_evals"] += 1
                out = fn(parent)
            elif isinstance(lin, PumpTo):
                out = self._run_pump(lin)
            else:
                raise TypeError(f"not a lineage node: {lin!r}")
        except BaseException as exc:
            with self._lock:
                if self._derived.get(lin.id) is fut:
                    del self._derived[lin.id]
            fut.set_exception(exc)
            raise
        fut.set_result(out)
        return out

    def _evict(self) -> None:
        extra = len(self._derived) - self.config.cache_limit
        if extra <= 0:
            return
        for sid in [sid for sid, f in self._derived.items() if f.done()][:extra]:
            del self._derived[sid]

    def _run_pump(self, lin: PumpTo):
        if lin.place.node_id != self.node_id:
            raise UnknownSilo(f"pump {lin.id} belongs to node {lin.place.node_id}")
        factory = self.registry.builder(lin.builder_id)
        elem = pump_elem_tag(lin.fun)
        pid = self._next_id()
        sources = [lin.left.place.node_id, lin.right.place.node_id]
        pump = _Pump(pid, lin.tag, factory(lin.tag), pickler_for(elem, self.backend), sources)
        with self._lock:
            self._pumps[pid] = pump
            self.counters["pumps"] += 1
        try:
            for role, src in enumerate((lin.left, lin.right)):
                self._send(src.place.node_id, wire.PumpToRequest(
                    pid, lin.id, self.node_id, src, lin.fun, lin.builder_id, role))
        except ScpError as exc:
            self._fail_pump(pid, exc)
        return pump.future.result()

    def _on_batch(self, src: int, m: wire.EmitBatch) -> None:
        pump = self._pumps.get(m.pump_id)
        if pump is not None and m.role < len(pump.buffers):
            try:
                pump.buffers[m.role].extend(wire.unpack_elements(m.elements, m.count, pump.elem_pickler))
            except DecodeFailure as exc:
                self._fail_pump(m.pump_id, exc)
        try:
            self._send(src, wire.EmitAck(m.pump_id, m.role))
        except ScpError:
            pass

    def _on_pump_done(self, m: wire.PumpDone) -> None:
        pump = self._pumps.get(m.pump_id)
        if pump is None or m.role >= len(pump.done):
            return
        pump.done[m.role] = True
        if not all(pump.done):
            return
        with self._lock:
            self._pumps.pop(m.pump_id, None)
        try:
            for buf in pump.buffers:
                pump.builder.add_all(buf)
            result = pump.builder.finish()
        except Exception as exc:
            pump.future.set_exception(exc)
            return
        pump.future.set_result(result)

    def _fail_pump(self, pid: int, exc: BaseException) -> None:
        with self._lock:
            pump = self._pumps.pop(pid, None)
        if pump is not None and not pump.future.done():
            pump.future.set_exception(exc)

    # --- lifecycle --------------------------------------------------------

    def stats(self) -> dict:
        with self._lock:
            out = dict(self.counters)
        out.update(self.transport.stats.snapshot())
        return out

    def close(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        if self.transport is not None:
            self.transport.close()
        with self._lock:
            rids = list(self._pending)
        for rid in rids:
            self._complete(rid, exc=NodeUnreachable("node shut down"))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def start_node(config: NodeConfig, hub: Optional[LoopbackHub] = None) -> NodeRuntime:
    """Start a node on *hub* (in-process) or on TCP sockets."""
    rt = NodeRuntime(config)
    try:
        if hub is not None:
            rt.transport = hub.attach(rt, timeout=config.timeout)
        else:
            rt.transport = SocketTransport(rt, config.listen, config.peers,
                                           timeout=config.timeout, max_frame=config.max_frame)
    except BaseException:
        rt.close()
        raise
    return rt
