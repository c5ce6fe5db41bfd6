"""Frame transports: instrumented in-process loopback and TCP sockets.

Both deliver whole frames to ``node.on_frame(src, tag, payload)`` in FIFO
order per sending node and never block the caller of ``send`` on the
receiver. The first frame on every channel is a Handshake; channels whose
registries disagree are refused.

The transport talks to its node through a small surface: ``node_id``,
``hello()``, ``check_hello(hs)``, ``on_frame(...)`` and ``on_peer_lost(peer)``.
"""
from __future__ import annotations

import logging
import queue
import socket
import threading
from collections import Counter
from typing import Optional

from ..errors import BindFailure, NodeUnreachable, RegistryMismatch, ScpError
from . import wire

log = logging.getLogger(__name__)

_HELLO_ID = 0


class TransportStats:
    def __init__(self):
        self._lock = threading.Lock()
        self.frames_sent = 0
        self.bytes_sent = 0
        self.frames_received = 0
        self.bytes_received = 0
        self.by_tag: Counter = Counter()
        self.by_link: Counter = Counter()

    def sent(self, src: int, dst: int, tag: int, nbytes: int) -> None:
        name = wire.TAG_NAMES.get(tag, str(tag))
        with self._lock:
            self.frames_sent += 1
            self.bytes_sent += nbytes
            self.by_tag[name] += 1
            self.by_link[(src, dst, name)] += 1

    def received(self, nbytes: int) -> None:
        with self._lock:
            self.frames_received += 1
            self.bytes_received += nbytes

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "frames_sent": self.frames_sent, "bytes_sent": self.bytes_sent,
                "frames_received": self.frames_received, "bytes_received": self.bytes_received,
                "by_tag": Counter(self.by_tag),
            }


class _Handshaking:
    """Hello exchange shared by both transports."""

    def __init__(self, node, timeout: float):
        self.node = node
        self.timeout = timeout
        self.stats = TransportStats()
        self._live: set[int] = set()
        self._hello_waits: dict[int, list] = {}
        self._hs_lock = threading.Lock()

    def live_peers(self) -> set[int]:
        return set(self._live)

    def _hello_frame(self, is_reply: bool) -> bytes:
        hs = self.node.hello()
        if is_reply:
            hs = wire.Handshake(hs.node_id, hs.fingerprint, hs.backend, True)
        return wire.message_frame(hs)

    def _begin_hello(self, peer: int) -> list:
        wait = [threading.Event(), None]
        with self._hs_lock:
            self._hello_waits[peer] = wait
        return wait

    def _await_hello(self, peer: int, wait: list) -> None:
        ok = wait[0].wait(self.timeout)
        with self._hs_lock:
            self._hello_waits.pop(peer, None)
        if not ok:
            raise NodeUnreachable(f"no handshake reply from node {peer}")
        if wait[1] is not None:
            raise wait[1]
        self._live.add(peer)

    def _on_control(self, src: int, tag: int, payload: bytes) -> Optional[bytes]:
        """Handle handshake traffic; returns a frame to send back to *src*, if any."""
        msg = wire.decode_message(tag, payload)
        if isinstance(msg, wire.Handshake):
            try:
                self.node.check_hello(msg)
            except RegistryMismatch as exc:
                if msg.is_reply:
                    self._finish_hello(src, exc)
                    return None
                err = wire.Error(_HELLO_ID, self.node.node_id, "RegistryMismatch", str(exc))
                return wire.message_frame(err)
            if msg.is_reply:
                self._finish_hello(src, None)
                return None
            self._live.add(src)
            return self._hello_frame(is_reply=True)
        if isinstance(msg, wire.Error):
            self._finish_hello(src, RegistryMismatch(msg.text))
        return None

    def _finish_hello(self, src: int, error) -> None:
        with self._hs_lock:
            wait = self._hello_waits.get(src)
        if wait is not None:
            wait[1] = error
            wait[0].set()

    def _is_control(self, src: int, tag: int, payload: bytes) -> bool:
        if tag == wire.HANDSHAKE:
            return True
        if tag == wire.ERROR and src in self._hello_waits:
            return wire.Reader(payload).i64() == _HELLO_ID
        return False


# --- loopback ---------------------------------------------------------------

class LoopbackHub:
    """An in-process network. Counters cover every frame crossing it."""

    def __init__(self, max_frame: int = wire.DEFAULT_MAX_FRAME):
        self.max_frame = max_frame
        self.stats = TransportStats()
        self._endpoints: dict[int, "LoopbackTransport"] = {}
        self._lock = threading.Lock()

    def attach(self, node, timeout: float = 30.0) -> "LoopbackTransport":
        t = LoopbackTransport(self, node, timeout)
        with self._lock:
            if node.node_id in self._endpoints:
                raise BindFailure(f"node id {node.node_id} already attached")
            self._endpoints[node.node_id] = t
        return t

    def node_ids(self) -> list[int]:
        with self._lock:
            return sorted(self._endpoints)

    def _detach(self, node_id: int) -> None:
        with self._lock:
            self._endpoints.pop(node_id, None)

    def _deliver(self, src: int, dst: int, tag: int, frame: bytes) -> None:
        ep = self._endpoints.get(dst)
        if ep is None or ep.closed:
            raise NodeUnreachable(f"node {dst} is not attached")
        if len(frame) - 4 > self.max_frame:
            raise wire.FramingError(f"frame of {len(frame)} bytes exceeds limit")
        self.stats.sent(src, dst, tag, len(frame))
        ep.stats.received(len(frame))
        ep._inbox.put((src, frame))


class LoopbackTransport(_Handshaking):
    def __init__(self, hub: LoopbackHub, node, timeout: float):
        super().__init__(node, timeout)
        self.hub = hub
        self.closed = False
        self._inbox: queue.SimpleQueue = queue.SimpleQueue()
        self._connect_lock = threading.Lock()
        self._thread = threading.Thread(target=self._dispatch, daemon=True,
                                        name=f"loopback-{node.node_id}")
        self._thread.start()

    def connect(self, peer: int) -> None:
        if peer == self.node.node_id or peer in self._live:
            return
        with self._connect_lock:
            if peer in self._live:
                return
            wait = self._begin_hello(peer)
            try:
                self._raw_send(peer, wire.HANDSHAKE, self._hello_frame(is_reply=False))
            except NodeUnreachable:
                self._hello_waits.pop(peer, None)
                raise
            self._await_hello(peer, wait)

    def send(self, dest: int, tag: int, payload: bytes) -> None:
        if self.closed:
            raise NodeUnreachable("transport closed")
        if dest not in self._live and dest != self.node.node_id:
            self.connect(dest)
        self._raw_send(dest, tag, wire.encode_frame(tag, payload))

    def _raw_send(self, dest: int, tag: int, frame: bytes) -> None:
        self.stats.sent(self.node.node_id, dest, tag, len(frame))
        self.hub._deliver(self.node.node_id, dest, tag, frame)

    def _dispatch(self) -> None:
        while True:
            item = self._inbox.get()
            if item is None:
                return
            src, frame = item
            try:
                tag, payload = wire.decode_frame(frame)
                if self._is_control(src, tag, payload):
                    reply = self._on_control(src, tag, payload)
                    if reply is not None:
                        self._raw_send(src, reply[4], reply)
                else:
                    self.node.on_frame(src, tag, payload)
            except Exception:
                log.exception("node %s: failed to handle frame from %s", self.node.node_id, src)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.hub._detach(self.node.node_id)
        self._inbox.put(None)


# --- sockets ----------------------------------------------------------------

class _Conn:
    def __init__(self, transport: "SocketTransport", sock: socket.socket, peer: Optional[int]):
        self.t = transport
        self.sock = sock
        self.peer = peer
        self.closed = False
        self._out: queue.SimpleQueue = queue.SimpleQueue()
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._writer = threading.Thread(target=self._write_loop, daemon=True)
        self._reader = threading.Thread(target=self._read_loop, daemon=True)

    def start(self) -> None:
        self._writer.start()
        self._reader.start()

    def write(self, frame: bytes) -> None:
        if self.closed:
            raise NodeUnreachable(f"connection to node {self.peer} is closed")
        self._out.put(frame)

    def _write_loop(self) -> None:
        try:
            while True:
                frame = self._out.get()
                if frame is None:
                    break
                self.sock.sendall(frame)
        except OSError:
            pass
        finally:
            self.close()

    def _read_loop(self) -> None:
        reader = wire.FrameReader(self.t.max_frame)
        try:
            while True:
                data = self.sock.recv(1 << 18)
                if not data:
                    break
                for tag, payload in reader.feed(data):
                    self.t.stats.received(len(payload) + 5)
                    self.t._on_conn_frame(self, tag, payload)
                    if self.closed:
                        return
        except (OSError, ScpError) as exc:
            if not self.closed:
                log.debug("connection to node %s dropped: %s", self.peer, exc)
        finally:
            self.close()

    def close(self, flush: bool = False) -> None:
        if self.closed:
            return
        self.closed = True
        if flush:
            self._out.put(None)
            self._writer.join(timeout=1.0)
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self._out.put(None)
        self.t._on_conn_closed(self)


class SocketTransport(_Handshaking):
    def __init__(self, node, listen: Optional[tuple[str, int]] = None,
                 peers: Optional[dict[int, tuple[str, int]]] = None,
                 timeout: float = 30.0, max_frame: int = wire.DEFAULT_MAX_FRAME):
        super().__init__(node, timeout)
        self.max_frame = max_frame
        self.peers = dict(peers or {})
        self.closed = False
        self._conns: dict[int, _Conn] = {}
        self._all: set[_Conn] = set()
        self._lock = threading.Lock()
        self._connect_locks: dict[int, threading.Lock] = {}
        self._local: queue.SimpleQueue = queue.SimpleQueue()
        self._server: Optional[socket.socket] = None
        self.address: Optional[tuple[str, int]] = None
        if listen is not None:
            srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                srv.bind(listen)
            except OSError as exc:
                srv.close()
                raise BindFailure(f"cannot bind {listen[0]}:{listen[1]}: {exc}") from exc
            srv.listen(64)
            self._server = srv
            self.address = srv.getsockname()[:2]
            threading.Thread(target=self._accept_loop, daemon=True, name="accept").start()
        threading.Thread(target=self._local_loop, daemon=True, name="self-deliver").start()

    def add_peer(self, node_id: int, address: tuple[str, int]) -> None:
        self.peers[node_id] = address

    def _accept_loop(self) -> None:
        while not self.closed:
            try:
                sock, _ = self._server.accept()
            except OSError:
                return
            conn = _Conn(self, sock, None)
            with self._lock:
                self._all.add(conn)
            conn.start()

    def _local_loop(self) -> None:
        while True:
            item = self._local.get()
            if item is None:
                return
            tag, payload = item
            try:
                self.node.on_frame(self.node.node_id, tag, payload)
            except Exception:
                log.exception("node %s: failed to handle local frame", self.node.node_id)

    def connect(self, peer: int) -> None:
        if peer == self.node.node_id or peer in self._conns:
            return
        lock = self._connect_locks.setdefault(peer, threading.Lock())
        with lock:
            if peer in self._conns:
                return
            addr = self.peers.get(peer)
            if addr is None:
                raise NodeUnreachable(f"no address for node {peer}")
            try:
                sock = socket.create_connection(addr, timeout=min(self.timeout, 10.0))
                sock.settimeout(None)
            except OSError as exc:
                raise NodeUnreachable(f"cannot reach node {peer} at {addr[0]}:{addr[1]}: {exc}") from exc
            conn = _Conn(self, sock, peer)
            with self._lock:
                self._all.add(conn)
            wait = self._begin_hello(peer)
            conn.start()
            conn.write(self._hello_frame(is_reply=False))
            try:
                self._await_hello(peer, wait)
            except ScpError:
                conn.close()
                raise
            with self._lock:
                self._conns.setdefault(peer, conn)

    def send(self, dest: int, tag: int, payload: bytes) -> None:
        if self.closed:
            raise NodeUnreachable("transport closed")
        me = self.node.node_id
        if dest == me:
            self.stats.sent(me, me, tag, len(payload) + 5)
            self._local.put((tag, payload))
            return
        conn = self._conns.get(dest)
        if conn is None:
            self.connect(dest)
            conn = self._conns[dest]
        frame = wire.encode_frame(tag, payload)
        self.stats.sent(me, dest, tag, len(frame))
        conn.write(frame)

    def _on_conn_frame(self, conn: _Conn, tag: int, payload: bytes) -> None:
        if conn.peer is None:
            # Accepted connection: the first frame must be the peer's hello.
            if tag != wire.HANDSHAKE:
                conn.close()
                return
            hs = wire.decode_message(tag, payload)
            reply = self._on_control(hs.node_id, tag, payload)
            conn.peer = hs.node_id
            if reply is not None:
                conn.write(reply)
            if reply is None or reply[4] == wire.ERROR:
                conn.close(flush=True)
                return
            with self._lock:
                self._conns.setdefault(hs.node_id, conn)
            return
        if self._is_control(conn.peer, tag, payload):
            reply = self._on_control(conn.peer, tag, payload)
            if reply is not None:
                conn.write(reply)
            return
        try:
            self.node.on_frame(conn.peer, tag, payload)
        except Exception:
            log.exception("node %s: failed to handle frame from %s", self.node.node_id, conn.peer)

    def _on_conn_closed(self, conn: _Conn) -> None:
        with self._lock:
            self._all.discard(conn)
            lost = conn.peer is not None and self._conns.get(conn.peer) is conn
            if lost:
                del self._conns[conn.peer]
        if lost:
            self._live.discard(conn.peer)
            if not self.closed:
                self.node.on_peer_lost(conn.peer)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        if self._server is not None:
            try:
                self._server.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._server.close()
        with self._lock:
            conns = list(self._all)
        for c in conns:
            c.close(flush=True)
        self._local.put(None)
