"""Frames and protocol messages.

A frame is ``u32 big-endian length | u8 tag | payload`` where length covers
tag and payload. Payloads are positional little-endian structs in the same
style as the specialized pickler: fixed-width integers, u32-length-prefixed
strings and blobs. Spores ride inside as opaque blobs in their own format.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

from ..errors import DecodeFailure, FramingError
from ..silo import Apply, Lineage, Place, PumpTo, SiloId, Source
from ..spore import Spore, pickle_spore, unpickle_spore
from .. import tags

DEFAULT_MAX_FRAME = 64 * 1024 * 1024

HANDSHAKE = 1
SEND_REQUEST = 2
SEND_REPLY = 3
PUMP_TO_REQUEST = 4
EMIT_BATCH = 5
PUMP_DONE = 6
ERROR = 7
EMIT_ACK = 8
POPULATE_REQUEST = 9

TAG_NAMES = {
    HANDSHAKE: "Handshake", SEND_REQUEST: "SendRequest", SEND_REPLY: "SendReply",
    PUMP_TO_REQUEST: "PumpToRequest", EMIT_BATCH: "EmitBatch", PUMP_DONE: "PumpDone",
    ERROR: "Error", EMIT_ACK: "EmitAck", POPULATE_REQUEST: "PopulateRequest",
}

_HEADER = struct.Struct(">IB")


def encode_frame(tag: int, payload: bytes) -> bytes:
    return _HEADER.pack(len(payload) + 1, tag) + payload


class FrameReader:
    """Incremental frame parser; feed it arbitrary chunks of a byte stream."""

    def __init__(self, max_frame: int = DEFAULT_MAX_FRAME):
        self.max_frame = max_frame
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[int, bytes]]:
        self._buf += data
        frames = []
        buf = self._buf
        pos = 0
        while len(buf) - pos >= 4:
            (length,) = struct.unpack_from(">I", buf, pos)
            if length == 0:
                raise FramingError("zero-length frame")
            if length > self.max_frame:
                raise FramingError(f"frame of {length} bytes exceeds limit {self.max_frame}")
            if len(buf) - pos - 4 < length:
                break
            tag = buf[pos + 4]
            frames.append((tag, bytes(buf[pos + 5:pos + 4 + length])))
            pos += 4 + length
        if pos:
            del buf[:pos]
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)


def decode_frame(frame: bytes) -> tuple[int, bytes]:
    if len(frame) < 5:
        raise FramingError("short frame")
    length, tag = _HEADER.unpack_from(frame)
    if length != len(frame) - 4:
        raise FramingError(f"frame header says {length} bytes, have {len(frame) - 4}")
    return tag, frame[5:]


# --- payload primitives -----------------------------------------------------

_I32 = struct.Struct("<i")
_I64 = struct.Struct("<q")
_U32 = struct.Struct("<I")


class Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        self.parts.append(bytes((v,)))
        return self

    def i32(self, v: int) -> "Writer":
        self.parts.append(_I32.pack(v))
        return self

    def i64(self, v: int) -> "Writer":
        self.parts.append(_I64.pack(v))
        return self

    def blob(self, v: bytes) -> "Writer":
        self.parts.append(_U32.pack(len(v)))
        self.parts.append(v)
        return self

    def str(self, v: str) -> "Writer":
        return self.blob(v.encode("utf-8"))

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def _take(self, st: struct.Struct):
        if self.pos + st.size > len(self.buf):
            raise DecodeFailure("truncated payload")
        (v,) = st.unpack_from(self.buf, self.pos)
        self.pos += st.size
        return v

    def u8(self) -> int:
        if self.pos >= len(self.buf):
            raise DecodeFailure("truncated payload")
        v = self.buf[self.pos]
        self.pos += 1
        return v

    def i32(self) -> int:
        return self._take(_I32)

    def i64(self) -> int:
        return self._take(_I64)

    def blob(self) -> bytes:
        n = self._take(_U32)
        end = self.pos + n
        if end > len(self.buf):
            raise DecodeFailure("truncated payload")
        v = self.buf[self.pos:end]
        self.pos = end
        return v

    def str(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeFailure(str(exc)) from exc

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise DecodeFailure(f"{len(self.buf) - self.pos} trailing payload bytes")


# --- lineage ----------------------------------------------------------------

_SOURCE, _APPLY, _PUMP = 0, 1, 2


def write_silo_id(w: Writer, sid: SiloId) -> None:
    w.i32(sid.origin).i64(sid.seq)


def read_silo_id(r: Reader) -> SiloId:
    return SiloId(r.i32(), r.i64())


def write_place(w: Writer, p: Place) -> None:
    w.i32(p.node_id).str(p.host).i32(p.port)


def read_place(r: Reader) -> Place:
    return Place(r.i32(), r.str(), r.i32())


def write_lineage(w: Writer, lin: Lineage) -> None:
    if isinstance(lin, Source):
        w.u8(_SOURCE)
        write_silo_id(w, lin.id)
        write_place(w, lin.place)
        w.str(tags.render(lin.tag))
    elif isinstance(lin, Apply):
        w.u8(_APPLY)
        write_silo_id(w, lin.id)
        write_lineage(w, lin.parent)
        w.blob(pickle_spore(lin.spore))
    elif isinstance(lin, PumpTo):
        w.u8(_PUMP)
        write_silo_id(w, lin.id)
        write_place(w, lin.place)
        write_lineage(w, lin.left)
        write_lineage(w, lin.right)
        w.blob(pickle_spore(lin.fun))
        w.str(lin.builder_id)
        w.str(tags.render(lin.tag))
    else:
        raise TypeError(f"not a lineage node: {lin!r}")


def read_lineage(r: Reader) -> Lineage:
    kind = r.u8()
    sid = read_silo_id(r)
    if kind == _SOURCE:
        return Source(sid, read_place(r), tags.parse(r.str()))
    if kind == _APPLY:
        parent = read_lineage(r)
        return Apply(sid, parent, unpickle_spore(r.blob()))
    if kind == _PUMP:
        place = read_place(r)
        left = read_lineage(r)
        right = read_lineage(r)
        fun = unpickle_spore(r.blob())
        return PumpTo(sid, place, left, right, fun, r.str(), tags.parse(r.str()))
    raise DecodeFailure(f"bad lineage kind {kind}")


# --- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class Handshake:
    node_id: int
    fingerprint: str
    backend: str
    is_reply: bool = False


@dataclass(frozen=True)
class SendRequest:
    request_id: int
    lineage: Lineage


@dataclass(frozen=True)
class SendReply:
    request_id: int
    payload: bytes


@dataclass(frozen=True)
class PopulateRequest:
    request_id: int
    silo_id: SiloId
    tag: tags.TypeTag
    payload: bytes


@dataclass(frozen=True)
class PumpToRequest:
    pump_id: int
    dest_silo: SiloId
    dest_node: int
    source: Lineage
    fun: Spore
    builder_id: str
    role: int


@dataclass(frozen=True)
class EmitBatch:
    pump_id: int
    role: int
    count: int
    elements: bytes  # count x (u32 length | encoded element)


@dataclass(frozen=True)
class EmitAck:
    pump_id: int
    role: int


@dataclass(frozen=True)
class PumpDone:
    pump_id: int
    role: int
    source_node: int


@dataclass(frozen=True)
class Error:
    request_id: int
    origin: int
    kind: str
    text: str


Message = Union[Handshake, SendRequest, SendReply, PopulateRequest, PumpToRequest,
                EmitBatch, EmitAck, PumpDone, Error]


def encode_message(m: Message) -> tuple[int, bytes]:
    w = Writer()
    if isinstance(m, SendRequest):
        w.i64(m.request_id)
        write_lineage(w, m.lineage)
        return SEND_REQUEST, w.getvalue()
    if isinstance(m, SendReply):
        return SEND_REPLY, w.i64(m.request_id).blob(m.payload).getvalue()
    if isinstance(m, EmitBatch):
        return EMIT_BATCH, w.i64(m.pump_id).u8(m.role).i32(m.count).blob(m.elements).getvalue()
    if isinstance(m, EmitAck):
        return EMIT_ACK, w.i64(m.pump_id).u8(m.role).getvalue()
    if isinstance(m, PumpDone):
        return PUMP_DONE, w.i64(m.pump_id).u8(m.role).i32(m.source_node).getvalue()
    if isinstance(m, PumpToRequest):
        w.i64(m.pump_id)
        write_silo_id(w, m.dest_silo)
        w.i32(m.dest_node)
        write_lineage(w, m.source)
        w.blob(pickle_spore(m.fun)).str(m.builder_id).u8(m.role)
        return PUMP_TO_REQUEST, w.getvalue()
    if isinstance(m, PopulateRequest):
        w.i64(m.request_id)
        write_silo_id(w, m.silo_id)
        w.str(tags.render(m.tag)).blob(m.payload)
        return POPULATE_REQUEST, w.getvalue()
    if isinstance(m, Error):
        return ERROR, w.i64(m.request_id).i32(m.origin).str(m.kind).str(m.text).getvalue()
    if isinstance(m, Handshake):
        w.i32(m.node_id).str(m.fingerprint).str(m.backend).u8(1 if m.is_reply else 0)
        return HANDSHAKE, w.getvalue()
    raise TypeError(f"not a message: {m!r}")


def decode_message(tag: int, payload: bytes) -> Message:
    r = Reader(payload)
    if tag == SEND_REQUEST:
        m = SendRequest(r.i64(), read_lineage(r))
    elif tag == SEND_REPLY:
        m = SendReply(r.i64(), r.blob())
    elif tag == EMIT_BATCH:
        m = EmitBatch(r.i64(), r.u8(), r.i32(), r.blob())
    elif tag == EMIT_ACK:
        m = EmitAck(r.i64(), r.u8())
    elif tag == PUMP_DONE:
        m = PumpDone(r.i64(), r.u8(), r.i32())
    elif tag == PUMP_TO_REQUEST:
        pump_id, dest_silo, dest_node = r.i64(), read_silo_id(r), r.i32()
        source = read_lineage(r)
        m = PumpToRequest(pump_id, dest_silo, dest_node, source, unpickle_spore(r.blob()),
                          r.str(), r.u8())
    elif tag == POPULATE_REQUEST:
        m = PopulateRequest(r.i64(), read_silo_id(r), tags.parse(r.str()), r.blob())
    elif tag == ERROR:
        m = Error(r.i64(), r.i32(), r.str(), r.str())
    elif tag == HANDSHAKE:
        m = Handshake(r.i32(), r.str(), r.str(), r.u8() == 1)
    else:
        raise DecodeFailure(f"unknown message tag {tag}")
    r.done()
    return m


def message_frame(m: Message) -> bytes:
    return encode_frame(*encode_message(m))


_ELEM_LEN = struct.Struct("<I")


def pack_elements(encoded: list[bytes]) -> bytes:
    parts = []
    for e in encoded:
        parts.append(_ELEM_LEN.pack(len(e)))
        parts.append(e)
    return b"".join(parts)


def unpack_elements(buf: bytes, count: int, pickler) -> list:
    out = []
    pos = 0
    decode_from = pickler.decode_from
    for _ in range(count):
        if pos + 4 > len(buf):
            raise DecodeFailure("truncated emit batch")
        (n,) = _ELEM_LEN.unpack_from(buf, pos)
        pos += 4
        v, end = decode_from(buf, pos)
        if end != pos + n:
            raise DecodeFailure("emitted element length mismatch")
        out.append(v)
        pos = end
    if pos != len(buf):
        raise DecodeFailure("trailing bytes in emit batch")
    return out
