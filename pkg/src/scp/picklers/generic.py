"""Self-describing serialization driven by runtime reflection.

Every value carries a kind byte; records carry their type name and each
field's name. A top-level header holds the canonical type name so that
bytes fed to the wrong pickler are detected. All integers are big-endian.
"""
from __future__ import annotations

import struct

from ..errors import DecodeFailure, PicklerMismatch, TypeMismatch, UnsupportedType
from ..tags import RECORDS, TypeTag, render

MAGIC = b"G"

_U32 = struct.Struct(">I")
_I32 = struct.Struct(">i")
_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")

_KIND = {
    "Bool": b"Z", "Int32": b"I", "Int64": b"J", "Float64": b"D", "String": b"S",
    "List": b"L", "Map": b"M", "Tuple": b"T", "Record": b"R",
}
_NONE, _SOME = b"N", b"O"


def _put_str(out: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    out += _U32.pack(len(raw))
    out += raw


def _get_str(buf, off: int) -> tuple[str, int]:
    (n,) = _U32.unpack_from(buf, off)
    off += 4
    end = off + n
    if end > len(buf):
        raise DecodeFailure("string runs past end of buffer")
    return bytes(buf[off:end]).decode("utf-8"), end


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def encode_value(tag: TypeTag, v, out: bytearray) -> None:
    name = tag.name
    if name == "Bool":
        if not isinstance(v, bool):
            raise TypeMismatch(f"expected Bool, got {type(v).__name__}")
        out += b"Z\x01" if v else b"Z\x00"
    elif name == "Int32":
        if not _is_int(v) or not -(2**31) <= v < 2**31:
            raise TypeMismatch(f"expected Int32, got {v!r}")
        out += b"I"
        out += _I32.pack(v)
    elif name == "Int64":
        if not _is_int(v) or not -(2**63) <= v < 2**63:
            raise TypeMismatch(f"expected Int64, got {v!r}")
        out += b"J"
        out += _I64.pack(v)
    elif name == "Float64":
        if not isinstance(v, float):
            raise TypeMismatch(f"expected Float64, got {type(v).__name__}")
        out += b"D"
        out += _F64.pack(v)
    elif name == "String":
        if not isinstance(v, str):
            raise TypeMismatch(f"expected String, got {type(v).__name__}")
        out += b"S"
        _put_str(out, v)
    elif name == "Option":
        if v is None:
            out += _NONE
        else:
            out += _SOME
            encode_value(tag.params[0], v, out)
    elif name == "List":
        if not isinstance(v, list):
            raise TypeMismatch(f"expected list, got {type(v).__name__}")
        out += b"L"
        out += _U32.pack(len(v))
        elem = tag.params[0]
        for x in v:
            encode_value(elem, x, out)
    elif name == "Map":
        if not isinstance(v, dict):
            raise TypeMismatch(f"expected dict, got {type(v).__name__}")
        out += b"M"
        out += _U32.pack(len(v))
        kt, vt = tag.params
        for k, x in v.items():
            encode_value(kt, k, out)
            encode_value(vt, x, out)
    elif name == "Tuple":
        if not isinstance(v, tuple) or len(v) != len(tag.params):
            raise TypeMismatch(f"expected {render(tag)}, got {v!r}")
        out += b"T"
        out += _U32.pack(len(v))
        for t, x in zip(tag.params, v):
            encode_value(t, x, out)
    else:
        schema = RECORDS.get(name)
        if schema is None:
            raise UnsupportedType(f"no record type {name!r}")
        if type(v) is not schema.cls:
            raise TypeMismatch(f"expected {name}, got {type(v).__name__}")
        out += b"R"
        _put_str(out, name)
        out += _U32.pack(len(schema.fields))
        for fname, ftag in schema.fields:
            _put_str(out, fname)
            encode_value(ftag, getattr(v, fname), out)


def decode_value(tag: TypeTag, buf, off: int):
    kind = buf[off:off + 1]
    if not kind:
        raise DecodeFailure("unexpected end of buffer")
    off += 1
    name = tag.name
    if name == "Option":
        if kind == _NONE:
            return None, off
        if kind != _SOME:
            raise DecodeFailure(f"bad option marker {kind!r}")
        return decode_value(tag.params[0], buf, off)
    expected = _KIND.get(name, b"R")
    if kind != expected:
        raise DecodeFailure(f"expected kind {expected!r} for {render(tag)}, found {kind!r}")
    if name == "Bool":
        flag = buf[off]
        if flag > 1:
            raise DecodeFailure("bad bool byte")
        return flag == 1, off + 1
    if name == "Int32":
        return _I32.unpack_from(buf, off)[0], off + 4
    if name == "Int64":
        return _I64.unpack_from(buf, off)[0], off + 8
    if name == "Float64":
        return _F64.unpack_from(buf, off)[0], off + 8
    if name == "String":
        return _get_str(buf, off)
    if name == "List":
        (n,) = _U32.unpack_from(buf, off)
        off += 4
        elem = tag.params[0]
        out = []
        for _ in range(n):
            x, off = decode_value(elem, buf, off)
            out.append(x)
        return out, off
    if name == "Map":
        (n,) = _U32.unpack_from(buf, off)
        off += 4
        kt, vt = tag.params
        out = {}
        for _ in range(n):
            k, off = decode_value(kt, buf, off)
            out[k], off = decode_value(vt, buf, off)
        return out, off
    if name == "Tuple":
        (n,) = _U32.unpack_from(buf, off)
        off += 4
        if n != len(tag.params):
            raise DecodeFailure(f"tuple arity {n} but {render(tag)} expected")
        items = []
        for t in tag.params:
            x, off = decode_value(t, buf, off)
            items.append(x)
        return tuple(items), off
    embedded, off = _get_str(buf, off)
    if embedded != name:
        raise PicklerMismatch(f"bytes hold record {embedded!r}, pickler expects {name!r}")
    schema = RECORDS[name]
    (n,) = _U32.unpack_from(buf, off)
    off += 4
    ftags = dict(schema.fields)
    if n != len(ftags):
        raise DecodeFailure(f"record {name} has {len(ftags)} fields, bytes carry {n}")
    kwargs = {}
    for _ in range(n):
        fname, off = _get_str(buf, off)
        ftag = ftags.get(fname)
        if ftag is None:
            raise PicklerMismatch(f"record {name} has no field {fname!r}")
        kwargs[fname], off = decode_value(ftag, buf, off)
    return schema.cls(**kwargs), off


def make(tag: TypeTag):
    """Return ``(encode, decode_from)`` closures for *tag*."""
    header = bytearray(MAGIC)
    _put_str(header, render(tag))
    header = bytes(header)
    hlen = len(header)

    def encode(v) -> bytes:
        out = bytearray(header)
        encode_value(tag, v, out)
        return bytes(out)

    def decode_from(buf, off: int):
        if buf[off:off + hlen] != header:
            if buf[off:off + 1] != MAGIC:
                raise DecodeFailure("missing generic header")
            embedded, _ = _get_str(buf, off + 1)
            raise PicklerMismatch(f"bytes hold {embedded!r}, pickler expects {render(tag)!r}")
        return decode_value(tag, buf, off + hlen)

    return encode, decode_from
