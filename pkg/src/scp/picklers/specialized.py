"""Monomorphic serializers generated as Python source, one pair per type.

The generated code is positional: no type names, no field names, no kind
bytes. Fixed-width primitives are little-endian and adjacent ones are packed
with a single ``struct`` call; strings and sequences carry a u32 length.
Nested records and containers are inlined rather than called.

Fixed-width fields are handed straight to ``struct``, so they are not
re-checked: a bool passes as an integer and an int as a float. Callers that
take untrusted values check them with ``conforms`` first.
"""
from __future__ import annotations

import struct

from ..errors import DecodeFailure, TypeMismatch
from ..tags import TypeTag, record_schema, render

_FIXED = {"Bool": "?", "Int32": "i", "Int64": "q", "Float64": "d"}


class _Gen:
    def __init__(self):
        self.ns: dict = {"_struct": struct, "_DF": DecodeFailure, "_TM": TypeMismatch}
        self.lines: list[str] = []
        self._n = 0

    def fresh(self, prefix: str) -> str:
        self._n += 1
        return f"{prefix}{self._n}"

    def const(self, prefix: str, value) -> str:
        name = self.fresh(prefix)
        self.ns[name] = value
        return name

    def emit(self, ind: int, line: str) -> None:
        self.lines.append("    " * ind + line)

    # -- encoding: statements append bytes objects through ``w`` -----------

    def flush_enc(self, ind: int, pend: list) -> None:
        if not pend:
            return
        fmt = "<" + "".join(c for c, _ in pend)
        s = self.const("_S", struct.Struct(fmt))
        self.emit(ind, f"w({s}.pack({', '.join(a for _, a in pend)}))")
        pend.clear()

    def enc(self, tag: TypeTag, expr: str, ind: int, pend: list) -> None:
        name = tag.name
        if name in _FIXED:
            pend.append((_FIXED[name], expr))
        elif name == "String":
            var = self.fresh("s")
            self.emit(ind, f"{var} = {expr}.encode('utf-8')")
            pend.append(("I", f"len({var})"))
            self.flush_enc(ind, pend)
            self.emit(ind, f"w({var})")
        elif name == "Option":
            self.flush_enc(ind, pend)
            var = self.fresh("o")
            self.emit(ind, f"{var} = {expr}")
            self.emit(ind, f"if {var} is None:")
            self.emit(ind + 1, "w(b'\\x00')")
            self.emit(ind, "else:")
            inner = [("B", "1")]
            self.enc(tag.params[0], var, ind + 1, inner)
            self.flush_enc(ind + 1, inner)
        elif name == "List":
            var = self.fresh("l")
            self.emit(ind, f"{var} = {expr}")
            self.emit(ind, f"if {var}.__class__ is not list: raise _TM('expected list')")
            pend.append(("I", f"len({var})"))
            self.flush_enc(ind, pend)
            elem = tag.params[0]
            if elem.name in _FIXED:
                self.emit(ind, f"w(_struct.pack('<%d{_FIXED[elem.name]}' % len({var}), *{var}))")
            else:
                x = self.fresh("x")
                self.emit(ind, f"for {x} in {var}:")
                inner: list = []
                self.enc(elem, x, ind + 1, inner)
                self.flush_enc(ind + 1, inner)
        elif name == "Map":
            var = self.fresh("m")
            self.emit(ind, f"{var} = {expr}")
            self.emit(ind, f"if {var}.__class__ is not dict: raise _TM('expected dict')")
            pend.append(("I", f"len({var})"))
            self.flush_enc(ind, pend)
            k, x = self.fresh("k"), self.fresh("x")
            self.emit(ind, f"for {k}, {x} in {var}.items():")
            inner = []
            self.enc(tag.params[0], k, ind + 1, inner)
            self.enc(tag.params[1], x, ind + 1, inner)
            self.flush_enc(ind + 1, inner)
        elif name == "Tuple":
            parts = [self.fresh("t") for _ in tag.params]
            self.emit(ind, f"{', '.join(parts)}, = {expr}")
            for t, p in zip(tag.params, parts):
                self.enc(t, p, ind, pend)
        else:
            schema = record_schema(tag)
            var = self.fresh("r")
            cls = self.const("_C", schema.cls)
            self.emit(ind, f"{var} = {expr}")
            self.emit(ind, f"if {var}.__class__ is not {cls}: raise _TM('expected {schema.name}')")
            for fname, ftag in schema.fields:
                self.enc(ftag, f"{var}.{fname}", ind, pend)

    # -- decoding: statements advance ``o`` over buffer ``b`` of length ``L`` --

    def flush_dec(self, ind: int, pend: list) -> None:
        if not pend:
            return
        fmt = "<" + "".join(c for c, _ in pend)
        s = self.const("_S", struct.Struct(fmt))
        self.emit(ind, f"{', '.join(v for _, v in pend)}, = {s}.unpack_from(b, o)")
        self.emit(ind, f"o += {struct.calcsize(fmt)}")
        pend.clear()

    def dec(self, tag: TypeTag, target: str, ind: int, pend: list) -> None:
        """Emit code leaving the decoded value in *target* once *pend* is flushed."""
        name = tag.name
        if name in _FIXED:
            pend.append((_FIXED[name], target))
        elif name == "String":
            n = self.fresh("n")
            pend.append(("I", n))
            self.flush_dec(ind, pend)
            self.emit(ind, f"e = o + {n}")
            self.emit(ind, "if e > L: raise _DF('string runs past end of buffer')")
            self.emit(ind, f"{target} = b[o:e].decode('utf-8')")
            self.emit(ind, "o = e")
        elif name == "Option":
            self.flush_dec(ind, pend)
            self.emit(ind, "f = b[o]")
            self.emit(ind, "o += 1")
            self.emit(ind, "if f == 0:")
            self.emit(ind + 1, f"{target} = None")
            self.emit(ind, "elif f == 1:")
            inner: list = []
            self.dec(tag.params[0], target, ind + 1, inner)
            self.flush_dec(ind + 1, inner)
            self.emit(ind, "else:")
            self.emit(ind + 1, "raise _DF('bad option flag')")
        elif name in ("List", "Map"):
            n = self.fresh("n")
            pend.append(("I", n))
            self.flush_dec(ind, pend)
            elem = tag.params[0]
            if name == "List" and elem.name in _FIXED:
                c = _FIXED[elem.name]
                size = struct.calcsize("<" + c)
                self.emit(ind, f"if o + {n} * {size} > L: raise _DF('sequence runs past end of buffer')")
                self.emit(ind, f"{target} = list(_struct.unpack_from('<%d{c}' % {n}, b, o))")
                self.emit(ind, f"o += {n} * {size}")
                return
            self.emit(ind, f"if {n} > L - o: raise _DF('sequence count exceeds buffer')")
            acc = self.fresh("a")
            self.emit(ind, f"{acc} = []" if name == "List" else f"{acc} = {{}}")
            self.emit(ind, f"for _ in range({n}):")
            inner = []
            if name == "List":
                x = self.fresh("x")
                self.dec(elem, x, ind + 1, inner)
                self.flush_dec(ind + 1, inner)
                self.emit(ind + 1, f"{acc}.append({x})")
            else:
                k, x = self.fresh("k"), self.fresh("x")
                self.dec(tag.params[0], k, ind + 1, inner)
                self.dec(tag.params[1], x, ind + 1, inner)
                self.flush_dec(ind + 1, inner)
                self.emit(ind + 1, f"{acc}[{k}] = {x}")
            self.emit(ind, f"{target} = {acc}")
        elif name == "Tuple":
            parts = [self.fresh("t") for _ in tag.params]
            for t, p in zip(tag.params, parts):
                self.dec(t, p, ind, pend)
            self.flush_dec(ind, pend)
            self.emit(ind, f"{target} = ({', '.join(parts)},)")
        else:
            schema = record_schema(tag)
            cls = self.const("_C", schema.cls)
            parts = [self.fresh("f") for _ in schema.fields]
            for (_, ftag), p in zip(schema.fields, parts):
                self.dec(ftag, p, ind, pend)
            self.flush_dec(ind, pend)
            self.emit(ind, f"{target} = {cls}({', '.join(parts)})")


def generate_source(tag: TypeTag) -> tuple[str, dict]:
    gen = _Gen()
    gen.emit(0, "def encode(v):")
    gen.emit(1, "buf = []")
    gen.emit(1, "w = buf.append")
    pend: list = []
    gen.enc(tag, "v", 1, pend)
    gen.flush_enc(1, pend)
    gen.emit(1, "return b''.join(buf)")
    gen.emit(0, "")
    gen.emit(0, "def decode_from(b, o):")
    gen.emit(1, "L = len(b)")
    gen.dec(tag, "result", 1, pend)
    gen.flush_dec(1, pend)
    gen.emit(1, "return result, o")
    return "\n".join(gen.lines) + "\n", gen.ns


def make(tag: TypeTag):
    """Compile ``(encode, decode_from)`` for *tag*."""
    source, ns = generate_source(tag)
    code = compile(source, f"<specialized {render(tag)}>", "exec")
    exec(code, ns)
    return ns["encode"], ns["decode_from"]
