"""Spores: closures whose environment is declared up front and serialized.

A spore is a registered body id plus a header of named, already-encoded
values. The body sees only its argument and the header values (as a tuple
in declaration order), so nothing can be captured by accident. Header
values are encoded when the spore is built; a value without a pickler is
rejected right there, never on a remote node.

Higher-order bodies ("lifters") wrap other spores. Composition is one of
them: ``compose(f, g)`` runs ``g`` then ``f`` and captures exactly what the
two of them capture, ``g``'s values first.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Optional, Sequence

from . import tags
from .errors import DecodeFailure, TypeMismatch, UnencodableCapture, UnknownBodyId, UnsupportedType
from .picklers import Backend, Pickler, pickler_by_id, pickler_for
from .registry import BODY_ID_RE, DEFAULT, Registry
from .tags import TypeTag, conforms, infer_tag, matches, render


class EnvEntry(NamedTuple):
    name: str
    pickler_id: str
    data: bytes


@dataclass(frozen=True)
class Spore:
    body_id: str
    env: tuple  # of EnvEntry
    captured: tuple  # of TypeTag, parallel to env
    input: TypeTag
    output: TypeTag
    # Reserved; always empty.
    excluded: tuple = ()
    _values: Optional[tuple] = field(default=None, compare=False, repr=False)
    _bound: Any = field(default=None, compare=False, repr=False)

    @property
    def values(self) -> tuple:
        """Decoded header values, in declaration order."""
        if self._values is None:
            vals = tuple(pickler_by_id(e.pickler_id).decode(e.data) for e in self.env)
            object.__setattr__(self, "_values", vals)
        return self._values

    def bound(self, registry: Optional[Registry] = None):
        """The executable single-argument callable for this spore."""
        registry = registry or DEFAULT
        cached = self._bound
        if cached is not None and cached[0] is registry:
            return cached[1]
        fn = _bind(parse_body_id(self.body_id), self.values, registry)
        object.__setattr__(self, "_bound", (registry, fn))
        return fn

    def __call__(self, x):
        return eval_spore(self, x)

    def compose(self, other: "Spore") -> "Spore":
        return compose(self, other)

    def and_then(self, other: "Spore") -> "Spore":
        return compose(other, self)


# --- body ids ---------------------------------------------------------------
# leaf:   name
# lifted: name(count:child,count:child,...)   count = env entries of that child

def lifted_body_id(name: str, inners: Sequence[Spore]) -> str:
    return f"{name}({','.join(f'{len(s.env)}:{s.body_id}' for s in inners)})"


def parse_body_id(body_id: str):
    node, pos = _parse_node(body_id, 0)
    if pos != len(body_id):
        raise DecodeFailure(f"malformed body id {body_id!r}")
    return node


def _parse_node(text: str, pos: int):
    m = BODY_ID_RE.match(text, pos)
    if not m:
        raise DecodeFailure(f"malformed body id {text!r} at {pos}")
    name, pos = m.group(0), m.end()
    if pos >= len(text) or text[pos] != "(":
        return (name, None), pos
    pos += 1
    children = []
    while True:
        colon = text.find(":", pos)
        if colon < 0 or not text[pos:colon].isdigit():
            raise DecodeFailure(f"malformed body id {text!r} at {pos}")
        count = int(text[pos:colon])
        child, pos = _parse_node(text, colon + 1)
        children.append((count, child))
        if pos >= len(text):
            raise DecodeFailure(f"unterminated body id {text!r}")
        if text[pos] == ",":
            pos += 1
        elif text[pos] == ")":
            return (name, tuple(children)), pos + 1
        else:
            raise DecodeFailure(f"malformed body id {text!r} at {pos}")


def _bind(node, env: tuple, registry: Registry):
    name, children = node
    if children is None:
        fn = registry.body(name).fn
        return lambda x: fn(env, x)
    lifter = registry.lifter(name)
    inners = []
    pos = 0
    for count, child in children:
        if pos + count > len(env):
            raise DecodeFailure(f"environment too short for lifted body {name}")
        inners.append(_bind(child, env[pos:pos + count], registry))
        pos += count
    return lifter.factory(env[pos:], *inners)


# --- construction -----------------------------------------------------------

def _encode_header(header: Iterable) -> tuple[tuple, tuple]:
    env, captured = [], []
    for item in header:
        if len(item) == 2:
            (name, value), how = item, None
        else:
            name, value, how = item
        if isinstance(how, Pickler):
            pickler = how
        else:
            tag = how if how is not None else infer_tag(value)
            if tag is None:
                raise UnencodableCapture(
                    f"cannot capture {name!r}: no pickler for {type(value).__name__}")
            try:
                pickler = pickler_for(tags.tag_of(tag), Backend.SPECIALIZED)
            except UnsupportedType as exc:
                raise UnencodableCapture(f"cannot capture {name!r}: {exc}") from exc
        try:
            data = pickler.encode(value)
            # Compare bytes, not values: NaN captures are legitimate.
            if pickler.encode(pickler.decode(data)) != data:
                raise UnencodableCapture(f"capture {name!r} does not round-trip")
        except (TypeMismatch, DecodeFailure) as exc:
            raise UnencodableCapture(f"cannot capture {name!r}: {exc}") from exc
        env.append(EnvEntry(name, pickler.pickler_id, data))
        captured.append(pickler.tag)
    return tuple(env), tuple(captured)


def _resolve_io(pattern_in, pattern_out, input, output, what: str):
    if input is None:
        input = pattern_in
    elif not matches(pattern_in, input):
        raise TypeMismatch(f"{what}: input {render(input)} does not fit {render(pattern_in)}")
    if output is None:
        output = pattern_out
    elif not matches(pattern_out, output):
        raise TypeMismatch(f"{what}: output {render(output)} does not fit {render(pattern_out)}")
    if input.contains_any() or output.contains_any():
        raise TypeMismatch(f"{what}: give concrete input/output types, have "
                           f"{render(input)} -> {render(output)}")
    return input, output


def make_spore(header: Iterable, body_id: str, *, input: Optional[TypeTag] = None,
               output: Optional[TypeTag] = None, registry: Optional[Registry] = None) -> Spore:
    """Build a spore from header bindings and a registered body.

    *header* items are ``(name, value)`` or ``(name, value, tag_or_pickler)``;
    without a tag the value's type is inferred. Bodies registered with ``Any``
    in their signature need explicit *input*/*output*.
    """
    registry = registry or DEFAULT
    entry = registry.body(body_id)
    env, captured = _encode_header(header)
    input, output = _resolve_io(entry.arg, entry.res, input, output, body_id)
    return Spore(body_id, env, captured, input, output)


def lift(name: str, inners: Sequence[Spore], header: Iterable = (), *,
         input: Optional[TypeTag] = None, output: Optional[TypeTag] = None,
         registry: Optional[Registry] = None) -> Spore:
    """Wrap *inners* with the registered lifter *name*."""
    registry = registry or DEFAULT
    lifter = registry.lifter(name)
    pat_in, pat_out = lifter.sig(*inners)
    own_env, own_captured = _encode_header(header)
    input, output = _resolve_io(pat_in, pat_out, input, output, name)
    env = sum((s.env for s in inners), ()) + own_env
    captured = sum((s.captured for s in inners), ()) + own_captured
    return Spore(lifted_body_id(name, inners), env, captured, input, output)


def eval_spore(s: Spore, x, registry: Optional[Registry] = None):
    if not conforms(s.input, x):
        raise TypeMismatch(f"argument does not conform to {render(s.input)}")
    return s.bound(registry)(x)


def _compose_sig(g: Spore, f: Spore):
    if g.output != f.input:
        raise TypeMismatch(f"cannot compose: {render(g.output)} is not {render(f.input)}")
    return g.input, f.output


def compose(s1: Spore, s2: Spore, registry: Optional[Registry] = None) -> Spore:
    """``s1 ∘ s2``: apply *s2*, then *s1*."""
    return lift("compose", [s2, s1], registry=registry)


def register_builtin_lifters(registry: Registry) -> None:
    registry.register_lifter("compose", lambda own, g, f: lambda x: f(g(x)), _compose_sig)


register_builtin_lifters(DEFAULT)


# --- wire encoding (32-bit big-endian length prefixes) --------------------

_U32 = struct.Struct(">I")


def _put(out: bytearray, raw: bytes) -> None:
    out += _U32.pack(len(raw))
    out += raw


def pickle_spore(s: Spore) -> bytes:
    out = bytearray()
    _put(out, s.body_id.encode("utf-8"))
    out += _U32.pack(len(s.env))
    for e in s.env:
        _put(out, e.name.encode("utf-8"))
        _put(out, e.pickler_id.encode("utf-8"))
        _put(out, e.data)
    out += _U32.pack(len(s.captured))
    for t in s.captured:
        _put(out, render(t).encode("utf-8"))
    _put(out, render(s.input).encode("utf-8"))
    _put(out, render(s.output).encode("utf-8"))
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def u32(self) -> int:
        if self.pos + 4 > len(self.buf):
            raise DecodeFailure("truncated spore")
        (n,) = _U32.unpack_from(self.buf, self.pos)
        self.pos += 4
        return n

    def blob(self) -> bytes:
        n = self.u32()
        end = self.pos + n
        if end > len(self.buf):
            raise DecodeFailure("truncated spore")
        raw = bytes(self.buf[self.pos:end])
        self.pos = end
        return raw

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeFailure(f"bad utf-8 in spore: {exc}") from exc


def unpickle_spore(buf: bytes) -> Spore:
    r = _Reader(buf)
    body_id = r.text()
    parse_body_id(body_id)
    env = tuple(EnvEntry(r.text(), r.text(), r.blob()) for _ in range(r.u32()))
    captured = tuple(tags.parse(r.text()) for _ in range(r.u32()))
    input, output = tags.parse(r.text()), tags.parse(r.text())
    if r.pos != len(buf):
        raise DecodeFailure("trailing bytes after spore")
    if len(env) != len(captured):
        raise DecodeFailure("spore environment and captured descriptor differ in length")
    for e, t in zip(env, captured):
        if pickler_by_id(e.pickler_id).tag != t:
            raise DecodeFailure(f"capture {e.name!r} pickler does not match {render(t)}")
    s = Spore(body_id, env, captured, input, output)
    s.values  # decode now so corrupt environments fail here
    return s


__all__ = [
    "EnvEntry", "Spore", "UnknownBodyId", "compose", "eval_spore", "lift", "make_spore",
    "parse_body_id", "pickle_spore", "unpickle_spore",
]
