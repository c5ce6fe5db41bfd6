"""Type-indexed picklers with two interchangeable backends.

``GENERIC`` models reflective, self-describing serialization; ``SPECIALIZED``
uses code generated once per type. Both are derived on demand and cached, so
``pickler_for`` is cheap after the first call for a tag.
"""
from __future__ import annotations

import enum
import struct
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import DecodeFailure, TypeMismatch, UnsupportedType
from ..tags import RECORDS, TypeTag, check_data_type, parse, render
from . import generic, specialized

_DECODE_ERRORS = (struct.error, IndexError, UnicodeDecodeError, ValueError, TypeError, KeyError, OverflowError)


class Backend(enum.Enum):
    GENERIC = "generic"
    SPECIALIZED = "specialized"

    @classmethod
    def parse(cls, text: "str | Backend") -> "Backend":
        if isinstance(text, Backend):
            return text
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown backend {text!r}; use generic or specialized") from None


@dataclass(frozen=True, eq=False)
class Pickler:
    pickler_id: str
    tag: TypeTag
    backend: Backend
    _encode: Callable[[Any], bytes] = field(repr=False)
    _decode_from: Callable[[Any, int], tuple] = field(repr=False)

    def encode(self, v) -> bytes:
        try:
            return self._encode(v)
        except TypeMismatch:
            raise
        except Exception as exc:
            raise TypeMismatch(f"cannot encode {type(v).__name__} as {render(self.tag)}: {exc}") from exc

    def decode_from(self, buf, off: int = 0):
        """Decode one value starting at *off*; returns ``(value, next_offset)``."""
        try:
            return self._decode_from(buf, off)
        except DecodeFailure:
            raise
        except _DECODE_ERRORS as exc:
            raise DecodeFailure(f"corrupt {render(self.tag)} bytes: {exc}") from exc

    def decode(self, buf):
        if not buf:
            raise DecodeFailure("empty input")
        value, end = self.decode_from(buf, 0)
        if end != len(buf):
            raise DecodeFailure(f"{len(buf) - end} trailing bytes after {render(self.tag)}")
        return value


_MAKERS = {Backend.GENERIC: generic.make, Backend.SPECIALIZED: specialized.make}
_CACHE: dict[tuple[TypeTag, Backend], Pickler] = {}
_LOCK = threading.Lock()


def pickler_id(tag: TypeTag, backend: Backend) -> str:
    return f"{backend.value}:{render(tag)}"


def pickler_for(tag: TypeTag, backend: "Backend | str" = Backend.SPECIALIZED) -> Pickler:
    backend = Backend.parse(backend)
    key = (tag, backend)
    p = _CACHE.get(key)
    if p is not None:
        return p
    check_data_type(tag)
    enc, dec = _MAKERS[backend](tag)
    p = Pickler(pickler_id(tag, backend), tag, backend, enc, dec)
    with _LOCK:
        return _CACHE.setdefault(key, p)


def pickler_by_id(pid: str) -> Pickler:
    backend, sep, text = pid.partition(":")
    if not sep:
        raise DecodeFailure(f"malformed pickler id {pid!r}")
    try:
        return pickler_for(parse(text), Backend.parse(backend))
    except (UnsupportedType, ValueError) as exc:
        raise DecodeFailure(f"unknown pickler {pid!r}: {exc}") from exc


def _closure(tag: TypeTag, seen: dict) -> None:
    if tag in seen:
        return
    check_data_type(tag)
    seen[tag] = None
    for p in tag.params:
        _closure(p, seen)
    if tag.is_record:
        for _, ftag in RECORDS[tag.name].fields:
            _closure(ftag, seen)


def derive_picklers(*tags: TypeTag) -> dict[TypeTag, tuple[Pickler, Pickler]]:
    """Build generic and specialized picklers for every type reachable from *tags*.

    Raises UnsupportedType if anything in the closure is outside the
    supported universe.
    """
    seen: dict = {}
    for tag in tags:
        _closure(tag, seen)
    return {t: (pickler_for(t, Backend.GENERIC), pickler_for(t, Backend.SPECIALIZED)) for t in seen}


def pickle(v, p: Pickler) -> bytes:
    return p.encode(v)


def unpickle(b, p: Pickler):
    return p.decode(b)


__all__ = [
    "Backend", "Pickler", "derive_picklers", "pickle", "pickler_by_id", "pickler_for",
    "pickler_id", "unpickle",
]
