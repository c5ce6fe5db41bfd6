"""Type tags: a small, closed type universe with a canonical string form.

Tags describe silo contents, spore signatures and pickler targets. They are
compared structurally and travel on the wire as their canonical rendering,
e.g. ``List[Tuple[Int64,bench.Person]]``.
"""
from __future__ import annotations

import dataclasses
import re
import types
import typing
from dataclasses import dataclass
from typing import Annotated, Any, Optional, Union

from .errors import DecodeFailure, UnsupportedType

PRIMITIVES = ("Bool", "Int32", "Int64", "Float64", "String")
CONTAINERS = {"List": 1, "Map": 2, "Option": 1, "Emitter": 1}
# Tuple is variadic; Unit/Any are nullary markers that never carry data.
MARKERS = ("Unit", "Any")
BUILTIN_NAMES = frozenset(PRIMITIVES + MARKERS + tuple(CONTAINERS) + ("Tuple",))

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")


@dataclass(frozen=True)
class TypeTag:
    name: str
    params: tuple = ()

    def __str__(self) -> str:
        return render(self)

    def __repr__(self) -> str:
        return f"TypeTag({render(self)})"

    def __getitem__(self, params) -> "TypeTag":
        if not isinstance(params, tuple):
            params = (params,)
        return TypeTag(self.name, tuple(params))

    @property
    def is_record(self) -> bool:
        return self.name not in BUILTIN_NAMES

    def contains_any(self) -> bool:
        return self.name == "Any" or any(p.contains_any() for p in self.params)


BOOL = TypeTag("Bool")
INT32 = TypeTag("Int32")
INT64 = TypeTag("Int64")
FLOAT64 = TypeTag("Float64")
STRING = TypeTag("String")
UNIT = TypeTag("Unit")
ANY = TypeTag("Any")


def List(elem: TypeTag) -> TypeTag:  # noqa: N802 - reads like the type it builds
    return TypeTag("List", (elem,))


def Map(key: TypeTag, value: TypeTag) -> TypeTag:  # noqa: N802
    return TypeTag("Map", (key, value))


def Option(elem: TypeTag) -> TypeTag:  # noqa: N802
    return TypeTag("Option", (elem,))


def Tuple(*elems: TypeTag) -> TypeTag:  # noqa: N802
    return TypeTag("Tuple", tuple(elems))


def Emitter(elem: TypeTag) -> TypeTag:  # noqa: N802
    return TypeTag("Emitter", (elem,))


def render(tag: TypeTag) -> str:
    if not tag.params:
        return tag.name
    return f"{tag.name}[{','.join(render(p) for p in tag.params)}]"


def parse(text: str) -> TypeTag:
    """Inverse of :func:`render`."""
    tag, pos = _parse_at(text, 0)
    if pos != len(text):
        raise DecodeFailure(f"trailing characters in type tag {text!r}")
    return tag


def _parse_at(text: str, pos: int) -> tuple[TypeTag, int]:
    m = _NAME_RE.match(text, pos)
    if not m:
        raise DecodeFailure(f"bad type tag {text!r} at {pos}")
    name, pos = m.group(0), m.end()
    if pos < len(text) and text[pos] == "[":
        params = []
        pos += 1
        while True:
            p, pos = _parse_at(text, pos)
            params.append(p)
            if pos >= len(text):
                raise DecodeFailure(f"unterminated type tag {text!r}")
            if text[pos] == ",":
                pos += 1
                continue
            if text[pos] == "]":
                return TypeTag(name, tuple(params)), pos + 1
            raise DecodeFailure(f"bad type tag {text!r} at {pos}")
    return TypeTag(name), pos


def matches(pattern: TypeTag, concrete: TypeTag) -> bool:
    """Structural match where ``Any`` in *pattern* matches any subtree."""
    if pattern.name == "Any":
        return True
    if pattern.name != concrete.name or len(pattern.params) != len(concrete.params):
        return False
    return all(matches(p, c) for p, c in zip(pattern.params, concrete.params))


# --- records ---------------------------------------------------------------

@dataclass(frozen=True)
class RecordSchema:
    name: str
    cls: type
    fields: tuple  # ((field_name, TypeTag), ...)

    @property
    def tag(self) -> TypeTag:
        return TypeTag(self.name)


RECORDS: dict[str, RecordSchema] = {}
_RECORDS_BY_CLS: dict[type, RecordSchema] = {}

Int32 = Annotated[int, INT32]
Int64 = Annotated[int, INT64]


def record(name: str):
    """Register a dataclass as a record type under *name*.

    Field annotations are translated with :func:`tag_of`; plain ``int`` maps
    to Int64, use :data:`Int32` for 32-bit fields.
    """

    def wrap(cls):
        if not dataclasses.is_dataclass(cls):
            raise UnsupportedType(f"{cls.__name__} is not a dataclass")
        if not _NAME_RE.fullmatch(name) or name in BUILTIN_NAMES:
            raise UnsupportedType(f"invalid record name {name!r}")
        existing = RECORDS.get(name)
        if existing is not None and existing.cls is not cls:
            raise UnsupportedType(f"record name {name!r} already registered")
        hints = typing.get_type_hints(cls, include_extras=True)
        fields = tuple((f.name, tag_of(hints[f.name])) for f in dataclasses.fields(cls))
        schema = RecordSchema(name, cls, fields)
        RECORDS[name] = schema
        _RECORDS_BY_CLS[cls] = schema
        cls.__type_tag__ = schema.tag
        return cls

    return wrap


def record_schema(tag: TypeTag) -> RecordSchema:
    try:
        return RECORDS[tag.name]
    except KeyError:
        raise UnsupportedType(f"unknown record type {tag.name!r}") from None


def tag_of(hint: Any) -> TypeTag:
    """Translate a Python type hint into a TypeTag."""
    if isinstance(hint, TypeTag):
        return hint
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is Annotated:
        for extra in hint.__metadata__:
            if isinstance(extra, TypeTag):
                return extra
        return tag_of(args[0])
    if hint is bool:
        return BOOL
    if hint is int:
        return INT64
    if hint is float:
        return FLOAT64
    if hint is str:
        return STRING
    if hint is type(None):
        return UNIT
    if origin in (list, typing.List):
        return List(tag_of(args[0]))
    if origin in (dict, typing.Dict):
        return Map(tag_of(args[0]), tag_of(args[1]))
    if origin in (tuple, typing.Tuple):
        if len(args) == 2 and args[1] is Ellipsis:
            raise UnsupportedType("variadic tuples are not supported; use list")
        return Tuple(*(tag_of(a) for a in args))
    if origin is Union or origin is types.UnionType:
        rest = [a for a in args if a is not type(None)]
        if len(rest) == 1 and len(args) == 2:
            return Option(tag_of(rest[0]))
        raise UnsupportedType(f"unions are not supported: {hint!r}")
    if isinstance(hint, type) and hint in _RECORDS_BY_CLS:
        return _RECORDS_BY_CLS[hint].tag
    raise UnsupportedType(f"unsupported type {hint!r}")


def infer_tag(value: Any) -> Optional[TypeTag]:
    """Best-effort tag for a runtime value; None when it cannot be inferred."""
    if isinstance(value, bool):
        return BOOL
    if isinstance(value, int):
        return INT64
    if isinstance(value, float):
        return FLOAT64
    if isinstance(value, str):
        return STRING
    schema = _RECORDS_BY_CLS.get(type(value))
    if schema is not None:
        return schema.tag
    if isinstance(value, tuple) and value:
        elems = [infer_tag(v) for v in value]
        return None if None in elems else Tuple(*elems)
    if isinstance(value, list) and value:
        elem = infer_tag(value[0])
        if elem is None or any(infer_tag(v) != elem for v in value[1:]):
            return None
        return List(elem)
    if isinstance(value, dict) and value:
        pairs = {(infer_tag(k), infer_tag(v)) for k, v in value.items()}
        if len(pairs) != 1:
            return None
        (kt, vt), = pairs
        return None if kt is None or vt is None else Map(kt, vt)
    return None


def check_data_type(tag: TypeTag) -> None:
    """Raise UnsupportedType unless *tag* describes serializable data."""
    name = tag.name
    if name in PRIMITIVES:
        if tag.params:
            raise UnsupportedType(f"{name} takes no parameters")
        return
    if name in ("List", "Map", "Option"):
        if len(tag.params) != CONTAINERS[name]:
            raise UnsupportedType(f"{render(tag)}: wrong number of parameters")
        if name == "Option" and tag.params[0].name == "Option":
            # None cannot tell Some(None) from None.
            raise UnsupportedType(f"nested options are not supported: {render(tag)}")
        for p in tag.params:
            check_data_type(p)
        return
    if name == "Tuple":
        if not tag.params:
            raise UnsupportedType("empty tuple")
        for p in tag.params:
            check_data_type(p)
        return
    if name in ("Unit", "Any", "Emitter"):
        raise UnsupportedType(f"{render(tag)} is not a data type")
    if tag.params:
        raise UnsupportedType(f"record {name} takes no parameters")
    record_schema(tag)


def conforms(tag: TypeTag, value: Any) -> bool:
    """Whether *value* is a valid instance of *tag* (deep check)."""
    name = tag.name
    if name == "Any":
        return True
    if name == "Bool":
        return isinstance(value, bool)
    if name == "Int32":
        return isinstance(value, int) and not isinstance(value, bool) and -(2**31) <= value < 2**31
    if name == "Int64":
        return isinstance(value, int) and not isinstance(value, bool) and -(2**63) <= value < 2**63
    if name == "Float64":
        return isinstance(value, float)
    if name == "String":
        return isinstance(value, str)
    if name == "Unit":
        return value is None
    if name == "List":
        return isinstance(value, list) and all(conforms(tag.params[0], v) for v in value)
    if name == "Map":
        k, v = tag.params
        return isinstance(value, dict) and all(conforms(k, a) and conforms(v, b) for a, b in value.items())
    if name == "Option":
        return value is None or conforms(tag.params[0], value)
    if name == "Tuple":
        return (isinstance(value, tuple) and len(value) == len(tag.params)
                and all(conforms(t, v) for t, v in zip(tag.params, value)))
    if name == "Emitter":
        return hasattr(value, "emit")
    schema = RECORDS.get(name)
    if schema is None or type(value) is not schema.cls:
        return False
    return all(conforms(t, getattr(value, f)) for f, t in schema.fields)


def records_fingerprint_items() -> list[str]:
    return sorted(
        f"{s.name}{{{','.join(f'{f}:{render(t)}' for f, t in s.fields)}}}" for s in RECORDS.values()
    )
