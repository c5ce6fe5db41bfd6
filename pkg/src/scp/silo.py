"""Silos, SiloRefs and the lineage they carry.

A SiloRef is a handle to a silo that may not exist yet. ``apply`` and
``pump_to`` only build lineage; nothing is sent until ``send``. The
lineage tree is what ships to the owning node, which materializes it.

:func:`evaluate` interprets a lineage in-process without any runtime and
is the oracle the distributed path is tested against.
"""
from __future__ import annotations

from concurrent.futures import Future
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Protocol, Union

from .errors import TypeMismatch, UnknownSilo
from .picklers import Pickler
from .registry import DEFAULT, BuilderFactory, Registry
from .spore import Spore
from .tags import UNIT, TypeTag, render
from . import tags


@dataclass(frozen=True, order=True)
class SiloId:
    origin: int
    seq: int

    def __str__(self) -> str:
        return f"{self.origin}.{self.seq}"


@dataclass(frozen=True)
class Place:
    node_id: int
    host: str = "loopback"
    port: int = 0

    def __str__(self) -> str:
        return f"node {self.node_id} ({self.host}:{self.port})"


@dataclass(frozen=True)
class Silo:
    id: SiloId
    data: Any
    tag: TypeTag


# --- lineage ----------------------------------------------------------------

@dataclass(frozen=True)
class Source:
    id: SiloId
    place: Place
    tag: TypeTag


@dataclass(frozen=True)
class Apply:
    id: SiloId
    parent: "Lineage"
    spore: Spore

    @property
    def place(self) -> Place:
        return self.parent.place

    @property
    def tag(self) -> TypeTag:
        return self.spore.output


@dataclass(frozen=True)
class PumpTo:
    id: SiloId
    place: Place
    left: "Lineage"
    right: "Lineage"
    fun: Spore
    builder_id: str
    tag: TypeTag


Lineage = Union[Source, Apply, PumpTo]


def walk(lin: Lineage):
    """Yield every node of a lineage tree, parents before children."""
    stack = [lin]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Apply):
            stack.append(node.parent)
        elif isinstance(node, PumpTo):
            stack.extend((node.right, node.left))


# --- emitters and builders --------------------------------------------------

class Emitter:
    """Sink for values produced by a pump spore, one element at a time."""

    elem_tag: TypeTag

    def emit(self, v, pickler: Optional[Pickler] = None) -> None:
        raise NotImplementedError

    def _check_pickler(self, pickler: Pickler) -> None:
        if pickler.tag != self.elem_tag:
            raise TypeMismatch(
                f"emitting {render(pickler.tag)} into a pump of {render(self.elem_tag)}")


class CollectingEmitter(Emitter):
    def __init__(self, elem_tag: TypeTag):
        self.elem_tag = elem_tag
        self.items: list = []

    def emit(self, v, pickler: Optional[Pickler] = None) -> None:
        if pickler is not None:
            self._check_pickler(pickler)
        self.items.append(v)


class ListBuilder:
    def __init__(self):
        self._items: list = []
        self._done = False

    def add(self, v) -> None:
        self._items.append(v)

    def add_all(self, vs) -> None:
        self._items.extend(vs)

    def finish(self) -> list:
        if self._done:
            raise RuntimeError("builder already finished")
        self._done = True
        return self._items


LIST_BUILDER = DEFAULT.register_builder("list", tags.List, lambda result_tag: ListBuilder())


def pump_elem_tag(fun: Spore) -> TypeTag:
    """The emitter element type V of a pump spore ``(U, Emitter[V]) -> Unit``."""
    t = fun.input
    if t.name != "Tuple" or len(t.params) != 2 or t.params[1].name != "Emitter":
        raise TypeMismatch(f"pump spore must take (elem, Emitter[V]), takes {render(t)}")
    return t.params[1].params[0]


# --- SiloRef ----------------------------------------------------------------

class Context(Protocol):
    registry: Registry

    def next_silo_id(self) -> SiloId: ...

    def send_lineage(self, lineage: Lineage) -> Future: ...


class SiloRef:
    """A typed, immutable proxy for a silo, carrying the lineage that defines it."""

    __slots__ = ("lineage", "ctx")

    def __init__(self, lineage: Lineage, ctx: Context):
        self.lineage = lineage
        self.ctx = ctx

    @property
    def id(self) -> SiloId:
        return self.lineage.id

    @property
    def place(self) -> Place:
        return self.lineage.place

    @property
    def tag(self) -> TypeTag:
        return self.lineage.tag

    def __repr__(self) -> str:
        return f"SiloRef({self.id} at {self.place}: {render(self.tag)})"

    def apply(self, s: Spore) -> "SiloRef":
        return apply(self, s)

    def send(self) -> Future:
        return send(self)

    @staticmethod
    def pump_to(dest: Place, left: "SiloRef", right: "SiloRef", fun: Spore, bf) -> "SiloRef":
        return pump_to(dest, left, right, fun, bf)


def apply(ref: SiloRef, s: Spore) -> SiloRef:
    """Lazily derive a silo on the same node by applying *s* to *ref*'s data."""
    if s.input != ref.tag:
        raise TypeMismatch(f"spore takes {render(s.input)}, silo holds {render(ref.tag)}")
    return SiloRef(Apply(ref.ctx.next_silo_id(), ref.lineage, s), ref.ctx)


def send(ref: SiloRef) -> Future:
    """Ship the lineage to its node, materialize it there and fetch the data."""
    return ref.ctx.send_lineage(ref.lineage)


def pump_to(dest: Place, left: SiloRef, right: SiloRef, fun: Spore,
            bf: "BuilderFactory | str") -> SiloRef:
    """Lazily stream the elements of two silos through *fun* into a new silo at *dest*."""
    if left.tag != right.tag:
        raise TypeMismatch(f"pump sources differ: {render(left.tag)} vs {render(right.tag)}")
    if left.tag.name != "List":
        raise TypeMismatch(f"pump sources must hold lists, not {render(left.tag)}")
    elem = left.tag.params[0]
    v = pump_elem_tag(fun)
    if fun.input.params[0] != elem:
        raise TypeMismatch(f"pump spore takes {render(fun.input.params[0])}, silos hold {render(elem)}")
    if fun.output != UNIT:
        raise TypeMismatch("pump spore must return Unit")
    builder_id = bf.builder_id if isinstance(bf, BuilderFactory) else bf
    factory = left.ctx.registry.builder(builder_id)
    lin = PumpTo(left.ctx.next_silo_id(), dest, left.lineage, right.lineage, fun,
                 builder_id, factory.result_tag(v))
    return SiloRef(lin, left.ctx)


# --- reference interpreter --------------------------------------------------

def evaluate(lin: "Lineage | SiloRef", sources: "Mapping[SiloId, Any] | Callable[[SiloId], Any]",
             registry: Optional[Registry] = None):
    """Interpret *lin* in-process, reading Source data from *sources*."""
    if isinstance(lin, SiloRef):
        lin = lin.lineage
    registry = registry or DEFAULT
    lookup = sources if callable(sources) else sources.__getitem__
    memo: dict = {}

    def go(node):
        if node.id in memo:
            return memo[node.id]
        if isinstance(node, Source):
            try:
                out = lookup(node.id)
            except KeyError:
                raise UnknownSilo(str(node.id)) from None
        elif isinstance(node, Apply):
            out = node.spore.bound(registry)(go(node.parent))
        else:
            fn = node.fun.bound(registry)
            em = CollectingEmitter(pump_elem_tag(node.fun))
            for side in (node.left, node.right):
                for x in go(side):
                    fn((x, em))
            builder = registry.builder(node.builder_id)(node.tag)
            for v in em.items:
                builder.add(v)
            out = builder.finish()
        memo[node.id] = out
        return out

    return go(lin)
