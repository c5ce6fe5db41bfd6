"""Cluster-wide tables of spore bodies, body lifters and builder factories.

Code never travels over the network; only ids do. Every node must hold the
same registry contents, which is checked by comparing :meth:`fingerprint`
values during the connection handshake.
"""
from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .errors import BuilderUnknown, DuplicateBodyId, UnknownBodyId
from .tags import TypeTag, records_fingerprint_items, render

BODY_ID_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*")


@dataclass(frozen=True)
class BodyEntry:
    body_id: str
    arg: TypeTag
    res: TypeTag
    fn: Callable[[tuple, Any], Any]


@dataclass(frozen=True)
class LifterEntry:
    """A higher-order body: wraps already-bound inner spores into a new callable.

    ``factory(own_env, *inner_callables)`` returns the callable; ``sig(inners)``
    returns the ``(input, output)`` patterns given the inner spores.
    """
    name: str
    factory: Callable[..., Callable[[Any], Any]]
    sig: Callable[..., tuple[TypeTag, TypeTag]]


@dataclass(frozen=True)
class BuilderFactory:
    builder_id: str
    result_tag: Callable[[TypeTag], TypeTag]
    factory: Callable[[TypeTag], Any]

    def __call__(self, result_tag: TypeTag):
        return self.factory(result_tag)


class Registry:
    def __init__(self):
        self._bodies: dict[str, BodyEntry] = {}
        self._lifters: dict[str, LifterEntry] = {}
        self._builders: dict[str, BuilderFactory] = {}
        self._lock = threading.Lock()

    def register_body(self, body_id: str, arg: TypeTag, res: TypeTag, fn) -> None:
        if not BODY_ID_RE.fullmatch(body_id):
            raise ValueError(f"invalid body id {body_id!r}")
        with self._lock:
            if body_id in self._bodies or body_id in self._lifters:
                raise DuplicateBodyId(body_id)
            self._bodies[body_id] = BodyEntry(body_id, arg, res, fn)

    def body(self, body_id: str) -> BodyEntry:
        try:
            return self._bodies[body_id]
        except KeyError:
            raise UnknownBodyId(body_id) from None

    def register_lifter(self, name: str, factory, sig) -> None:
        if not BODY_ID_RE.fullmatch(name):
            raise ValueError(f"invalid lifter name {name!r}")
        with self._lock:
            if name in self._lifters or name in self._bodies:
                raise DuplicateBodyId(name)
            self._lifters[name] = LifterEntry(name, factory, sig)

    def lifter(self, name: str) -> LifterEntry:
        try:
            return self._lifters[name]
        except KeyError:
            raise UnknownBodyId(name) from None

    def register_builder(self, builder_id: str, result_tag, factory) -> BuilderFactory:
        with self._lock:
            if builder_id in self._builders:
                raise DuplicateBodyId(f"builder {builder_id}")
            bf = BuilderFactory(builder_id, result_tag, factory)
            self._builders[builder_id] = bf
        return bf

    def builder(self, builder_id: str) -> BuilderFactory:
        try:
            return self._builders[builder_id]
        except KeyError:
            raise BuilderUnknown(builder_id) from None

    def fingerprint(self) -> str:
        items = [f"body {b.body_id}:{render(b.arg)}->{render(b.res)}" for b in self._bodies.values()]
        items += [f"lifter {name}" for name in self._lifters]
        items += [f"builder {name}" for name in self._builders]
        items += [f"record {r}" for r in records_fingerprint_items()]
        digest = hashlib.sha256("\n".join(sorted(items)).encode("utf-8"))
        return digest.hexdigest()[:32]

    def copy(self) -> "Registry":
        other = Registry()
        other._bodies = dict(self._bodies)
        other._lifters = dict(self._lifters)
        other._builders = dict(self._builders)
        return other


DEFAULT = Registry()


def spore_body(body_id: str, arg: TypeTag, res: TypeTag, registry: Optional[Registry] = None):
    """Decorator form of :meth:`Registry.register_body`."""

    def wrap(fn):
        (registry or DEFAULT).register_body(body_id, arg, res, fn)
        return fn

    return wrap


__all__ = ["BodyEntry", "BuilderFactory", "DEFAULT", "LifterEntry", "Registry", "spore_body"]
