"""Collection operations expressed with nothing but ``apply`` and ``pump_to``."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from operator import itemgetter
from typing import Sequence

from .errors import SizeMismatch, TypeMismatch
from .picklers import Backend, pickler_for
from .registry import DEFAULT, BuilderFactory
from .silo import Place, SiloRef, pump_to
from .spore import Spore, eval_spore, lift, make_spore
from .tags import ANY, INT64, STRING, UNIT, Emitter, List, Option, Tuple, TypeTag, parse, render

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


# --- registered bodies and lifters ------------------------------------------

def _map_factory(own, f):
    return lambda xs: [f(x) for x in xs]


def _map_sig(f: Spore):
    return List(f.input), List(f.output)


def _tag_left_factory(own, h):
    return lambda xs: [(h(x), x, None) for x in xs]


def _tag_left_sig(h: Spore):
    return List(h.input), List(Tuple(h.output, Option(h.input), Option(ANY)))


def _tag_right_factory(own, h):
    return lambda xs: [(h(x), None, x) for x in xs]


def _tag_right_sig(h: Spore):
    return List(h.input), List(Tuple(h.output, Option(ANY), Option(h.input)))


def _partition_factory(own, part):
    j, n = own
    cache: dict = {}

    def index(k):
        i = cache.get(k)
        if i is None:
            i = part(k)
            if not 0 <= i < n:
                raise ValueError(f"partitioner sent key {k!r} to {i}, outside [0, {n})")
            cache[k] = i
        return i

    return lambda pairs: [p for p in pairs if index(p[0]) == j]


def _partition_sig(part: Spore):
    if part.output != INT64:
        raise TypeMismatch(f"partitioner must return Int64, returns {render(part.output)}")
    return List(Tuple(part.input, ANY)), List(Tuple(part.input, ANY))


def _emit_each(env, x):
    x[1].emit(x[0])


def _join_merge(env, triples):
    out = []
    ordered = sorted(triples, key=itemgetter(0))
    i, n = 0, len(ordered)
    while i < n:
        k = ordered[i][0]
        lefts, rights = [], []
        while i < n and ordered[i][0] == k:
            _, a, b = ordered[i]
            if a is not None:
                lefts.append(a)
            if b is not None:
                rights.append(b)
            i += 1
        out.extend((k, (a, b)) for a in lefts for b in rights)
    return out


def _group_pairs(env, pairs):
    groups: dict = {}
    for k, v in pairs:
        vs = groups.get(k)
        if vs is None:
            groups[k] = [v]
        else:
            vs.append(v)
    return list(groups.items())


@lru_cache(maxsize=None)
def _key_pickler(tag_text: str):
    return pickler_for(parse(tag_text), Backend.SPECIALIZED)


def _fnv_mod(env, k):
    n, tag_text = env
    return fnv1a_64(_key_pickler(tag_text).encode(k)) % n


DEFAULT.register_lifter("map", _map_factory, _map_sig)
DEFAULT.register_lifter("tag_left", _tag_left_factory, _tag_left_sig)
DEFAULT.register_lifter("tag_right", _tag_right_factory, _tag_right_sig)
DEFAULT.register_lifter("partition", _partition_factory, _partition_sig)
DEFAULT.register_body("scp.emit_each", Tuple(ANY, Emitter(ANY)), UNIT, _emit_each)
DEFAULT.register_body("scp.join_merge", List(Tuple(ANY, Option(ANY), Option(ANY))),
                      List(Tuple(ANY, Tuple(ANY, ANY))), _join_merge)
DEFAULT.register_body("scp.group_pairs", List(Tuple(ANY, ANY)), List(Tuple(ANY, List(ANY))), _group_pairs)
DEFAULT.register_body("scp.fnv1a_mod", ANY, INT64, _fnv_mod)


@lru_cache(maxsize=None)
def passthrough(elem: TypeTag) -> Spore:
    """Pump spore emitting every element unchanged."""
    return make_spore([], "scp.emit_each", input=Tuple(elem, Emitter(elem)), output=UNIT)


# --- partitioners -----------------------------------------------------------

@dataclass(frozen=True)
class Partitioner:
    """Maps keys to one of ``num_partitions`` destinations via a spore ``K -> Int64``."""

    num_partitions: int
    spore: Spore

    @classmethod
    def hash(cls, num_partitions: int, key_tag: TypeTag) -> "Partitioner":
        """``fnv1a_64(encode(key)) mod N`` over the key's specialized encoding."""
        s = make_spore([("n", num_partitions, INT64), ("key_type", render(key_tag), STRING)],
                       "scp.fnv1a_mod", input=key_tag, output=INT64)
        return cls(num_partitions, s)

    def __call__(self, key) -> int:
        return eval_spore(self.spore, key)


# --- combinators ------------------------------------------------------------

def map_silo(ref: SiloRef, user_fn: Spore) -> SiloRef:
    """Element-wise map: one apply of ``map(user_fn)``."""
    return ref.apply(lift("map", [user_fn]))


def union(dest: Place, a: SiloRef, b: SiloRef, bf: "BuilderFactory | str" = "list") -> SiloRef:
    if a.tag != b.tag or a.tag.name != "List":
        raise TypeMismatch(f"union needs two silos of the same list type, got "
                           f"{render(a.tag)} and {render(b.tag)}")
    return pump_to(dest, a, b, passthrough(a.tag.params[0]), bf)


def hash_join(dest: Place, silo1: SiloRef, silo2: SiloRef, hash_a: Spore, hash_b: Spore) -> SiloRef:
    """Join two list silos on ``hash_a(a) == hash_b(b)``; yields ``(k, (a, b))`` pairs."""
    if silo1.tag.name != "List" or silo2.tag.name != "List":
        raise TypeMismatch("hash_join needs list silos")
    a, b = silo1.tag.params[0], silo2.tag.params[0]
    if hash_a.input != a or hash_b.input != b:
        raise TypeMismatch("hash function inputs must match the silo element types")
    k = hash_a.output
    if hash_b.output != k:
        raise TypeMismatch(f"key types differ: {render(k)} vs {render(hash_b.output)}")
    triple = Tuple(k, Option(a), Option(b))
    left = silo1.apply(lift("tag_left", [hash_a], output=List(triple)))
    right = silo2.apply(lift("tag_right", [hash_b], output=List(triple)))
    combined = pump_to(dest, left, right, passthrough(triple), "list")
    merge = make_spore([], "scp.join_merge", input=List(triple), output=List(Tuple(k, Tuple(a, b))))
    return combined.apply(merge)


def _pair_types(tag: TypeTag):
    if tag.name != "List" or tag.params[0].name != "Tuple" or len(tag.params[0].params) != 2:
        raise TypeMismatch(f"group_by_key needs List[Tuple[K,V]] silos, got {render(tag)}")
    return tag.params[0].params


def group_by_key(silos: Sequence[SiloRef], part: Partitioner, places: Sequence[Place]) -> list[SiloRef]:
    """Shuffle key/value silos so that output *j* at ``places[j]`` owns every key ``part`` sends to *j*.

    Each input silo is split locally into N partition silos by apply; the N
    pieces bound for a destination are combined there by a left-leaning
    chain of binary pumps, then grouped by key.
    """
    n = len(places)
    if len(silos) != n:
        raise SizeMismatch(f"{len(silos)} silos for {n} places")
    if part.num_partitions != n:
        raise SizeMismatch(f"partitioner has {part.num_partitions} partitions for {n} places")
    if n == 0:
        return []
    tag = silos[0].tag
    if any(s.tag != tag for s in silos):
        raise TypeMismatch("group_by_key inputs must share one type")
    k, v = _pair_types(tag)
    pair = tag.params[0]

    def piece(ref: SiloRef, j: int) -> SiloRef:
        header = [("j", j, INT64), ("n", n, INT64)]
        return ref.apply(lift("partition", [part.spore], header, input=tag, output=tag))

    pieces = [[piece(s, j) for j in range(n)] for s in silos]
    group = make_spore([], "scp.group_pairs", input=tag, output=List(Tuple(k, List(v))))
    emit = passthrough(pair)
    builder = "list"
    out = []
    for j, dest in enumerate(places):
        if n == 1:
            # Second source is an always-empty piece; it only exists to move data to dest.
            acc = pump_to(dest, pieces[0][0], piece(silos[0], -1), emit, builder)
        else:
            acc = pump_to(dest, pieces[0][j], pieces[1][j], emit, builder)
            for i in range(2, n):
                acc = pump_to(dest, acc, pieces[i][j], emit, builder)
        out.append(acc.apply(group))
    return out


__all__ = [
    "Partitioner", "fnv1a_64", "group_by_key", "hash_join", "map_silo", "passthrough", "union",
]
