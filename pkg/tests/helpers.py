"""Random values, exact comparison and test-only spore bodies."""
from __future__ import annotations

import math
import random
import string
import struct
from collections import Counter
from dataclasses import dataclass, fields, is_dataclass

from scp import (BOOL, FLOAT64, INT32, INT64, STRING, UNIT, Emitter, Int32, List, Map, Option, Tuple,
                 TypeTag, record, spore_body)
from scp.bench import PERSON, Person
from scp.tags import ANY, RECORDS

I32_MIN, I32_MAX = -(2**31), 2**31 - 1
I64_MIN, I64_MAX = -(2**63), 2**63 - 1

_SPECIAL_FLOATS = [0.0, -0.0, 1.0, -1.0, math.inf, -math.inf, math.nan, 5e-324, -5e-324,
                   2.2250738585072014e-308, 1.7976931348623157e308, -1.7976931348623157e308]
_ALPHABET = string.ascii_letters + string.digits + " _-\t\n" + "éßø漢字🙂\u0000"


@record("test.Point")
@dataclass(frozen=True)
class Point:
    x: Int32
    y: float
    label: str | None


@record("test.Bag")
@dataclass(frozen=True)
class Bag:
    owner: Person
    tags: list[str]
    counts: dict[str, int]
    where: tuple[Point, bool]


POINT = Point.__type_tag__
BAG = Bag.__type_tag__


def rand_int(rng: random.Random, lo: int, hi: int) -> int:
    r = rng.random()
    if r < 0.15:
        return rng.choice([lo, hi, 0, -1, 1, lo + 1, hi - 1])
    if r < 0.5:
        return rng.randint(-1000, 1000)
    return rng.randint(lo, hi)


def rand_str(rng: random.Random, max_len: int = 12) -> str:
    if rng.random() < 0.15:
        return ""
    return "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(1, max_len)))


def rand_float(rng: random.Random) -> float:
    r = rng.random()
    if r < 0.2:
        return rng.choice(_SPECIAL_FLOATS)
    if r < 0.4:
        return struct.unpack("<d", rng.getrandbits(64).to_bytes(8, "little"))[0]
    return rng.uniform(-1e6, 1e6)


def rand_value(tag: TypeTag, rng: random.Random, size: int = 6):
    """A random instance of *tag*; collections are empty about 15% of the time."""
    name = tag.name
    if name == "Bool":
        return rng.random() < 0.5
    if name == "Int32":
        return rand_int(rng, I32_MIN, I32_MAX)
    if name == "Int64":
        return rand_int(rng, I64_MIN, I64_MAX)
    if name == "Float64":
        return rand_float(rng)
    if name == "String":
        return rand_str(rng)
    if name == "Option":
        return None if rng.random() < 0.3 else rand_value(tag.params[0], rng, size)
    if name == "List":
        n = 0 if rng.random() < 0.15 else rng.randint(1, size)
        return [rand_value(tag.params[0], rng, max(1, size // 2)) for _ in range(n)]
    if name == "Map":
        n = 0 if rng.random() < 0.15 else rng.randint(1, size)
        return {rand_value(tag.params[0], rng, 2): rand_value(tag.params[1], rng, max(1, size // 2))
                for _ in range(n)}
    if name == "Tuple":
        return tuple(rand_value(t, rng, size) for t in tag.params)
    schema = RECORDS[name]
    return schema.cls(*(rand_value(t, rng, size) for _, t in schema.fields))


_LEAVES = [BOOL, INT32, INT64, FLOAT64, STRING, PERSON, POINT]
_KEYS = [BOOL, INT32, INT64, STRING]


def rand_tag(rng: random.Random, depth: int = 3) -> TypeTag:
    if depth == 0 or rng.random() < 0.3:
        return rng.choice(_LEAVES)
    kind = rng.choice(["List", "Map", "Option", "Tuple"])
    if kind == "List":
        return List(rand_tag(rng, depth - 1))
    if kind == "Map":
        return Map(rng.choice(_KEYS), rand_tag(rng, depth - 1))
    if kind == "Option":
        inner = rand_tag(rng, depth - 1)
        return inner if inner.name == "Option" else Option(inner)
    return Tuple(*(rand_tag(rng, depth - 1) for _ in range(rng.randint(1, 3))))


def same(a, b) -> bool:
    """Deep equality where floats compare bit for bit (NaN equals NaN, -0.0 differs from 0.0)."""
    if isinstance(a, float) or isinstance(b, float):
        return (type(a) is type(b)
                and struct.pack("<d", a) == struct.pack("<d", b))
    if type(a) is not type(b):
        return False
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        if len(a) != len(b) or list(a) != list(b):
            return False
        return all(same(a[k], b[k]) for k in a)
    if is_dataclass(a):
        return all(same(getattr(a, f.name), getattr(b, f.name)) for f in fields(a))
    return a == b


def multiset(xs) -> Counter:
    return Counter(xs)


# --- bodies used by tests (registered in the default registry) -------------

@spore_body("test.concat3", INT64, STRING)
def _concat3(env, x):
    y1, y2 = env
    return y1 + str(y2) + str(x)


@spore_body("test.identity", ANY, ANY)
def _identity(env, x):
    return x


@spore_body("test.add", INT64, INT64)
def _add(env, x):
    return x + env[0]


@spore_body("test.mul", INT64, INT64)
def _mul(env, x):
    return x * env[0]


@spore_body("test.show", INT64, STRING)
def _show(env, x):
    return f"<{x}>"


@spore_body("test.strlen", STRING, INT64)
def _strlen(env, s):
    return len(s)


@spore_body("test.prefix", STRING, STRING)
def _prefix(env, s):
    return env[0] + s


@spore_body("test.list_add", List(INT64), List(INT64))
def _list_add(env, xs):
    return [x + env[0] for x in xs]


@spore_body("test.keep_mod", List(INT64), List(INT64))
def _keep_mod(env, xs):
    m, r = env
    return [x for x in xs if x % m != r]


@spore_body("test.cap", List(INT64), List(INT64))
def _cap(env, xs):
    return sorted(xs)[: env[0]]


@spore_body("test.mod", INT64, INT64)
def _mod(env, k):
    return k % env[0]


@spore_body("test.key_mod", INT64, Tuple(INT64, INT64))
def _key_mod(env, x):
    return (x % env[0], x)


@spore_body("test.fst", Tuple(INT64, ANY), INT64)
def _fst(env, p):
    return p[0]


@spore_body("test.join_flat", List(Tuple(INT64, Tuple(INT64, INT64))), List(INT64))
def _join_flat(env, rows):
    return [k * 7 + a - b for k, (a, b) in rows]


@spore_body("test.group_flat", List(Tuple(INT64, List(INT64))), List(INT64))
def _group_flat(env, groups):
    return [k * 1000 + v for k, vs in groups for v in vs]


PUMP_ANY = Tuple(ANY, Emitter(ANY))
PUMP_INT = Tuple(INT64, Emitter(INT64))


@spore_body("test.emit_twice", PUMP_ANY, UNIT)
def _emit_twice(env, pair):
    x, em = pair
    em.emit(x)
    em.emit(x)


@spore_body("test.emit_none", PUMP_ANY, UNIT)
def _emit_none(env, pair):
    pass


@spore_body("test.emit_if_below", PUMP_INT, UNIT)
def _emit_if_below(env, pair):
    x, em = pair
    if x < env[0]:
        em.emit(x)


@spore_body("test.boom_at", List(INT64), List(INT64))
def _boom_at(env, xs):
    if env[0] in xs:
        raise ValueError(f"boom on {env[0]}")
    return xs


@spore_body("test.emit_boom", PUMP_INT, UNIT)
def _emit_boom(env, pair):
    x, em = pair
    if x == env[0]:
        raise RuntimeError(f"emit failed at {x}")
    em.emit(x)


@spore_body("test.person_age", PERSON, INT64)
def _person_age(env, p):
    return p.age


@spore_body("test.person_id_mod", PERSON, INT64)
def _person_id_mod(env, p):
    return p.id % env[0]


@spore_body("test.sleep", List(INT64), List(INT64))
def _sleep(env, xs):
    import time
    time.sleep(env[0])
    return xs
