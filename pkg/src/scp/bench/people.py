"""Person records, a deterministic generator and the benchmark's map body."""
from __future__ import annotations

import random
from dataclasses import dataclass

from ..registry import spore_body
from ..spore import make_spore
from ..tags import INT64, Int32, Int64, Tuple, record

NAMES = (
    "ada", "alan", "alice", "amara", "anders", "barbara", "bjarne", "carl", "chen", "dana",
    "dennis", "edsger", "elena", "farid", "frances", "grace", "guido", "hana", "ines", "ivan",
    "jean", "john", "kai", "ken", "lars", "leslie", "linus", "mara", "martin", "mei",
    "niklaus", "noor", "olga", "omar", "pat", "priya", "quinn", "radia", "rosa", "sam",
    "sofia", "tariq", "tony", "ursula", "vint", "wen", "xavier", "yuki", "zane", "zoe",
)


@record("bench.Person")
@dataclass(frozen=True, slots=True)
class Person:
    id: Int64
    name: str
    age: Int32


PERSON = Person.__type_tag__
KEYED = Tuple(INT64, PERSON)


def gen_people(n: int, seed: int) -> list[Person]:
    """*n* people; the same seed always gives the same list. Ages are uniform in [0, 100)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = random.Random(seed)
    return [Person(i, rng.choice(NAMES), rng.randrange(100)) for i in range(n)]


def decile(p: Person) -> int:
    return p.age // 10


@spore_body("bench.by_decile", PERSON, KEYED)
def _by_decile(env, p):
    return (p.age // 10, p)


def by_decile():
    """Spore keying a person by age decile."""
    return make_spore([], "bench.by_decile")


def split(items: list, parts: int) -> list[list]:
    """Split into *parts* contiguous chunks whose sizes differ by at most one."""
    q, r = divmod(len(items), parts)
    out, pos = [], 0
    for i in range(parts):
        n = q + (1 if i < r else 0)
        out.append(items[pos:pos + n])
        pos += n
    return out
