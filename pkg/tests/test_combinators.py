import random
import struct
from collections import Counter

import pytest

from scp import (INT64, STRING, List, Partitioner, SizeMismatch, Tuple, TypeMismatch, evaluate,
                 fnv1a_64, group_by_key, hash_join, make_spore, map_silo, union)
from scp.silo import Apply, PumpTo, walk

PAIR = Tuple(INT64, INT64)


def mod_partitioner(n):
    return Partitioner(n, make_spore([("n", n)], "test.mod"))


def test_fnv1a_known_vectors():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_hash_partitioner_uses_specialized_key_bytes():
    part = Partitioner.hash(4, INT64)
    for k in [0, 1, -5, 2**40]:
        assert part(k) == fnv1a_64(struct.pack("<q", k)) % 4
    s = Partitioner.hash(3, STRING)
    assert s("abc") == fnv1a_64(struct.pack("<I", 3) + b"abc") % 3


def test_map(cluster3):
    ref = cluster3.populate(cluster3.places[0], [1, 2, 3], List(INT64))
    assert map_silo(ref, make_spore([("k", 1)], "test.add")).send().result() == [2, 3, 4]
    empty = cluster3.populate(cluster3.places[0], [], List(INT64))
    assert map_silo(empty, make_spore([("k", 1)], "test.add")).send().result() == []


def test_map_is_a_single_apply(cluster3):
    ref = cluster3.populate(cluster3.places[0], [1], List(INT64))
    out = map_silo(ref, make_spore([], "test.show"))
    assert isinstance(out.lineage, Apply) and out.lineage.parent is ref.lineage
    assert out.tag == List(STRING)


def test_union(cluster3):
    a, b, c = cluster3.places
    x = cluster3.populate(a, [1, 2], List(INT64))
    y = cluster3.populate(b, [2, 3], List(INT64))
    e = cluster3.populate(b, [], List(INT64))
    assert Counter(union(c, x, y).send().result()) == Counter([1, 2, 2, 3])
    assert Counter(union(c, x, e).send().result()) == Counter([1, 2])
    with pytest.raises(TypeMismatch):
        union(c, x, cluster3.populate(a, ["s"], List(STRING)))


def test_union_size_property(cluster3):
    rng = random.Random(2)
    places = cluster3.places
    for _ in range(20):
        xs = [rng.randint(0, 9) for _ in range(rng.randint(0, 30))]
        ys = [rng.randint(0, 9) for _ in range(rng.randint(0, 30))]
        a = cluster3.populate(rng.choice(places), xs, List(INT64))
        b = cluster3.populate(rng.choice(places), ys, List(INT64))
        out = union(rng.choice(places), a, b).send().result()
        assert Counter(out) == Counter(xs) + Counter(ys)


def key_by_mod(m):
    return make_spore([("m", m)], "test.fst", input=PAIR, output=INT64)


def brute_join(left, right):
    return [(a[0], (a, b)) for a in left for b in right if a[0] == b[0]]


def test_hash_join_single_match(cluster3):
    a, b, c = cluster3.places
    x = cluster3.populate(a, [(1, 10)], List(PAIR))
    y = cluster3.populate(b, [(1, 20)], List(PAIR))
    out = hash_join(c, x, y, key_by_mod(0), key_by_mod(0))
    assert out.tag == List(Tuple(INT64, Tuple(PAIR, PAIR)))
    assert out.send().result() == [(1, ((1, 10), (1, 20)))]


def test_hash_join_disjoint_and_multiplicities(cluster3):
    a, b, c = cluster3.places
    x = cluster3.populate(a, [(1, 0), (1, 1), (5, 0)], List(PAIR))
    y = cluster3.populate(b, [(1, 7), (1, 8), (1, 9), (6, 0)], List(PAIR))
    out = hash_join(c, x, y, key_by_mod(0), key_by_mod(0)).send().result()
    assert len(out) == 6 and {k for k, _ in out} == {1}
    assert Counter(out) == Counter(brute_join([(1, 0), (1, 1), (5, 0)], [(1, 7), (1, 8), (1, 9), (6, 0)]))
    none = hash_join(c, cluster3.populate(a, [(2, 0)], List(PAIR)),
                     cluster3.populate(b, [(3, 0)], List(PAIR)), key_by_mod(0), key_by_mod(0))
    assert none.send().result() == []


def test_hash_join_types(cluster3):
    a, b, c = cluster3.places
    x = cluster3.populate(a, [(1, 0)], List(PAIR))
    y = cluster3.populate(b, ["s"], List(STRING))
    with pytest.raises(TypeMismatch):
        hash_join(c, x, y, key_by_mod(0), key_by_mod(0))
    with pytest.raises(TypeMismatch):
        hash_join(c, x, y, key_by_mod(0), make_spore([("p", "")], "test.prefix"))  # String keys
    ok = hash_join(c, x, y, key_by_mod(0), make_spore([], "test.strlen"))
    assert ok.send().result() == [(1, ((1, 0), "s"))]


def test_group_by_key_mod_two(cluster3):
    a, b, _ = cluster3.places
    s0 = cluster3.populate(a, [(1, 100), (2, 200)], List(PAIR))
    s1 = cluster3.populate(b, [(3, 300)], List(PAIR))
    g0, g1 = group_by_key([s0, s1], mod_partitioner(2), [a, b])
    assert (g0.place, g1.place) == (a, b)
    assert dict(g0.send().result()) == {2: [200]}
    assert dict(g1.send().result()) == {1: [100], 3: [300]}


def test_group_by_key_single_key(cluster3):
    places = cluster3.places
    silos = [cluster3.populate(p, [(7, i), (7, i + 10)], List(PAIR)) for i, p in enumerate(places)]
    outs = [o.send().result() for o in group_by_key(silos, Partitioner.hash(3, INT64), places)]
    non_empty = [o for o in outs if o]
    assert len(non_empty) == 1
    (key, values), = non_empty[0]
    assert key == 7 and Counter(values) == Counter([0, 10, 1, 11, 2, 12])


def test_group_by_key_one_node(cluster3):
    p = cluster3.places[0]
    s = cluster3.populate(p, [(1, 1), (2, 2), (1, 3)], List(PAIR))
    [g] = group_by_key([s], mod_partitioner(1), [p])
    assert dict(g.send().result()) == {1: [1, 3], 2: [2]}


def test_group_by_key_structure(cluster3):
    places = cluster3.places
    silos = [cluster3.populate(p, [(i, i)], List(PAIR)) for i, p in enumerate(places)]
    outs = group_by_key(silos, mod_partitioner(3), places)
    for j, out in enumerate(outs):
        pumps = [n for n in walk(out.lineage) if isinstance(n, PumpTo)]
        assert len(pumps) == 2 and all(n.place == places[j] for n in pumps)


def test_group_by_key_sizes(cluster3):
    places = cluster3.places
    s = [cluster3.populate(p, [], List(PAIR)) for p in places]
    with pytest.raises(SizeMismatch):
        group_by_key(s[:2], mod_partitioner(3), places)
    with pytest.raises(SizeMismatch):
        group_by_key(s, mod_partitioner(2), places)
    with pytest.raises(TypeMismatch):
        group_by_key([cluster3.populate(places[0], [1], List(INT64))], mod_partitioner(1), places[:1])


def test_bad_partitioner_fails_remotely(cluster3):
    from scp import RemoteEvalError
    places = cluster3.places[:2]
    s = [cluster3.populate(p, [(5, 1)], List(PAIR)) for p in places]
    wrong = Partitioner(2, make_spore([("n", 7)], "test.mod"))  # can return up to 6
    outs = group_by_key(s, wrong, places)
    with pytest.raises(RemoteEvalError):
        for o in outs:
            o.send().result()


def test_combinators_match_reference(cluster3):
    rng = random.Random(4)
    places = cluster3.places
    for _ in range(10):
        data = [[(rng.randint(0, 5), rng.randint(0, 99)) for _ in range(rng.randint(0, 15))]
                for _ in places]
        silos = [cluster3.populate(p, d, List(PAIR)) for p, d in zip(places, data)]
        srcs = {s.id: d for s, d in zip(silos, data)}
        for out in group_by_key(silos, Partitioner.hash(3, INT64), places):
            assert out.send().result() == evaluate(out, srcs)
        j = hash_join(places[0], silos[1], silos[2], key_by_mod(0), key_by_mod(0))
        assert Counter(j.send().result()) == Counter(evaluate(j, srcs))
