import socket
import threading
import time
from collections import Counter

import pytest

from conftest import socket_nodes
from scp import (FLOAT64, INT64, BindFailure, List, NodeUnreachable, Registry, RegistryMismatch,
                 RemoteEvalError, lift, make_spore, passthrough, pump_to)
from scp.runtime import LocalCluster, LoopbackHub, NodeConfig, start_node, wire


def incs(ref, n):
    for i in range(n):
        ref = ref.apply(make_spore([("k", i)], "test.list_add"))
    return ref


def test_loopback_handshake_liveness():
    hub = LoopbackHub()
    a, b = start_node(NodeConfig(1), hub=hub), start_node(NodeConfig(2), hub=hub)
    try:
        a.connect(2)
        assert a.live_peers() == {2} and b.live_peers() == {1}
        assert hub.stats.by_tag["Handshake"] == 2
    finally:
        a.close()
        b.close()


def test_loopback_registry_mismatch():
    hub = LoopbackHub()
    other = Registry()
    a = start_node(NodeConfig(1), hub=hub)
    b = start_node(NodeConfig(2, registry=other), hub=hub)
    try:
        with pytest.raises(RegistryMismatch):
            a.connect(2)
        assert a.live_peers() == set() and b.live_peers() == set()
    finally:
        a.close()
        b.close()


def test_backend_mismatch_is_refused():
    hub = LoopbackHub()
    a = start_node(NodeConfig(1, backend="generic"), hub=hub)
    b = start_node(NodeConfig(2, backend="specialized"), hub=hub)
    try:
        with pytest.raises(RegistryMismatch):
            a.connect(2)
    finally:
        a.close()
        b.close()


def test_socket_handshake_restart_and_bind_failure():
    with socket_nodes(2) as (driver, places, workers):
        workers[0].connect(2)
        assert workers[0].live_peers() == {2} and 1 in workers[1].live_peers()
        addr = workers[0].transport.address
        holder = socket.socket()
        try:
            holder.bind(("127.0.0.1", 0))
            holder.listen(1)
            with pytest.raises(BindFailure):
                start_node(NodeConfig(9, listen=holder.getsockname()))
        finally:
            holder.close()
    again = start_node(NodeConfig(1, listen=addr))
    assert again.transport.address == addr
    again.close()


def test_socket_registry_mismatch():
    w = start_node(NodeConfig(1, listen=("127.0.0.1", 0), registry=Registry()))
    d = start_node(NodeConfig(0, peers={1: w.transport.address}))
    try:
        with pytest.raises(RegistryMismatch):
            d.connect(1)
    finally:
        d.close()
        w.close()


def test_frame_counter_and_bytes(cluster3):
    hub = cluster3.hub
    before = hub.stats.snapshot()
    cluster3.driver.transport.send(1, wire.EMIT_ACK, wire.encode_message(wire.EmitAck(77, 0))[1])
    after = hub.stats.snapshot()
    assert after["frames_sent"] - before["frames_sent"] == 1
    assert after["bytes_sent"] - before["bytes_sent"] == len(wire.message_frame(wire.EmitAck(77, 0)))


def test_apply_only_workload_sends_nothing(cluster3):
    ref = cluster3.populate(cluster3.places[0], [1], List(INT64))
    before = cluster3.hub.stats.frames_sent
    out = incs(ref, 5)
    pump_to(cluster3.places[1], out, out, passthrough(INT64), "list")
    assert cluster3.hub.stats.frames_sent == before


def test_two_applies_two_evaluations(cluster3):
    w = cluster3.workers[0]
    data = [1, 2, 3]
    ref = cluster3.populate(w.place, data, List(INT64))
    before = w.counters["spore_evals"]
    assert ref.send().result() == data
    assert w.counters["spore_evals"] == before
    assert incs(ref, 2).send().result() == [x + 0 + 1 for x in data]
    assert w.counters["spore_evals"] - before == 2


def test_concurrent_duplicate_requests_share_work(cluster3):
    w = cluster3.workers[1]
    ref = cluster3.populate(w.place, [1, 2], List(INT64))
    slow = ref.apply(make_spore([("s", 0.2, FLOAT64)], "test.sleep"))
    out = incs(slow, 2)
    before = w.counters["spore_evals"]
    futs = [out.send() for _ in range(5)]
    results = [f.result() for f in futs]
    assert all(r == [2, 3] for r in results)
    assert w.counters["spore_evals"] - before == 3


def test_pump_frame_economy(make_cluster):
    c = make_cluster(3, batch_size=100)
    a, b, dest = c.places
    left = c.populate(a, [1, 2], List(INT64))
    right = c.populate(b, [3, 4], List(INT64))
    before = Counter(c.hub.stats.by_link)
    assert Counter(pump_to(dest, left, right, passthrough(INT64), "list").send().result()) == Counter([1, 2, 3, 4])
    delta = Counter(c.hub.stats.by_link) - before
    into_dest = Counter()
    for (src, dst, tag), n in delta.items():
        if dst == dest.node_id:
            into_dest[tag] += n
    assert into_dest["EmitBatch"] == 2 and into_dest["PumpDone"] == 2


def test_empty_source_sends_only_done(make_cluster):
    c = make_cluster(3, batch_size=100)
    a, b, dest = c.places
    left = c.populate(a, [], List(INT64))
    right = c.populate(b, [5], List(INT64))
    before = Counter(c.hub.stats.by_link)
    assert pump_to(dest, left, right, passthrough(INT64), "list").send().result() == [5]
    delta = Counter(c.hub.stats.by_link) - before
    assert delta[(a.node_id, dest.node_id, "EmitBatch")] == 0
    assert delta[(a.node_id, dest.node_id, "PumpDone")] == 1
    assert delta[(b.node_id, dest.node_id, "EmitBatch")] == 1


def test_batches_split_by_batch_size(make_cluster):
    c = make_cluster(2, batch_size=2)
    a, dest = c.places
    left = c.populate(a, [1, 2, 3], List(INT64))
    right = c.populate(a, [], List(INT64))
    before = c.hub.stats.by_tag["EmitBatch"]
    assert pump_to(dest, left, right, passthrough(INT64), "list").send().result() == [1, 2, 3]
    assert c.hub.stats.by_tag["EmitBatch"] - before == 2


def test_per_source_order_and_window(make_cluster):
    c = make_cluster(3, batch_size=7, window=1)
    a, b, dest = c.places
    xs, ys = list(range(2000)), list(range(5000, 5500))
    left = c.populate(a, xs, List(INT64))
    right = c.populate(b, ys, List(INT64))
    before = Counter(c.hub.stats.by_tag)
    assert pump_to(dest, left, right, passthrough(INT64), "list").send().result() == xs + ys
    delta = Counter(c.hub.stats.by_tag) - before
    assert delta["EmitAck"] == delta["EmitBatch"] == -(-2000 // 7) + -(-500 // 7)


def test_source_failure_before_stream(cluster3):
    a, b, dest = cluster3.places
    left = cluster3.populate(a, [1, 13], List(INT64)).apply(make_spore([("bad", 13)], "test.boom_at"))
    right = cluster3.populate(b, [2], List(INT64))
    with pytest.raises(RemoteEvalError) as info:
        pump_to(dest, left, right, passthrough(INT64), "list").send().result()
    assert (info.value.origin, info.value.kind) == (a.node_id, "ValueError")


def test_source_failure_mid_stream(make_cluster):
    c = make_cluster(2, batch_size=3)
    a, dest = c.places
    left = c.populate(a, list(range(20)), List(INT64))
    right = c.populate(dest, [], List(INT64))
    boom = make_spore([("at", 11)], "test.emit_boom")
    with pytest.raises(RemoteEvalError) as info:
        pump_to(dest, left, right, boom, "list").send().result()
    assert info.value.kind == "RuntimeError" and "11" in info.value.message
    # The node is still healthy afterwards.
    assert pump_to(dest, left, right, passthrough(INT64), "list").send().result() == list(range(20))


def test_request_timeout(make_cluster):
    c = make_cluster(1, timeout=0.3)
    ref = c.populate(c.places[0], [1], List(INT64)).apply(make_spore([("s", 1.0, FLOAT64)], "test.sleep"))
    t0 = time.monotonic()
    with pytest.raises(NodeUnreachable):
        ref.send().result()
    assert time.monotonic() - t0 < 0.9


def test_lost_peer_fails_pending_requests():
    with socket_nodes(1) as (driver, places, workers):
        ref = driver.populate(places[0], [1], List(INT64))
        fut = ref.apply(make_spore([("s", 2.0, FLOAT64)], "test.sleep")).send()
        time.sleep(0.2)
        workers[0].close()
        with pytest.raises(NodeUnreachable):
            fut.result(timeout=5)


def test_exactly_one_reply_under_concurrency(cluster3):
    refs = [cluster3.populate(p, list(range(i, i + 10)), List(INT64))
            for i, p in enumerate(cluster3.places)]
    futs, lock = [], threading.Lock()

    def fire(i):
        r = incs(refs[i % 3], 1 + i % 4)
        f = r.send()
        with lock:
            futs.append((i, f))

    threads = [threading.Thread(target=fire, args=(i,)) for i in range(60)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for i, f in futs:
        n = 1 + i % 4
        assert f.result() == [x + sum(range(n)) for x in range(i % 3, i % 3 + 10)]
    assert not cluster3.driver._pending


def test_socket_large_reply():
    with socket_nodes(2) as (driver, places, workers):
        xs = list(range(200_000))
        a = driver.populate(places[0], xs, List(INT64))
        b = driver.populate(places[1], [-1], List(INT64))
        mapped = a.apply(lift("map", [make_spore([("k", 1)], "test.add")]))
        out = pump_to(places[1], mapped, b, passthrough(INT64), "list")
        assert out.send().result() == [x + 1 for x in xs] + [-1]


def test_send_future_exposes_payload(cluster3):
    ref = cluster3.populate(cluster3.places[0], [1, 2], List(INT64))
    f = ref.send()
    assert f.result() == [1, 2]
    assert f.payload == f.pickler.encode([1, 2])


def test_cluster_rejects_empty():
    with pytest.raises(ValueError):
        LocalCluster(0)
