import signal
import socket
import statistics
import subprocess
import sys
from collections import Counter

import pytest

from scp.bench import (GateFailure, Person, bench, by_decile, check_gate, gen_people, oracle,
                       parse_report, split)
from scp.bench.harness import Workload
from scp.cli import main, parse_address, read_kv
from scp.runtime import LocalCluster


def test_gen_people_is_deterministic():
    assert gen_people(5, 42) == gen_people(5, 42)
    assert gen_people(5, 42) != gen_people(5, 43)
    assert gen_people(0, 1) == []
    with pytest.raises(ValueError):
        gen_people(-1, 0)


def test_gen_people_distribution():
    people = gen_people(100_000, 7)
    deciles = Counter(p.age // 10 for p in people)
    assert sorted(deciles) == list(range(10))
    assert all(0 <= p.age < 100 and p.name for p in people)
    assert [p.id for p in people[:3]] == [0, 1, 2]


def test_split_is_even():
    parts = split(list(range(10)), 4)
    assert [len(p) for p in parts] == [3, 3, 2, 2]
    assert sum(parts, []) == list(range(10))
    assert split([], 3) == [[], [], []]


def test_by_decile_spore():
    assert by_decile()(Person(1, "a", 47)) == (4, Person(1, "a", 47))


def test_gate_rejects_wrong_results():
    from scp import INT64, Partitioner
    people = gen_people(50, 1)
    part = Partitioner.hash(2, INT64)
    good = [[], []]
    for k, vs in oracle(people).items():
        good[part(k)].append((k, vs))
    check_gate(good, people, part)
    with pytest.raises(GateFailure):
        check_gate([good[1], good[0]], people, part)
    dropped = [[(k, vs[1:]) for k, vs in g] for g in good]
    with pytest.raises(GateFailure):
        check_gate(dropped, people, part)


def grouped_multiset(results):
    return Counter((k, p) for groups in results for k, vs in groups for p in vs)


def test_backends_give_identical_groups():
    people = gen_people(1000, 3)
    seen = []
    for backend in ("generic", "specialized"):
        with LocalCluster(4, backend) as c:
            _, results = Workload(c.driver, c.places, people).run()
            check_gate(results, people, Workload(c.driver, c.places, []).part)
            seen.append(grouped_multiset(results))
    assert seen[0] == seen[1]
    assert sum(seen[0].values()) == 1000


def test_local_bench_report(capsys):
    assert main(["bench", "--local", "--records", "400", "--reps", "3", "--warmup", "1"]) == 0
    text = capsys.readouterr().out
    rep = parse_report(text)
    assert rep["gates"] == {"generic": "pass", "specialized": "pass"}
    for backend, runs in rep["runs"].items():
        assert len(runs) == 3
        assert rep["medians"][backend] == pytest.approx(statistics.median(runs), abs=1e-3)
    g, s = rep["medians"]["generic"], rep["medians"]["specialized"]
    assert rep["speedup"] == pytest.approx((g - s) / g, abs=1e-3)
    assert text.startswith("# timing: first send()")


def test_empty_bench_is_well_formed():
    lines = []
    reports = bench(records=0, reps=2, warmup=0, local=True, log=lines.append)
    assert [r.gate_passed for r in reports] == [True, True]
    assert all(len(r.runs_ms) == 2 for r in reports)
    assert any(line.startswith("speedup,") for line in lines)


def test_gen_command(capsys):
    assert main(["gen", "--records", "3", "--seed", "42"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "id,name,age"
    assert lines[1:] == [f"{p.id},{p.name},{p.age}" for p in gen_people(3, 42)]


def test_bad_flag_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["node", "--no-such-flag"])
    assert info.value.code == 2
    proc = subprocess.run([sys.executable, "-m", "scp", "bench", "--bogus"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


def test_kv_and_address_parsing(tmp_path):
    f = tmp_path / "peers.cfg"
    f.write_text("# peers\n1=127.0.0.1:7001\n\n2 = host:7002  # second\n")
    assert read_kv(str(f)) == {"1": "127.0.0.1:7001", "2": "host:7002"}
    assert parse_address(":7001") == ("0.0.0.0", 7001)
    with pytest.raises(ValueError):
        parse_address("nohost")


def _free_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


TESTS_DIR = __import__("os").path.dirname(__file__)
# Runs the CLI after registering the test bodies, so its registry matches this process.
SHIM = f"import sys; sys.path.insert(0, {TESTS_DIR!r}); import helpers; from scp.cli import main; sys.exit(main())"


def test_node_process_serves_and_stops_on_sigterm(tmp_path):
    port = _free_port()
    cfg = tmp_path / "node.cfg"
    cfg.write_text(f"id=1\nlisten=127.0.0.1:{port}\nbackend=generic\nbatch-size=64\n")
    proc = subprocess.Popen([sys.executable, "-c", SHIM, "node", "--config", str(cfg)],
                            stdout=subprocess.PIPE, text=True)
    try:
        assert proc.stdout.readline().strip() == f"ready 1 127.0.0.1:{port}"
        from scp import INT64, List, NodeConfig, start_node
        d = start_node(NodeConfig(0, peers={1: ("127.0.0.1", port)}, backend="generic"))
        try:
            from scp import Place
            assert d.populate(Place(1), [4, 5], List(INT64)).send().result() == [4, 5]
        finally:
            d.close()
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(10) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
        proc.stdout.close()


def test_node_bind_failure_exits_nonzero():
    holder = socket.socket()
    holder.bind(("127.0.0.1", 0))
    holder.listen(1)
    try:
        host, port = holder.getsockname()
        proc = subprocess.run([sys.executable, "-m", "scp", "node", "--id", "1",
                               "--listen", f"{host}:{port}"], capture_output=True, text=True, timeout=30)
        assert proc.returncode != 0 and "cannot bind" in proc.stderr
    finally:
        holder.close()
