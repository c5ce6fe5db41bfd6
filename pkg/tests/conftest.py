from __future__ import annotations

import contextlib

import pytest

import helpers  # noqa: F401  registers the test bodies and records
from scp.runtime import LocalCluster, NodeConfig, start_node


@pytest.fixture
def cluster3():
    with LocalCluster(3) as c:
        yield c


@pytest.fixture
def make_cluster():
    made = []

    def make(n, backend="specialized", **kw):
        c = LocalCluster(n, backend, **kw)
        made.append(c)
        return c

    yield make
    for c in made:
        c.close()


@contextlib.contextmanager
def socket_nodes(n: int, backend: str = "specialized", **kw):
    """*n* socket workers (ids 1..n) and a driver (id 0), all in this process."""
    workers = [start_node(NodeConfig(i, listen=("127.0.0.1", 0), backend=backend, **kw))
               for i in range(1, n + 1)]
    addrs = {w.node_id: w.transport.address for w in workers}
    for w in workers:
        for nid, addr in addrs.items():
            w.transport.add_peer(nid, addr)
    driver = start_node(NodeConfig(0, peers=addrs, backend=backend, **kw))
    try:
        yield driver, [w.place for w in workers], workers
    finally:
        driver.close()
        for w in workers:
            w.close()


@pytest.fixture
def sockets():
    return socket_nodes


# --- acceptance summary -----------------------------------------------------

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    failed = call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception)
    if call.when == "call" or failed:
        prev = _criteria.get(number, (title, "PASS"))[1]
        _criteria[number] = (title, "FAIL" if failed or prev == "FAIL" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"criterion {number} {status}: {title}")
