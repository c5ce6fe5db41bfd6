"""An in-process cluster of worker nodes plus a driver, over one loopback hub."""
from __future__ import annotations

from typing import Optional

from ..picklers import Backend
from ..registry import DEFAULT, Registry
from ..silo import Place
from .node import NodeConfig, NodeRuntime, start_node
from .transport import LoopbackHub


class LocalCluster:
    """``n`` worker nodes (ids 1..n) and a driver node 0 that issues requests.

    All handshakes happen at construction, so the hub's counters afterwards
    only see workload traffic.
    """

    def __init__(self, n: int, backend: "Backend | str" = Backend.SPECIALIZED, *,
                 batch_size: int = 512, timeout: float = 30.0, window: int = 4,
                 registry: Optional[Registry] = None, hub: Optional[LoopbackHub] = None):
        if n < 1:
            raise ValueError("a cluster needs at least one worker")
        self.hub = hub or LoopbackHub()
        registry = registry or DEFAULT
        self.nodes: list[NodeRuntime] = []
        try:
            for i in range(n + 1):
                cfg = NodeConfig(i, backend=backend, batch_size=batch_size, timeout=timeout,
                                 window=window, registry=registry)
                self.nodes.append(start_node(cfg, hub=self.hub))
            for a in self.nodes:
                for b in self.nodes:
                    if a.node_id < b.node_id:
                        a.connect(b.node_id)
        except BaseException:
            self.close()
            raise

    @property
    def driver(self) -> NodeRuntime:
        return self.nodes[0]

    @property
    def workers(self) -> list[NodeRuntime]:
        return self.nodes[1:]

    @property
    def places(self) -> list[Place]:
        return [w.place for w in self.workers]

    def populate(self, place: Place, data, tag=None):
        return self.driver.populate(place, data, tag)

    def close(self) -> None:
        for node in reversed(self.nodes):
            node.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
