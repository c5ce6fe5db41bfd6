"""Node runtime, wire protocol and transports."""
from .cluster import LocalCluster
from .node import NetEmitter, NodeConfig, NodeRuntime, SendFuture, start_node
from .transport import LoopbackHub, LoopbackTransport, SocketTransport, TransportStats

__all__ = [
    "LocalCluster", "LoopbackHub", "LoopbackTransport", "NetEmitter", "NodeConfig", "NodeRuntime",
    "SendFuture", "SocketTransport", "TransportStats", "start_node",
]
