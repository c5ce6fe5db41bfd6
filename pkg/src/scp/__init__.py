"""Distributed immutable collections driven by serializable closures.

Data lives in typed, stationary silos on worker nodes. Programs build
lineage through ``SiloRef.apply`` and ``pump_to`` without moving any data,
and ``send`` ships the lineage to the silo's node, which materializes it
and returns the result through a future. Functions travel as spores: a
registered body id plus an explicitly declared, pre-encoded environment.
"""
from .errors import (BindFailure, BuilderUnknown, DecodeFailure, DuplicateBodyId, FramingError,
                     NodeUnreachable, PicklerMismatch, RegistryMismatch, RemoteEvalError, ScpError,
                     SizeMismatch, TypeMismatch, UnencodableCapture, UnknownBodyId, UnknownSilo,
                     UnsupportedType)
from .tags import (ANY, BOOL, FLOAT64, INT32, INT64, STRING, UNIT, Emitter, Int32, Int64, List, Map,
                   Option, Tuple, TypeTag, conforms, infer_tag, parse, record, render, tag_of)
from .picklers import Backend, Pickler, derive_picklers, pickle, pickler_by_id, pickler_for, unpickle
from .registry import DEFAULT, BuilderFactory, Registry, spore_body
from .spore import EnvEntry, Spore, compose, eval_spore, lift, make_spore, pickle_spore, unpickle_spore
from .silo import (Apply, CollectingEmitter, ListBuilder, Place, PumpTo, Silo, SiloId, SiloRef, Source,
                   evaluate, pump_to)
from .combinators import Partitioner, fnv1a_64, group_by_key, hash_join, map_silo, passthrough, union
from .runtime import LocalCluster, NodeConfig, NodeRuntime, start_node

# Worker processes started from the command line register the benchmark
# bodies; importing them here keeps registry fingerprints equal by default.
from . import bench  # noqa: E402,F401

__version__ = "0.1.0"
