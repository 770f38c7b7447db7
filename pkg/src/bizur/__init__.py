"""Bizur key-value consensus, run inside a deterministic network simulator."""

from .core import (
    Bucket, BucketVersion, compare_versions, decode, decode_keys,
    deserialize_bucket, encode_delete, encode_set, hash_key, serialize_bucket,
)
from .client import Client, ClientConfig, Indeterminate, RetriesExhausted
from .cluster import Cluster
from .node import LeaderObserver, MemoryStore, Node, NodeConfig
from .reconfig import InstanceDescriptor, ReconfigController, ShardMap
from .simnet import SimConfig, Simulator, ms

__version__ = "0.1.0"
