"""
Membership change and static sharding.

A reconfiguration runs two instances of the same shard side by side. The new
instance starts in reconfig mode with every bucket flagged ``needs_copy``;
the old one is switched to draining and answers clients with
``ReconfigError`` pointing at the new instance. Buckets are copied lazily on
first access and by a background sweep; when every bucket is copied the new
instance becomes normal and, after a grace period, the old one is retired.

Shards reuse the same machinery: a shard migrates by reconfiguring its
instance onto other servers.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional, Tuple

from .core import hash_key

log = logging.getLogger(__name__)

NUM_SHARDS = 256
SHARD_HASH_SEED = 0x5EED

NORMAL = "normal"
RECONFIG = "reconfig"
DRAINING = "draining"
RETIRED = "retired"


class ReconfigInProgress(RuntimeError):
    pass


@dataclass(frozen=True)
class InstanceDescriptor:
    instance_id: int
    shard: int
    members: Tuple[int, ...]
    mode: str = NORMAL
    copying_from: Optional[int] = None

    @property
    def epoch(self) -> int:
        return self.instance_id


@dataclass(frozen=True)
class DescriptorUpdate:
    """Publication of a shard's current instance to clients."""

    data: bytes


_DESC_HEAD = struct.Struct("<QHH")


def encode_descriptor(desc: InstanceDescriptor) -> bytes:
    """epoch u64 | shard u16 | member count u16 | member u32 * count."""
    return _DESC_HEAD.pack(desc.instance_id, desc.shard, len(desc.members)) + \
        struct.pack("<%dI" % len(desc.members), *desc.members)


def decode_descriptor(data: bytes) -> InstanceDescriptor:
    if len(data) < _DESC_HEAD.size:
        raise ValueError("truncated descriptor")
    epoch, shard, count = _DESC_HEAD.unpack_from(data)
    if len(data) != _DESC_HEAD.size + 4 * count:
        raise ValueError("descriptor length mismatch")
    members = struct.unpack_from("<%dI" % count, data, _DESC_HEAD.size)
    return InstanceDescriptor(epoch, shard, tuple(members))


class ShardMap:
    """shard -> current instance descriptor; a fixed number of shards."""

    def __init__(self, num_shards: int = NUM_SHARDS,
                 descriptors: Optional[Dict[int, InstanceDescriptor]] = None):
        if num_shards < 1:
            raise ValueError("num_shards must be >= 1")
        self.num_shards = num_shards
        self.descriptors: Dict[int, InstanceDescriptor] = dict(descriptors or {})

    @classmethod
    def single(cls, desc: InstanceDescriptor) -> "ShardMap":
        return cls(max(desc.shard + 1, 1), {desc.shard: desc})

    def copy(self) -> "ShardMap":
        return ShardMap(self.num_shards, self.descriptors)

    def shard_of(self, key: bytes) -> int:
        if self.num_shards == 1:
            return 0
        return hash_key(key, self.num_shards, seed=SHARD_HASH_SEED)

    def descriptor(self, shard: int) -> InstanceDescriptor:
        return self.descriptors[shard]

    def route(self, key: bytes) -> Tuple[int, InstanceDescriptor]:
        shard = self.shard_of(key)
        return shard, self.descriptors[shard]

    def update(self, desc: InstanceDescriptor) -> bool:
        cur = self.descriptors.get(desc.shard)
        if cur is not None and cur.instance_id >= desc.instance_id:
            return False
        self.descriptors[desc.shard] = desc
        return True


def bucket_of(key: bytes, buckets_per_shard: int) -> int:
    """Bucket index of ``key`` inside its shard."""
    return hash_key(key, buckets_per_shard)


class ReconfigController:
    """
    Sequential driver of the reconfiguration steps for a cluster.

    ``start_reconfig`` creates the new instance, drains the old one and
    publishes the new descriptor immediately; the copy then proceeds in
    virtual time, and ``on_done(shard)`` fires once the old instance retires.
    """

    def __init__(self, cluster, check_interval_ms: Optional[float] = None):
        self.cluster = cluster
        sim = cluster.sim
        self.check_interval = int(sim.detection_timeout if check_interval_ms is None
                                  else check_interval_ms * 1000)
        self.active: Dict[int, dict] = {}
        self.completed: Dict[int, InstanceDescriptor] = {}
        self.log = []

    def start_reconfig(self, shard: int, new_members, on_done: Optional[Callable] = None):
        if shard in self.active:
            raise ReconfigInProgress("shard %d is already reconfiguring" % shard)
        cluster = self.cluster
        old = cluster.shard_map.descriptor(shard)
        if old.mode != NORMAL:
            raise ReconfigInProgress("shard %d instance is %s" % (shard, old.mode))
        new = cluster.spawn_instance(shard, tuple(new_members), reconfig_source=old)
        self._log("created", new)
        # step 2: the old instance rejects every client request from now on
        for node in cluster.nodes(old.instance_id):
            node.drain(new)
        cluster.set_descriptor(replace(old, mode=DRAINING), current=False)
        self._log("draining", old)
        # step 3: tell the clients
        cluster.publish(new)
        self._log("published", new)
        state = {"old": old, "new": new, "on_done": on_done, "nudge": 0}
        self.active[shard] = state
        for node in cluster.nodes(new.instance_id):
            node.on_copy_complete = lambda n, s=shard: self._copy_complete(s)
        # step 4: copy in the background, driven by the new instance's leader
        self._watch(shard)
        return new

    def _log(self, what, desc):
        self.log.append((self.cluster.sim.now, what, desc.shard, desc.instance_id))

    def _watch(self, shard: int) -> None:
        state = self.active.get(shard)
        if state is None or state.get("copied"):
            return
        cluster = self.cluster
        new = state["new"]
        if cluster.leader_node(new.instance_id) is None:
            live = [n for n in cluster.nodes(new.instance_id)
                    if cluster.sim.is_alive(n.server_id) and not n._electing]
            if live:
                node = live[state["nudge"] % len(live)]
                state["nudge"] += 1
                node.start_election()
        else:
            leader = cluster.leader_node(new.instance_id)
            if not leader._sweep_running:
                leader.start_sweep()
        cluster.sim.schedule(self.check_interval, self._watch, shard)

    def _copy_complete(self, shard: int) -> None:
        state = self.active.get(shard)
        if state is None or state.get("copied"):
            return
        state["copied"] = True
        cluster = self.cluster
        new = state["new"]
        for node in cluster.nodes(new.instance_id):
            node.finish_reconfig()
        normal = replace(new, mode=NORMAL, copying_from=None)
        cluster.set_descriptor(normal)
        self._log("normal", new)
        grace = 2 * cluster.sim.detection_timeout
        cluster.sim.schedule(grace, self._retire, shard)

    def _retire(self, shard: int) -> None:
        state = self.active.pop(shard)
        old = state["old"]
        self.cluster.retire_instance(old.instance_id)
        self._log("retired", old)
        self.completed[shard] = state["new"]
        if state["on_done"] is not None:
            state["on_done"](shard)
