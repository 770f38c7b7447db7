"""
Assembly of simulated clusters: instances per shard, durable stores, the
leader observer and clients.
"""

from __future__ import annotations

import itertools
from dataclasses import replace
from typing import Dict, Iterable, List, Optional

from .client import Client, ClientConfig
from .core import Envelope
from .node import LeaderObserver, MemoryStore, Node, NodeConfig
from .reconfig import (
    NORMAL, RECONFIG, RETIRED, DescriptorUpdate, InstanceDescriptor, ShardMap,
    encode_descriptor,
)
from .simnet import Simulator


class Cluster:
    def __init__(self, sim: Simulator, servers: Iterable[int] = (0, 1, 2), *,
                 num_shards: int = 1, node_config: Optional[NodeConfig] = None,
                 observer: Optional[LeaderObserver] = None, placement=None):
        self.sim = sim
        self.servers = tuple(servers)
        self.node_config = node_config or NodeConfig()
        self.observer = observer if observer is not None else LeaderObserver()
        self.shard_map = ShardMap(num_shards)
        self.instances: Dict[int, List[Node]] = {}
        self.descriptors: Dict[int, InstanceDescriptor] = {}
        self.stores: Dict[tuple, MemoryStore] = {}
        self.clients: List[Client] = []
        self._instance_ids = itertools.count(1)
        for shard in range(num_shards):
            members = placement(shard) if placement else self.servers
            self.spawn_instance(shard, tuple(members))

    @property
    def num_shards(self) -> int:
        return self.shard_map.num_shards

    def spawn_instance(self, shard: int, members, reconfig_source=None) -> InstanceDescriptor:
        iid = next(self._instance_ids)
        mode = RECONFIG if reconfig_source is not None else NORMAL
        desc = InstanceDescriptor(iid, shard, tuple(members), mode,
                                  reconfig_source.instance_id if reconfig_source else None)
        nodes = []
        for sid in members:
            store = self.stores.setdefault((iid, sid), MemoryStore())
            nodes.append(Node(self.sim, sid, members, instance=iid,
                              config=self.node_config, store=store,
                              observer=self.observer, reconfig_source=reconfig_source))
        self.instances[iid] = nodes
        self.set_descriptor(desc)
        return desc

    def set_descriptor(self, desc: InstanceDescriptor, current: bool = True) -> None:
        self.descriptors[desc.instance_id] = desc
        if current:
            self.shard_map.descriptors[desc.shard] = desc

    def retire_instance(self, instance_id: int) -> None:
        for node in self.instances.get(instance_id, []):
            self.sim.unregister(node.address)
        desc = self.descriptors[instance_id]
        self.descriptors[instance_id] = replace(desc, mode=RETIRED)

    def nodes(self, instance_id: int) -> List[Node]:
        return self.instances[instance_id]

    def shard_nodes(self, shard: int = 0) -> List[Node]:
        return self.instances[self.shard_map.descriptor(shard).instance_id]

    def leader_node(self, instance_id: int) -> Optional[Node]:
        best = None
        for n in self.instances[instance_id]:
            if n.is_leader and self.sim.is_alive(n.server_id):
                if best is None or n.elect_id > best.elect_id:
                    best = n
        return best

    def leader(self, shard: int = 0) -> Optional[Node]:
        return self.leader_node(self.shard_map.descriptor(shard).instance_id)

    def node(self, server: int, shard: int = 0) -> Node:
        for n in self.shard_nodes(shard):
            if n.server_id == server:
                return n
        raise KeyError(server)

    def bootstrap(self, shards: Optional[Iterable[int]] = None) -> None:
        """Start one election per shard, spreading the leaders over the members."""
        for shard in (range(self.num_shards) if shards is None else shards):
            nodes = self.shard_nodes(shard)
            nodes[shard % len(nodes)].start_election()

    def add_client(self, client_id, config: Optional[ClientConfig] = None) -> Client:
        c = Client(self.sim, client_id, self.shard_map.copy(), config=config)
        self.clients.append(c)
        return c

    def publish(self, desc: InstanceDescriptor) -> None:
        data = encode_descriptor(desc)
        for c in self.clients:
            self.sim.send(Envelope(self.sim.next_msg_id(), ("controller",), c.address,
                                   DescriptorUpdate(data)))
