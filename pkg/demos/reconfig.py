"""
Moving a shard onto new servers
===============================

"""

from bizur import Cluster, NodeConfig, SimConfig, Simulator, ms
from bizur.core import Get, Set
from bizur.reconfig import ReconfigController

sim = Simulator(SimConfig(seed=2))
cluster = Cluster(sim, (0, 1, 2), node_config=NodeConfig(num_buckets=16))
cluster.bootstrap()
sim.run_for(ms(10))
client = cluster.add_client("c")

for i in range(20):
    client.submit(Set(b"key%d" % i, b"value%d" % i), lambda r: None)
sim.run_for(ms(200))

# servers 3, 4, 5 take over; buckets are copied on first touch and by the sweep
ctl = ReconfigController(cluster)
ctl.start_reconfig(0, (3, 4, 5))
sim.run_for(ms(1500))
for when, what, shard, instance in ctl.log:
    print("%7.1f ms  %-9s instance %d" % (when / 1000, what, instance))

# the old servers can go away now
for s in (0, 1, 2):
    sim.crash(s)
got = []
client.submit(Get(b"key7"), got.append)
sim.run_for(ms(100))
print(got, cluster.shard_map.descriptor(0))
