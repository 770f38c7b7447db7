"""
A three-server key-value store in simulated time
================================================

"""

from bizur import Cluster, SimConfig, Simulator, ms
from bizur.core import CasSet, Delete, Get, IterateKeys, Set

sim = Simulator(SimConfig(seed=1))
cluster = Cluster(sim, servers=(0, 1, 2))
cluster.bootstrap()
sim.run_for(ms(10))
print("leader:", cluster.leader())

client = cluster.add_client("alice")


def call(op):
    out = []
    client.submit(op, out.append)
    while not out:
        sim.run_for(ms(1))
    return out[0]


print(call(Set(b"color", b"blue")))
print(call(Get(b"color")))
print(call(CasSet(b"color", b"red", b"green")))    # expected value is wrong
print(call(CasSet(b"color", b"blue", b"green")))
print(call(Set(b"shape", b"round")))
print(call(Delete(b"shape")))
print(call(IterateKeys()))

# every hop went through the simulator; nothing real was sent
print("virtual time %.1f ms" % (sim.now / 1000))
print(dict(sim.sent))
