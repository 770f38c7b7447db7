"""Small drivers shared by the protocol tests."""

from bizur.node import LeaderObserver, Node, NodeConfig
from bizur.simnet import SimConfig, Simulator, ms


def make_nodes(n=3, seed=0, drop_rate=0.0, **config):
    config.setdefault("background_sweep", False)
    sim = Simulator(SimConfig(seed=seed, drop_rate=drop_rate))
    members = tuple(range(n))
    cfg = NodeConfig(**config)
    observer = LeaderObserver()
    nodes = [Node(sim, s, members, instance=1, config=cfg, observer=observer)
             for s in members]
    return sim, nodes


def elect(sim, node):
    won = []
    node.start_election(won.append)
    sim.run_for(ms(20))
    assert won == [True]
    return node


def run(sim, node, gen, limit_ms=500):
    """Run coroutine ``gen`` on ``node`` to completion; return its result."""
    out = []
    node.spawn(gen, out.append)
    deadline = sim.now + ms(limit_ms)
    while not out and sim.now < deadline:
        if not sim.step():
            break
    assert out, "coroutine did not finish"
    return out[0]


def plant(node, bucket):
    node.store.save(bucket)
    node.local_buckets[bucket.index] = bucket


def cross_node_sent(sim):
    return sum(sim.sent.values())
