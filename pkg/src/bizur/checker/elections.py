"""Randomized election stress: many tiny simulations hunting for two leaders."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import List, Optional

from ..node import LeaderObserver, Node, NodeConfig
from ..simnet import SimConfig, Simulator, ms


@dataclass
class ElectionRun:
    seed: int
    servers: int
    drop_rate: float
    elections: int = 0
    wins: int = 0
    violations: List[tuple] = field(default_factory=list)


def election_stress(seed: int, servers: Optional[int] = None, duration_ms: float = 60.0,
                    node_factory=Node) -> ElectionRun:
    """One short run with concurrent elections, drops, partitions and crashes.

    Both the global observer (every win is reported) and a scan of the live
    ``is_leader`` flags after every fault look for two leaders of one
    ``elect_id``.
    """
    plan = random.Random(seed)
    n = servers or plan.choice((3, 5))
    drop = plan.uniform(0.0, 0.2)
    sim = Simulator(SimConfig(seed=seed, drop_rate=drop))
    observer = LeaderObserver(strict=False)
    members = tuple(range(n))
    config = NodeConfig(background_sweep=False, quorum_timeout_ms=plan.choice((5.0, 20.0, 50.0)),
                        retransmit_ms=plan.choice((2.0, 10.0)))
    nodes = [node_factory(sim, s, members, instance=1, config=config, observer=observer)
             for s in members]
    run = ElectionRun(seed, n, drop)

    def scan():
        holders = {}
        for node in nodes:
            if node.is_leader and sim.is_alive(node.server_id):
                holders.setdefault(node.elect_id, []).append(node.server_id)
        for eid, who in holders.items():
            if len(who) > 1:
                run.violations.append((1, eid, tuple(sorted(who))))

    horizon = ms(duration_ms)
    for _ in range(plan.randint(2, 8)):
        node = plan.choice(nodes)
        sim.schedule(plan.randrange(horizon), node.start_election)
    for _ in range(plan.randint(0, 3)):
        at = plan.randrange(horizon)
        kind = plan.random()
        if kind < 0.4:
            victim = plan.choice(members)
            recover = ms(plan.uniform(1, duration_ms)) if plan.random() < 0.7 else None
            sim.schedule(at, sim.crash, victim, recover)
        elif kind < 0.8:
            shuffled = list(members)
            plan.shuffle(shuffled)
            cut = plan.randint(1, n - 1)
            sim.schedule(at, sim.partition, [shuffled[:cut], shuffled[cut:]])
            sim.schedule(at + ms(plan.uniform(1, duration_ms)), sim.heal)
        else:
            a, b = plan.sample(members, 2)
            sim.schedule(at, sim.block, a, b)
        sim.schedule(at + 1, scan)
    step = ms(5)
    t = 0
    while t < horizon + ms(60):
        t += step
        sim.run_until(t)
        scan()
    run.elections = sum(node.stats["elections"] for node in nodes)
    run.wins = sum(len(w) for w in observer.leaders.values())
    run.violations.extend(observer.violations)
    return run
