"""
Seeded consistency runs: generate a workload, drive it against a simulated
cluster under faults, and check the recorded history.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, List, Optional, Tuple

from ..client import ClientConfig, Indeterminate, RetriesExhausted
from ..core import NotALeader, ReconfigError
from ..cluster import Cluster
from ..node import LeaderObserver, NodeConfig
from ..simnet import SimConfig, Simulator, ms
from .history import History
from .linearizability import DEFAULT_BUDGET, Linearizable, check
from .workload import WorkloadParams, generate_workload

# yield points in the node where extra delay widens race windows
CHAOS_POINTS = frozenset({"write.before_send", "recovery.after_read", "read.before_validate"})


def acknowledged(response) -> bool:
    """True for a definite answer from the service."""
    return not isinstance(response, (Indeterminate, RetriesExhausted, NotALeader, ReconfigError))


class ClosedLoopClient:
    """Issues its script one request at a time, recording every invoke/respond."""

    def __init__(self, sim: Simulator, client, script: Iterable, *,
                 history: Optional[History] = None, name=None,
                 on_response: Optional[Callable] = None):
        self.sim = sim
        self.client = client
        self.script: Iterator = iter(script)
        self.history = history
        self.name = str(client.client_id if name is None else name)
        self.on_response = on_response
        # (respond time, latency us, acknowledged)
        self.latencies: List[Tuple[int, int, bool]] = []
        self.finished = False
        self.current = None
        self._invoked_at = 0
        self._stopped = False

    def start(self) -> None:
        self._next()

    def stop(self) -> None:
        self._stopped = True

    def _next(self) -> None:
        if self._stopped:
            self.finished = True
            return
        op = next(self.script, None)
        if op is None:
            self.finished = True
            return
        self.current = op
        self._invoked_at = self.sim.now
        if self.history is not None:
            self.history.invoke_op(self.sim.now, self.name, op)
        self.client.submit(op, self._done)

    def _done(self, response) -> None:
        op, self.current = self.current, None
        now = self.sim.now
        if self.history is not None:
            self.history.respond_op(now, self.name, op, response)
        self.latencies.append((now, now - self._invoked_at, acknowledged(response)))
        if self.on_response is not None:
            self.on_response(self, op, response)
        self._next()


@dataclass
class CheckerParams:
    servers: int = 3
    clients: int = 8
    keys: Optional[int] = None          # None: drawn per seed from [1, 64]
    ops_per_client: int = 30
    drop_rate: float = 0.05
    kill_leader: bool = True
    kill_after_ms: Tuple[float, float] = (20.0, 120.0)
    recover_after_ms: Optional[Tuple[float, float]] = (100.0, 300.0)
    chaos_rate: float = 0.0
    num_buckets: int = 64
    mutant: bool = False
    max_time_ms: float = 120_000.0
    budget: int = DEFAULT_BUDGET
    distribution: str = "uniform"


@dataclass
class CheckResult:
    seed: int
    verdict: object
    history: History
    keys: int
    leader_violations: list = field(default_factory=list)
    killed: Optional[int] = None
    end_time: int = 0
    finished: bool = True

    @property
    def ok(self) -> bool:
        return self.verdict.ok and not self.leader_violations and self.finished


def run_check(seed: int, params: Optional[CheckerParams] = None) -> CheckResult:
    params = params or CheckerParams()
    plan = random.Random(seed * 7919 + 17)
    keys = params.keys or plan.randint(1, 64)
    sim = Simulator(SimConfig(seed=seed, drop_rate=params.drop_rate,
                              chaos_rate=params.chaos_rate, chaos_points=CHAOS_POINTS))
    observer = LeaderObserver(strict=False)
    cluster = Cluster(sim, range(params.servers), observer=observer,
                      node_config=NodeConfig(num_buckets=params.num_buckets,
                                             skip_recovery_writeback=params.mutant))
    cluster.bootstrap()
    wl = WorkloadParams(clients=params.clients, keys=keys,
                        ops_per_client=params.ops_per_client,
                        distribution=params.distribution)
    scripts = generate_workload(seed, wl)
    history = History()
    runners = []
    for i, script in enumerate(scripts):
        client = cluster.add_client("c%d" % i, ClientConfig())
        runners.append(ClosedLoopClient(sim, client, script, history=history))
    sim.run_for(ms(5))
    for r in runners:
        r.start()

    killed = []
    if params.kill_leader:
        recover = None
        if params.recover_after_ms is not None:
            recover = ms(plan.uniform(*params.recover_after_ms))

        def kill():
            leader = cluster.leader()
            if leader is None:
                sim.schedule(ms(5), kill)
                return
            killed.append(leader.server_id)
            sim.crash(leader.server_id, recover_after=recover)

        sim.schedule(ms(plan.uniform(*params.kill_after_ms)), kill)

    deadline = ms(params.max_time_ms)
    while not all(r.finished for r in runners) and sim.now < deadline:
        sim.run_for(ms(10))
    finished = all(r.finished for r in runners)
    verdict = check(history, budget=params.budget)
    return CheckResult(seed, verdict, history, keys, list(observer.violations),
                       killed[0] if killed else None, sim.now, finished)


def run_many(seeds: Iterable[int], params: Optional[CheckerParams] = None,
             stop_on_violation: bool = False):
    """Yield a CheckResult per seed."""
    for seed in seeds:
        res = run_check(seed, params)
        yield res
        if stop_on_violation and not res.verdict.ok:
            return
