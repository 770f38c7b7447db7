"""
Deterministic discrete-event network simulator.

Virtual time is an integer number of microseconds. One seeded ``random.Random``
owned by the simulator is the only source of randomness, and it is consumed in
event order, so a (seed, scenario) pair always produces the same execution.

Endpoints (node instances, clients) are registered against a *host*. Faults
apply to hosts: crashing a host silences every endpoint on it and partitions
block traffic between hosts.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Hashable, Iterable, List, Optional

from .core import Envelope

log = logging.getLogger(__name__)

US_PER_MS = 1000
US_PER_SEC = 1_000_000
DEFAULT_DETECTION_TIMEOUT_MS = 100.0


def ms(value: float) -> int:
    """Milliseconds to integer microseconds."""
    return int(round(value * US_PER_MS))


class SimulationBudgetExceeded(RuntimeError):
    """run_to_quiescence ran out of events; likely a livelock."""


@dataclass
class SimConfig:
    seed: int = 0
    latency_min_ms: float = 0.5
    latency_max_ms: float = 2.0
    drop_rate: float = 0.0
    partitions: FrozenSet[FrozenSet[Hashable]] = frozenset()
    detection_timeout_ms: float = DEFAULT_DETECTION_TIMEOUT_MS
    # chaos yield points: probability a named point is perturbed, max extra delay
    chaos_rate: float = 0.0
    chaos_max_delay_ms: float = 5.0
    chaos_points: Optional[FrozenSet[str]] = None
    trace: bool = False

    def __post_init__(self):
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError("drop_rate must be within [0, 1]")
        if self.latency_min_ms > self.latency_max_ms:
            raise ValueError("latency_min_ms must not exceed latency_max_ms")
        if self.latency_min_ms < 0:
            raise ValueError("latency must be non-negative")
        if not 0.0 <= self.chaos_rate <= 1.0:
            raise ValueError("chaos_rate must be within [0, 1]")

    @property
    def rtt_us(self) -> int:
        """Worst-case round trip under the configured latency bounds."""
        return 2 * ms(self.latency_max_ms)


class Event:
    __slots__ = ("time", "seq", "fn", "args", "host", "incarnation",
                 "src_host", "src_incarnation", "cancelled", "kind")

    def __init__(self, time, seq, fn, args, host=None, incarnation=0,
                 src_host=None, src_incarnation=0, kind="timer"):
        self.time = time
        self.seq = seq
        self.fn = fn
        self.args = args
        self.host = host
        self.incarnation = incarnation
        self.src_host = src_host
        self.src_incarnation = src_incarnation
        self.cancelled = False
        self.kind = kind

    def cancel(self) -> None:
        self.cancelled = True

    def __lt__(self, other):
        return (self.time, self.seq) < (other.time, other.seq)


@dataclass
class _Endpoint:
    handler: Callable[[Envelope], None]
    host: Hashable
    process: object = None


class Simulator:
    """Single-threaded event loop with a seeded network model."""

    def __init__(self, config: Optional[SimConfig] = None, *,
                 latency: Optional[Callable[[random.Random], int]] = None):
        self.config = config or SimConfig()
        self.rng = random.Random(self.config.seed)
        self.now = 0
        self._queue: List[Event] = []
        self._seq = itertools.count()
        self._msg_ids = itertools.count(1)
        self.endpoints: Dict[Hashable, _Endpoint] = {}
        self.alive: Dict[Hashable, bool] = {}
        self.incarnation: Dict[Hashable, int] = {}
        self.drop_rate = self.config.drop_rate
        self.blocked = set(self.config.partitions)
        self.delay_rules: List[tuple] = []
        self.sent = Counter()
        self.delivered = Counter()
        self.dropped = Counter()
        self.trace: Optional[List[str]] = [] if self.config.trace else None
        self.events_executed = 0
        self._latency = latency or self._uniform_latency
        self._lat_min = ms(self.config.latency_min_ms)
        self._lat_max = ms(self.config.latency_max_ms)

    # -- setup -------------------------------------------------------------

    def register(self, address, handler, host=None, process=None) -> None:
        host = address if host is None else host
        self.endpoints[address] = _Endpoint(handler, host, process)
        self.alive.setdefault(host, True)
        self.incarnation.setdefault(host, 0)

    def unregister(self, address) -> None:
        self.endpoints.pop(address, None)

    def host_of(self, address):
        ep = self.endpoints.get(address)
        return ep.host if ep else address

    def next_msg_id(self) -> int:
        return next(self._msg_ids)

    @property
    def detection_timeout(self) -> int:
        return ms(self.config.detection_timeout_ms)

    # -- scheduling --------------------------------------------------------

    def schedule(self, delay: int, fn: Callable, *args, host=None) -> Event:
        """Run ``fn(*args)`` after ``delay`` microseconds; returns a cancellable handle.

        A timer bound to ``host`` is discarded if that host crashes first.
        """
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        ev = Event(self.now + int(delay), next(self._seq), fn, args,
                   host=host, incarnation=self.incarnation.get(host, 0))
        heapq.heappush(self._queue, ev)
        return ev

    def _uniform_latency(self, rng: random.Random) -> int:
        if self._lat_min == self._lat_max:
            return self._lat_min
        return rng.randint(self._lat_min, self._lat_max)

    def add_delay_rule(self, predicate: Callable[[Envelope], bool], extra_us: int):
        """Add ``extra_us`` to every envelope matching ``predicate``."""
        rule = (predicate, int(extra_us))
        self.delay_rules.append(rule)
        return rule

    def _trace(self, kind: str, src, dst, tag: str) -> None:
        if self.trace is not None:
            self.trace.append("%d %s %s %s %s" % (self.now, kind, _fmt(src), _fmt(dst), tag))

    # -- network -----------------------------------------------------------

    def send(self, env: Envelope) -> None:
        src_host = self.host_of(env.src)
        dst_host = self.host_of(env.dst)
        if not self.alive.get(src_host, True):
            return
        tag = env.tag
        self.sent[tag] += 1
        if src_host != dst_host:
            if frozenset((src_host, dst_host)) in self.blocked or (
                    self.drop_rate > 0 and self.rng.random() < self.drop_rate):
                self.dropped[tag] += 1
                self._trace("drop", env.src, env.dst, tag)
                return
        delay = self._latency(self.rng)
        for predicate, extra in self.delay_rules:
            if predicate(env):
                delay += extra
        self._trace("send", env.src, env.dst, tag)
        ev = Event(self.now + delay, next(self._seq), self._deliver, (env,),
                   host=dst_host, incarnation=self.incarnation.get(dst_host, 0),
                   src_host=src_host,
                   src_incarnation=self.incarnation.get(src_host, 0),
                   kind="deliver")
        heapq.heappush(self._queue, ev)

    def _deliver(self, env: Envelope) -> None:
        ep = self.endpoints.get(env.dst)
        if ep is None:
            self._trace("lost", env.src, env.dst, env.tag)
            return
        self.delivered[env.tag] += 1
        self._trace("deliver", env.src, env.dst, env.tag)
        ep.handler(env)

    def set_drop_rate(self, rate: float) -> None:
        if not 0.0 <= rate <= 1.0:
            raise ValueError("drop rate must be within [0, 1]")
        self.drop_rate = rate

    def partition(self, groups: Iterable[Iterable[Hashable]]) -> None:
        """Block all traffic between hosts in different groups."""
        groups = [set(g) for g in groups]
        for i, a in enumerate(groups):
            for b in groups[i + 1:]:
                for x in a:
                    for y in b:
                        self.blocked.add(frozenset((x, y)))

    def block(self, a, b) -> None:
        self.blocked.add(frozenset((a, b)))

    def heal(self) -> None:
        self.blocked.clear()

    # -- faults ------------------------------------------------------------

    def _processes_on(self, host):
        seen = []
        for ep in list(self.endpoints.values()):
            if ep.host == host and ep.process is not None and ep.process not in seen:
                seen.append(ep.process)
        return seen

    def crash(self, host, recover_after: Optional[int] = None) -> None:
        """Crash ``host``. With ``recover_after`` (us) it restarts from its store."""
        if not self.alive.get(host, True):
            return
        self.alive[host] = False
        self.incarnation[host] = self.incarnation.get(host, 0) + 1
        self._trace("crash", host, "-", "stop" if recover_after is None else "recover")
        for proc in self._processes_on(host):
            proc.on_crash()
        if recover_after is not None:
            self.schedule(recover_after, self._recover, host)

    def recover(self, host) -> None:
        """Restart a crashed host now; no-op if it is alive."""
        self._recover(host)

    def _recover(self, host) -> None:
        if self.alive.get(host, True):
            return
        self.alive[host] = True
        self._trace("recover", host, "-", "restart")
        for proc in self._processes_on(host):
            proc.on_recover()

    def is_alive(self, host) -> bool:
        return self.alive.get(host, True)

    # -- chaos -------------------------------------------------------------

    def chaos_delay(self, point: str) -> int:
        """Extra delay (us) to inject at a named yield point, usually 0."""
        cfg = self.config
        if cfg.chaos_rate <= 0:
            return 0
        if cfg.chaos_points is not None and point not in cfg.chaos_points:
            return 0
        if self.rng.random() >= cfg.chaos_rate:
            return 0
        return self.rng.randint(0, ms(cfg.chaos_max_delay_ms))

    # -- execution ---------------------------------------------------------

    def _live(self, ev: Event) -> bool:
        if ev.cancelled:
            return False
        if ev.host is not None:
            if not self.alive.get(ev.host, True) or self.incarnation.get(ev.host, 0) != ev.incarnation:
                return False
        if ev.src_host is not None:
            if not self.alive.get(ev.src_host, True) or \
                    self.incarnation.get(ev.src_host, 0) != ev.src_incarnation:
                return False
        return True

    def step(self) -> bool:
        """Execute one live event. Returns False when the queue is exhausted."""
        while self._queue:
            ev = heapq.heappop(self._queue)
            if not self._live(ev):
                continue
            assert ev.time >= self.now, "event scheduled in the past"
            self.now = ev.time
            self.events_executed += 1
            ev.fn(*ev.args)
            return True
        return False

    def run_until(self, t: int) -> None:
        """Run every event with time <= t, then advance the clock to t."""
        q = self._queue
        while q and q[0].time <= t:
            ev = heapq.heappop(q)
            if not self._live(ev):
                continue
            self.now = ev.time
            self.events_executed += 1
            ev.fn(*ev.args)
        if t > self.now:
            self.now = t

    def run_for(self, duration: int) -> None:
        self.run_until(self.now + duration)

    def run_to_quiescence(self, max_events: int = 1_000_000) -> int:
        n = 0
        while self.step():
            n += 1
            if n >= max_events:
                raise SimulationBudgetExceeded("no quiescence after %d events" % n)
        return n

    def pending(self) -> int:
        return sum(1 for ev in self._queue if self._live(ev))


def _fmt(x) -> str:
    if isinstance(x, tuple):
        return ":".join(str(p) for p in x)
    return str(x)
