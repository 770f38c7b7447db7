"""
Client-side request routing.

A client remembers the presumed leader of every shard it talks to. Requests
go to that leader; on ``NotALeader`` the client follows the hint or moves
round-robin to the next member, and once a full cycle of members has failed
it asks a server to start an election (rate limited by a token bucket).
``ReconfigError`` re-targets the shard's newer instance.

Requests are retransmitted with the same request id while the target stays
silent; servers deduplicate by id. A mutation whose target stays silent past
the detection timeout, or that failed after its write went out, is reported
as ``Indeterminate``: it may or may not have been applied.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

from .core import (
    MUTATIONS, ClientRequest, ClientResponse, ElectionRequest, ElectionResponse,
    Envelope, IterateKeys, Keys, NotALeader, ReadBucket, ReconfigError, RequestPending,
)
from .reconfig import DescriptorUpdate, decode_descriptor
from .simnet import Simulator, ms

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Indeterminate:
    """The operation may or may not have taken effect."""

    reason: str = ""


@dataclass(frozen=True)
class RetriesExhausted:
    """Gave up before any attempt could have taken effect."""

    attempts: int = 0


@dataclass
class ClientConfig:
    detection_timeout_ms: float = 100.0
    retransmit_ms: float = 10.0
    election_period_ms: float = 500.0
    election_burst: int = 1
    cycle_backoff_ms: float = 10.0
    max_attempts: int = 400


class TokenBucket:
    def __init__(self, capacity: float, period_us: int, now: int = 0):
        self.capacity = capacity
        self.period = period_us
        self.tokens = float(capacity)
        self.stamp = now

    def _refill(self, now: int) -> None:
        if now > self.stamp:
            self.tokens = min(self.capacity, self.tokens + (now - self.stamp) / self.period)
            self.stamp = now

    def available(self, now: int) -> bool:
        self._refill(now)
        return self.tokens >= 1.0

    def take(self, now: int) -> bool:
        self._refill(now)
        if self.tokens >= 1.0:
            self.tokens -= 1.0
            return True
        return False


@dataclass
class Route:
    """Per-shard view of where requests should go."""

    descriptor: object
    presumed_leader: Optional[int] = None
    rr_cursor: int = 0
    failures: int = 0
    first_responder: Optional[int] = None
    suspects: set = field(default_factory=set)
    electing: bool = False
    waiting: list = field(default_factory=list)

    @property
    def members(self):
        return self.descriptor.members

    @property
    def instance(self):
        return self.descriptor.instance_id

    def target(self) -> int:
        if self.presumed_leader is not None:
            return self.presumed_leader
        return self.members[self.rr_cursor % len(self.members)]

    def advance_past(self, server: int) -> None:
        members = self.members
        if server in members:
            self.rr_cursor = (members.index(server) + 1) % len(members)
        else:
            self.rr_cursor = (self.rr_cursor + 1) % len(members)
        self.presumed_leader = None

    def retarget(self, descriptor) -> None:
        self.descriptor = descriptor
        self.presumed_leader = None
        self.rr_cursor = 0
        self.failures = 0
        self.first_responder = None
        self.suspects.clear()


class _Request:
    __slots__ = ("op", "callback", "req_id", "shard", "target", "attempts",
                 "first_send", "timers", "deadline", "closed", "sent_mutation")

    def __init__(self, op, callback, req_id, shard):
        self.op = op
        self.callback = callback
        self.req_id = req_id
        self.shard = shard
        self.target = None
        self.attempts = 0
        self.first_send = 0
        self.timers = []
        self.deadline = None
        self.closed = False
        self.sent_mutation = False


class Client:
    def __init__(self, sim: Simulator, client_id, shard_map, *, address=None,
                 register: bool = True, internal: bool = False,
                 config: Optional[ClientConfig] = None):
        self.sim = sim
        self.client_id = client_id
        self.address = address if address is not None else ("client", client_id)
        self.config = config or ClientConfig(
            detection_timeout_ms=sim.config.detection_timeout_ms)
        self.shard_map = shard_map
        self.internal = internal
        self.routes: Dict[int, Route] = {}
        self.election_tokens = TokenBucket(
            self.config.election_burst, ms(self.config.election_period_ms), sim.now)
        self.elections_triggered = []
        self._seq = itertools.count()
        self._open: Dict[tuple, _Request] = {}
        self._elections: Dict[tuple, tuple] = {}
        self.stats = {"sent": 0, "timeouts": 0, "not_leader": 0, "redirects": 0}
        if register:
            sim.register(self.address, self.receive, process=self)

    # -- crash hooks (client hosts can be crashed like servers) -------------

    def on_crash(self):
        for req in list(self._open.values()):
            self._close(req)
        self._elections.clear()

    def on_recover(self):
        pass

    # -- routing -----------------------------------------------------------

    def route(self, shard: int) -> Route:
        r = self.routes.get(shard)
        desc = self.shard_map.descriptor(shard)
        if r is None:
            r = self.routes[shard] = Route(desc)
        elif desc.instance_id > r.descriptor.instance_id:
            r.retarget(desc)
        return r

    def update_descriptor(self, descriptor) -> bool:
        """Adopt ``descriptor`` if it is newer than what we have for its shard."""
        changed = self.shard_map.update(descriptor)
        if changed and descriptor.shard in self.routes:
            self.routes[descriptor.shard].retarget(descriptor)
        return changed

    def _shard_of(self, op) -> int:
        key = getattr(op, "key", None)
        if key is None:
            return 0
        return self.shard_map.shard_of(key)

    # -- submission --------------------------------------------------------

    def submit(self, op, callback: Callable, shard: Optional[int] = None) -> None:
        """Send ``op``; ``callback`` receives the final response exactly once."""
        if isinstance(op, IterateKeys) and shard is None and self.shard_map.num_shards > 1:
            self._submit_fanout(op, callback)
            return
        if shard is None:
            shard = self._shard_of(op)
        req = _Request(op, callback, (self.client_id, next(self._seq), 0), shard)
        self._open[req.req_id] = req
        self._attempt(req)

    def _submit_fanout(self, op, callback):
        shards = list(range(self.shard_map.num_shards))
        keys = set()
        remaining = [len(shards)]
        failed = []

        def part(resp):
            if isinstance(resp, Keys):
                keys.update(resp.keys)
            else:
                failed.append(resp)
            remaining[0] -= 1
            if remaining[0] == 0:
                callback(failed[0] if failed else Keys(frozenset(keys)))

        for s in shards:
            self.submit(op, part, shard=s)

    def _attempt(self, req: _Request) -> None:
        if req.closed:
            return
        req.attempts += 1
        if req.attempts > self.config.max_attempts:
            self._finish(req, Indeterminate("retries exhausted")
                         if req.sent_mutation else RetriesExhausted(req.attempts - 1))
            return
        route = self.route(req.shard)
        if route.electing:
            route.waiting.append(req)
            return
        # each attempt gets its own id: a server that refused an id never runs it
        self._open.pop(req.req_id, None)
        req.req_id = req.req_id[:2] + (req.attempts,)
        self._open[req.req_id] = req
        req.target = route.target()
        req.first_send = self.sim.now
        self._cancel_timers(req)
        self._transmit(req)
        self._arm_timeout(req)

    def _arm_timeout(self, req: _Request) -> None:
        if req.deadline is not None:
            req.deadline.cancel()
        req.deadline = self.sim.schedule(
            ms(self.config.detection_timeout_ms), self._timeout, req, req.target,
            host=self.sim.host_of(self.address))

    def _transmit(self, req: _Request) -> None:
        if req.closed:
            return
        route = self.route(req.shard)
        if isinstance(req.op, MUTATIONS):
            req.sent_mutation = True
        self.stats["sent"] += 1
        self.sim.send(Envelope(self.sim.next_msg_id(), self.address,
                               (route.instance, req.target),
                               ClientRequest(req.req_id, req.op, self.internal)))
        if self.config.retransmit_ms > 0:
            req.timers.append(self.sim.schedule(
                ms(self.config.retransmit_ms), self._transmit, req,
                host=self.sim.host_of(self.address)))

    def _cancel_timers(self, req: _Request) -> None:
        for t in req.timers:
            t.cancel()
        req.timers = []
        if req.deadline is not None:
            req.deadline.cancel()
            req.deadline = None

    def _timeout(self, req: _Request, target: int) -> None:
        if req.closed or req.target != target:
            return
        self._cancel_timers(req)
        self.stats["timeouts"] += 1
        route = self.route(req.shard)
        route.suspects.add(target)
        route.advance_past(target)
        route.failures += 1
        if isinstance(req.op, MUTATIONS):
            self._finish(req, Indeterminate("timeout"))
            return
        self._after_failure(req, route)

    def _after_failure(self, req: _Request, route: Route) -> None:
        if route.failures >= len(route.members):
            if self.election_tokens.take(self.sim.now):
                route.failures = 0
                target = route.first_responder
                if target is None:
                    target = route.target()
                route.first_responder = None
                self._request_election(route, req.shard, target)
                route.waiting.append(req)
                return
            route.failures = 0
            route.first_responder = None
            self.sim.schedule(ms(self.config.cycle_backoff_ms), self._attempt, req,
                              host=self.sim.host_of(self.address))
            return
        self._attempt(req)

    # -- responses ---------------------------------------------------------

    def receive(self, env: Envelope) -> None:
        payload = env.payload
        if isinstance(payload, ClientResponse):
            self._on_response(env, payload)
        elif isinstance(payload, RequestPending):
            req = self._open.get(payload.req_id)
            # the target is alive and working: restart its failure detector
            if req is not None and not req.closed and env.src[1] == req.target:
                self._arm_timeout(req)
        elif isinstance(payload, ElectionResponse):
            self._on_election_response(payload)
        elif isinstance(payload, DescriptorUpdate):
            self.update_descriptor(decode_descriptor(payload.data))

    def _on_response(self, env: Envelope, msg: ClientResponse) -> None:
        req = self._open.get(msg.req_id)
        if req is None or req.closed:
            return
        server = env.src[1]
        route = self.route(req.shard)
        route.suspects.discard(server)
        resp = msg.response
        if isinstance(resp, NotALeader):
            self.stats["not_leader"] += 1
            if resp.maybe_applied:
                route.advance_past(server)
                self._finish(req, Indeterminate("leadership lost mid-write"))
                return
            if server != req.target:
                return
            self._cancel_timers(req)
            route.failures += 1
            if route.first_responder is None:
                route.first_responder = server
            route.advance_past(server)
            if resp.hint is not None and resp.hint != server and resp.hint not in route.suspects \
                    and resp.hint in route.members:
                route.presumed_leader = resp.hint
            self._after_failure(req, route)
            return
        if isinstance(resp, ReconfigError):
            self.stats["redirects"] += 1
            self._cancel_timers(req)
            if resp.descriptor is not None:
                self.update_descriptor(resp.descriptor)
            self._attempt(req)
            return
        route.presumed_leader = server
        route.failures = 0
        route.first_responder = None
        self._finish(req, resp)

    def _finish(self, req: _Request, result) -> None:
        self._close(req)
        req.callback(result)

    def _close(self, req: _Request) -> None:
        req.closed = True
        self._cancel_timers(req)
        self._open.pop(req.req_id, None)

    # -- elections ---------------------------------------------------------

    def _request_election(self, route: Route, shard: int, target: int) -> None:
        route.electing = True
        req_id = (self.client_id, "elect", next(self._seq))
        self.elections_triggered.append((self.sim.now, shard, target))
        self._elections[req_id] = (shard, target)
        env = Envelope(self.sim.next_msg_id(), self.address, (route.instance, target),
                       ElectionRequest(req_id))
        host = self.sim.host_of(self.address)

        def resend():
            if req_id in self._elections:
                self.sim.send(env)
                self.sim.schedule(ms(self.config.retransmit_ms), resend, host=host)

        self.sim.send(env)
        self.sim.schedule(ms(self.config.retransmit_ms), resend, host=host)
        self.sim.schedule(ms(self.config.detection_timeout_ms), self._election_timeout,
                          req_id, host=host)

    def _election_timeout(self, req_id) -> None:
        entry = self._elections.pop(req_id, None)
        if entry is None:
            return
        shard, target = entry
        route = self.route(shard)
        route.suspects.add(target)
        route.advance_past(target)
        self._release_waiting(route)

    def _on_election_response(self, msg: ElectionResponse) -> None:
        entry = self._elections.pop(msg.req_id, None)
        if entry is None:
            return
        shard, target = entry
        route = self.route(shard)
        route.suspects.discard(target)
        if msg.leader is not None and msg.leader in route.members:
            route.presumed_leader = msg.leader
        else:
            route.advance_past(target)
        self._release_waiting(route)

    def _release_waiting(self, route: Route) -> None:
        route.electing = False
        waiting, route.waiting = route.waiting, []
        for req in waiting:
            self._attempt(req)
