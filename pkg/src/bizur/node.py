"""
Per-server Bizur state machine.

A ``Node`` is one member of one Bizur instance. It reacts to delivered
envelopes and timer events only; nothing in here blocks. Multi-step protocol
operations (election, bucket write, bucket read with lazy recovery) are
written as generator coroutines. A coroutine yields a command (broadcast and
await a majority, take a bucket lock, sleep, call the previous instance) and is
resumed by the node when the command completes::

    ok, replies = yield Quorum(ReplicaWrite(bucket, self.server_id), "write")

Operations on the same bucket are serialized by a per-bucket lock; operations
on different buckets interleave freely.
"""

from __future__ import annotations

import logging
from collections import Counter, OrderedDict, deque
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

from . import kv
from .tasks import Acquire, CasFailed, Gather, NotLeaderError, Quorum, Remote, Sleep
from .core import (
    ACKS, AckRead, AckVote, AckWrite, Bucket, BucketValue, BucketVersion,
    ClientRequest, ClientResponse, ElectionRequest, ElectionResponse, Envelope,
    NACKS, NackRead, NackVote, NackWrite, NotALeader, PleaseVote, ReconfigError,
    RequestPending,
    ReadBucket, ReplicaRead, ReplicaWrite, DEFAULT_NUM_BUCKETS, hash_key,
)
from .simnet import Simulator, ms

log = logging.getLogger(__name__)


class SafetyViolation(AssertionError):
    pass


@dataclass
class NodeConfig:
    num_buckets: int = DEFAULT_NUM_BUCKETS
    quorum_timeout_ms: float = 50.0
    retransmit_ms: float = 10.0
    background_sweep: bool = True
    sweep_interval_ms: float = 1.0
    # optimizations
    skip_check_after_recovery: bool = True
    validate_without_data: bool = True
    single_round_mutations: bool = True
    fold_recovery_into_write: bool = True
    iterate_batch: Optional[int] = None
    # deliberately broken variant used to test the checker
    skip_recovery_writeback: bool = False
    result_cache_size: int = 8192


class MemoryStore:
    """Durable state of one node; survives simulated crashes."""

    def __init__(self):
        self.buckets: Dict[int, Bucket] = {}
        self.voted_elect_id = 0
        self.meta: dict = {}
        self.writes = 0

    def save(self, bucket: Bucket) -> bool:
        self.buckets[bucket.index] = bucket
        self.writes += 1
        return True

    def save_vote(self, voted_elect_id: int) -> bool:
        self.voted_elect_id = voted_elect_id
        self.writes += 1
        return True


class LeaderObserver:
    """Global observer: at most one leader per (instance, elect_id)."""

    def __init__(self, strict: bool = True):
        self.leaders: Dict[tuple, set] = {}
        self.violations: List[tuple] = []
        self.strict = strict

    def elected(self, instance, elect_id: int, server_id: int) -> None:
        winners = self.leaders.setdefault((instance, elect_id), set())
        winners.add(server_id)
        if len(winners) > 1:
            self.violations.append((instance, elect_id, tuple(sorted(winners))))
            if self.strict:
                raise SafetyViolation("two leaders for elect_id %d: %s" % (elect_id, winners))


_WAIT = object()


class _Task:
    __slots__ = ("gen", "done", "incarnation", "name")

    def __init__(self, gen, done, incarnation, name):
        self.gen = gen
        self.done = done
        self.incarnation = incarnation
        self.name = name


@dataclass
class QuorumTally:
    msg_id: int
    members: tuple
    kind: str
    payload: object
    task: Optional[_Task] = None
    acks: "OrderedDict[int, object]" = field(default_factory=OrderedDict)
    nacks: set = field(default_factory=set)
    decided: bool = False
    ok: bool = False
    timers: list = field(default_factory=list)

    @property
    def majority(self) -> int:
        return len(self.members) // 2 + 1

    def record(self, server: int, reply) -> bool:
        if self.decided or server in self.acks or server in self.nacks:
            return False
        if isinstance(reply, ACKS):
            self.acks[server] = reply
        else:
            self.nacks.add(server)
        return True

    def decision(self) -> Optional[bool]:
        if len(self.acks) >= self.majority:
            return True
        if len(self.nacks) > len(self.members) - self.majority:
            return False
        return None


def _catching(gen):
    """Turn a NotLeaderError escaping ``gen`` into a None result."""
    try:
        return (yield from gen)
    except NotLeaderError:
        return None


##########################################################################
## Node
##########################################################################

class Node:
    def __init__(self, sim: Simulator, server_id: int, members, *, instance: int = 0,
                 config: Optional[NodeConfig] = None, store: Optional[MemoryStore] = None,
                 observer: Optional[LeaderObserver] = None, reconfig_source=None):
        self.sim = sim
        self.server_id = server_id
        self.members = tuple(members)
        assert server_id in self.members
        self.instance = instance
        self.address = (instance, server_id)
        self.config = config or NodeConfig()
        self.store = store if store is not None else MemoryStore()
        self.observer = observer
        self.stats = Counter()
        self.on_copy_complete: Optional[Callable[["Node"], None]] = None
        self._incarnation = 0
        if reconfig_source is not None and "reconfig_source" not in self.store.meta:
            self.store.meta["reconfig_source"] = reconfig_source
        self._load_persistent()
        self._reset_volatile()
        sim.register(self.address, self.receive, host=server_id, process=self)

    # -- state -------------------------------------------------------------

    def _load_persistent(self):
        self.voted_elect_id = self.store.voted_elect_id
        self.local_buckets: Dict[int, Bucket] = dict(self.store.buckets)

    def _reset_volatile(self):
        self.elect_id = self.voted_elect_id
        self.leader: Optional[int] = None
        self.is_leader = False
        self.pending: Dict[int, QuorumTally] = {}
        self._locks: Dict[int, _Task] = {}
        self._waiters: Dict[int, deque] = {}
        self._electing = False
        self._election_waiters: List[Envelope] = []
        self._inflight: set = set()
        self._results: "OrderedDict[tuple, object]" = OrderedDict()
        # request ids this node refused; a refused id is never executed later
        self._rejected: "OrderedDict[tuple, object]" = OrderedDict()
        self._sweep_cursor = 0
        self._sweep_running = False
        self._copy_client = None

    @property
    def reconfig_source(self):
        return self.store.meta.get("reconfig_source")

    @property
    def reconfig_mode(self) -> bool:
        return self.reconfig_source is not None and not self.store.meta.get("copy_done")

    @property
    def draining(self) -> bool:
        return "successor" in self.store.meta

    @property
    def successor(self):
        return self.store.meta.get("successor")

    @property
    def majority(self) -> int:
        return len(self.members) // 2 + 1

    def bucket(self, index: int) -> Bucket:
        b = self.local_buckets.get(index)
        if b is None:
            b = Bucket(index, needs_copy=self.reconfig_mode)
        return b

    def bucket_index(self, key: bytes) -> int:
        return hash_key(key, self.config.num_buckets)

    def is_recovered(self, index: int) -> bool:
        return self.bucket(index).ver.elect_id == self.elect_id

    def __repr__(self):
        return "<Node %s:%s elect=%d voted=%d%s>" % (
            self.instance, self.server_id, self.elect_id, self.voted_elect_id,
            " leader" if self.is_leader else "")

    # -- crash / recover ---------------------------------------------------

    def on_crash(self) -> None:
        self._incarnation += 1
        self._reset_volatile()

    def on_recover(self) -> None:
        self._incarnation += 1
        self._load_persistent()
        self._reset_volatile()

    # -- vote bookkeeping --------------------------------------------------

    def _update_vote(self, elect_id: int, source: int) -> None:
        if elect_id > self.voted_elect_id:
            self.store.save_vote(elect_id)
            self.voted_elect_id = elect_id
            if self.is_leader and elect_id > self.elect_id:
                self.is_leader = False
        self.leader = source

    # -- replica-side handlers ---------------------------------------------

    def handle_please_vote(self, elect_id: int, source: int):
        if elect_id > self.voted_elect_id:
            self._update_vote(elect_id, source)
            return AckVote()
        if elect_id == self.voted_elect_id and source == self.leader:
            return AckVote()
        return NackVote()

    def handle_replica_write(self, bucket: Bucket, source: int):
        if bucket.ver.elect_id < self.voted_elect_id:
            return NackWrite()
        self._update_vote(bucket.ver.elect_id, source)
        # a reordered older write must not overwrite a newer one
        if bucket.ver >= self.bucket(bucket.index).ver:
            self.store.save(bucket)
            self.local_buckets[bucket.index] = bucket
        return AckWrite()

    def handle_replica_read(self, index: int, elect_id: int, source: int,
                            validate_only: bool = False):
        if elect_id < self.voted_elect_id:
            return NackRead()
        self._update_vote(elect_id, source)
        return AckRead(None if validate_only else self.bucket(index))

    def _handle_request(self, payload):
        if isinstance(payload, ReplicaWrite):
            return self.handle_replica_write(payload.bucket, payload.source)
        if isinstance(payload, ReplicaRead):
            return self.handle_replica_read(payload.index, payload.elect_id,
                                            payload.source, payload.validate_only)
        if isinstance(payload, PleaseVote):
            return self.handle_please_vote(payload.elect_id, payload.source)
        raise TypeError("unexpected request %r" % (payload,))

    # -- message entry point -----------------------------------------------

    def receive(self, env: Envelope) -> None:
        payload = env.payload
        if isinstance(payload, (ReplicaWrite, ReplicaRead, PleaseVote)):
            reply = self._handle_request(payload)
            self.send(env.src, reply, env.msg_id)
        elif isinstance(payload, ACKS + NACKS):
            self.handle_quorum_response(env)
        elif isinstance(payload, ClientRequest):
            self._on_client_request(env)
        elif isinstance(payload, ElectionRequest):
            self._on_election_request(env)
        elif isinstance(payload, (ClientResponse, ElectionResponse, RequestPending)):
            if self._copy_client is not None:
                self._copy_client.receive(env)
        else:
            log.debug("%r ignoring %r", self, payload)

    def send(self, dst, payload, msg_id: Optional[int] = None) -> None:
        if msg_id is None:
            msg_id = self.sim.next_msg_id()
        self.sim.send(Envelope(msg_id, self.address, dst, payload))

    # -- coroutine runner --------------------------------------------------

    def spawn(self, gen, done: Optional[Callable] = None, name: str = "") -> _Task:
        task = _Task(gen, done, self._incarnation, name)
        self._resume(task, None)
        return task

    def _resume(self, task: _Task, value) -> None:
        while True:
            if task.incarnation != self._incarnation:
                return
            try:
                cmd = task.gen.send(value)
            except StopIteration as stop:
                if task.done is not None:
                    task.done(stop.value)
                return
            if isinstance(cmd, Quorum):
                value = self._start_quorum(task, cmd)
            elif isinstance(cmd, Acquire):
                value = self._acquire(task, cmd.index)
            elif isinstance(cmd, Sleep):
                if cmd.delay <= 0:
                    value = None
                    continue
                self.sim.schedule(cmd.delay, self._resume, task, None, host=self.server_id)
                value = _WAIT
            elif isinstance(cmd, Remote):
                value = self._start_remote(task, cmd.op)
            elif isinstance(cmd, Gather):
                value = self._start_gather(task, cmd.gens)
            else:
                raise TypeError("bad command %r" % (cmd,))
            if value is _WAIT:
                return

    def _start_gather(self, task: _Task, gens):
        if not gens:
            return []
        results = [None] * len(gens)
        left = [len(gens)]

        def finisher(i):
            def done(value):
                results[i] = value
                left[0] -= 1
                if left[0] == 0:
                    self._resume(task, results)
            return done

        for i, gen in enumerate(gens):
            self.spawn(_catching(gen), finisher(i), task.name)
        return _WAIT

    def chaos(self, point: str):
        """Named yield point; the simulator may inject a delay here."""
        delay = self.sim.chaos_delay(point)
        if delay:
            self.stats["chaos:" + point] += 1
            yield Sleep(delay)

    # -- bucket locks ------------------------------------------------------

    def _acquire(self, task: _Task, index: int):
        if index not in self._locks:
            self._locks[index] = task
            return task
        self._waiters.setdefault(index, deque()).append(task)
        return _WAIT

    def release(self, index: int, owner: _Task) -> None:
        """Release ``index`` if ``owner`` holds it (stale owners are ignored)."""
        if self._locks.get(index) is not owner:
            return
        waiters = self._waiters.get(index)
        if waiters:
            nxt = waiters.popleft()
            self._locks[index] = nxt
            self.sim.schedule(0, self._resume, nxt, nxt, host=self.server_id)
        else:
            del self._locks[index]

    # -- quorum rounds -----------------------------------------------------

    def _start_quorum(self, task: _Task, cmd: Quorum):
        tally = QuorumTally(self.sim.next_msg_id(), self.members, cmd.kind, cmd.payload, task)
        self.pending[tally.msg_id] = tally
        self.stats["rounds"] += 1
        self.stats["round:" + cmd.kind] += 1
        # self-delivery is a local call and cannot be lost
        tally.record(self.server_id, self._handle_request(cmd.payload))
        for m in self.members:
            if m != self.server_id:
                self.send((self.instance, m), cmd.payload, tally.msg_id)
        if self._decide(tally, resume=False):
            return (tally.ok, tally.acks)
        cfg = self.config
        tally.timers.append(self.sim.schedule(
            ms(cfg.quorum_timeout_ms), self._quorum_timeout, tally, host=self.server_id))
        if cfg.retransmit_ms > 0:
            tally.timers.append(self.sim.schedule(
                ms(cfg.retransmit_ms), self._retransmit, tally, host=self.server_id))
        return _WAIT

    def _retransmit(self, tally: QuorumTally) -> None:
        if tally.decided:
            return
        for m in self.members:
            if m not in tally.acks and m not in tally.nacks:
                self.stats["retransmits"] += 1
                self.send((self.instance, m), tally.payload, tally.msg_id)
        tally.timers.append(self.sim.schedule(
            ms(self.config.retransmit_ms), self._retransmit, tally, host=self.server_id))

    def _quorum_timeout(self, tally: QuorumTally) -> None:
        if tally.decided:
            return
        # a timeout counts as a nack from every silent member
        for m in self.members:
            if m not in tally.acks:
                tally.nacks.add(m)
        self._decide(tally)

    def handle_quorum_response(self, env: Envelope) -> None:
        tally = self.pending.get(env.msg_id)
        if tally is None:
            return
        server = env.src[1]
        if server not in tally.members:
            return
        if tally.record(server, env.payload):
            self._decide(tally)

    def _decide(self, tally: QuorumTally, resume: bool = True) -> bool:
        verdict = tally.decision()
        if verdict is None:
            return False
        tally.decided = True
        tally.ok = verdict
        self.pending.pop(tally.msg_id, None)
        for t in tally.timers:
            t.cancel()
        if resume and tally.task is not None:
            self._resume(tally.task, (tally.ok, tally.acks))
        return True

    # -- leader election -------------------------------------------------

    def start_election(self, done: Optional[Callable[[bool], None]] = None) -> _Task:
        return self.spawn(self._election(), done, "election")

    def _election(self):
        # max() keeps a node that voted in newer elections from wasting rounds
        self.elect_id = max(self.elect_id, self.voted_elect_id) + 1
        self.is_leader = False
        eid = self.elect_id
        self._electing = True
        self.stats["elections"] += 1
        ok, _ = yield Quorum(PleaseVote(eid, self.server_id), "vote")
        self._electing = False
        won = ok and self.elect_id == eid and self.voted_elect_id == eid
        if won:
            self.is_leader = True
            self.leader = self.server_id
            if self.observer is not None:
                self.observer.elected(self.instance, eid, self.server_id)
            if self.config.background_sweep:
                self.start_sweep()
        self._answer_election_waiters()
        return won

    def _on_election_request(self, env: Envelope) -> None:
        if self.is_leader:
            self.send(env.src, ElectionResponse(env.payload.req_id, self.server_id))
            return
        self._election_waiters.append(env)
        if not self._electing:
            self.start_election()

    def _answer_election_waiters(self) -> None:
        waiters, self._election_waiters = self._election_waiters, []
        hint = self.server_id if self.is_leader else self.leader
        for env in waiters:
            self.send(env.src, ElectionResponse(env.payload.req_id, hint))

    # -- leadership checks -------------------------------------------------

    def begin(self) -> int:
        """Snapshot the current election for an operation; raise if not leader."""
        if not self.is_leader:
            raise NotLeaderError(False)
        return self.elect_id

    def check_term(self, eid: int, maybe_applied: bool = False) -> None:
        if not self.is_leader or self.elect_id != eid:
            raise NotLeaderError(maybe_applied)

    # -- bucket replication ----------------------------------------------

    def write(self, bucket: Bucket, eid: Optional[int] = None):
        """Replicate ``bucket`` stamped with the current election. Returns bool."""
        if eid is None:
            eid = self.elect_id
        self.check_term(eid)
        bucket = bucket.with_version(eid, bucket.ver.counter + 1)
        yield from self.chaos("write.before_send")
        self.check_term(eid)
        ok, _ = yield Quorum(ReplicaWrite(bucket, self.server_id), "write")
        if not ok:
            self.is_leader = False
            return False
        return True

    def recover(self, index: int, eid: int, transform=None):
        """Recovery read + write-back. Returns the recovered bucket or None.

        ``transform`` (optional) is applied to the recovered bucket before the
        write-back so that a mutation and its recovery share one write round.
        A ``CasFailed`` raised by ``transform`` is re-raised after the
        untransformed bucket has been written back.
        """
        self.stats["recoveries"] += 1
        ok, replies = yield Quorum(
            ReplicaRead(index, eid, self.server_id), "recovery-read")
        if not ok:
            self.is_leader = False
            return None
        self.check_term(eid)
        received = [r.bucket for r in replies.values() if r.bucket is not None]
        max_ver = max(b.ver for b in received)
        top = [b for b in received if b.ver == max_ver]
        bucket = top[0]
        if not self.config.skip_recovery_writeback and any(
                b.entries != bucket.entries for b in top[1:]):
            raise SafetyViolation("replicas disagree at version %s of bucket %d"
                                  % (tuple(max_ver), index))
        yield from self.chaos("recovery.after_read")
        self.check_term(eid)
        if self.config.skip_recovery_writeback:
            return bucket
        bucket = bucket.with_version(eid, 0)
        failure = None
        if transform is not None:
            try:
                bucket = transform(bucket)
            except CasFailed as exc:
                failure = exc
        ok = yield from self.write(bucket, eid)
        if not ok:
            if transform is not None and failure is None:
                raise NotLeaderError(True)
            return None
        if failure is not None:
            raise failure
        return self.bucket(index)

    def ensure_recovery(self, index: int, eid: Optional[int] = None):
        if eid is None:
            eid = self.elect_id
        if self.bucket(index).ver.elect_id == eid:
            return True
        recovered = yield from self.recover(index, eid)
        return recovered is not None

    def read(self, index: int, eid: Optional[int] = None):
        """Leader read of a bucket (with lazy recovery). Returns Bucket or None."""
        if eid is None:
            eid = self.elect_id
        self.check_term(eid)
        if self.bucket(index).ver.elect_id != eid:
            recovered = yield from self.recover(index, eid)
            if recovered is None:
                return None
            if self.config.skip_recovery_writeback:
                return recovered
            if self.config.skip_check_after_recovery:
                return recovered
        yield from self.chaos("read.before_validate")
        self.check_term(eid)
        ok, _ = yield Quorum(ReplicaRead(index, eid, self.server_id,
                                         self.config.validate_without_data), "read")
        if not ok:
            self.is_leader = False
            return None
        return self.bucket(index)

    def validate(self, index: int, eid: int):
        """One validation-only round: confirms this node still leads ``eid``."""
        self.check_term(eid)
        ok, _ = yield Quorum(ReplicaRead(index, eid, self.server_id, True), "validate")
        if not ok:
            self.is_leader = False
        return ok

    # -- reconfiguration ---------------------------------------------------

    def reconfig_read(self, index: int, eid: Optional[int] = None):
        if eid is None:
            eid = self.elect_id
        bucket = yield from self.read(index, eid)
        if bucket is None or not bucket.needs_copy:
            return bucket
        self.stats["copy_reads"] += 1
        old = yield Remote(ReadBucket(index))
        self.check_term(eid)
        if old is None:
            return None
        copied = Bucket(index, bucket.ver, old.entries, needs_copy=False)
        ok = yield from self.write(copied, eid)
        if not ok:
            return None
        return self.bucket(index)

    def read_for_op(self, index: int, eid: int):
        if self.reconfig_mode:
            return (yield from self.reconfig_read(index, eid))
        return (yield from self.read(index, eid))

    def _start_remote(self, task: _Task, op):
        if self._copy_client is None:
            from .client import Client, ClientConfig
            from .reconfig import ShardMap
            src = self.reconfig_source
            smap = ShardMap.single(src)
            self._copy_client = Client(
                self.sim, "copy-%s-%s" % self.address, smap, address=self.address,
                register=False, internal=True,
                config=ClientConfig(detection_timeout_ms=self.sim.config.detection_timeout_ms))

        def done(result):
            if task.incarnation != self._incarnation:
                return
            bucket = result.bucket if isinstance(result, BucketValue) else None
            self._resume(task, bucket)

        self._copy_client.submit(op, done, shard=self.reconfig_source.shard)
        return _WAIT

    def drain(self, successor) -> None:
        """Enter Draining: reject client requests with a redirect to ``successor``."""
        self.store.meta["successor"] = successor

    def finish_reconfig(self) -> None:
        """Copying is complete; leave reconfig mode."""
        self.store.meta["copy_done"] = True

    # -- background sweep ---------------------------------------------------

    def start_sweep(self) -> None:
        self._sweep_cursor = 0
        if not self._sweep_running:
            self._sweep_running = True
            self.sim.schedule(ms(self.config.sweep_interval_ms), self._sweep_loop,
                              self._incarnation, host=self.server_id)

    def _sweep_loop(self, incarnation) -> None:
        if incarnation != self._incarnation:
            return

        def again(_=None):
            if incarnation != self._incarnation:
                return
            self.sim.schedule(ms(self.config.sweep_interval_ms), self._sweep_loop,
                              incarnation, host=self.server_id)

        if not self.background_recovery_tick(done=again):
            self._sweep_running = False

    def _needs_work(self, index: int) -> bool:
        b = self.bucket(index)
        return b.ver.elect_id != self.elect_id or (self.reconfig_mode and b.needs_copy)

    def background_recovery_tick(self, done: Optional[Callable] = None) -> bool:
        """Recover (or copy) the next bucket that needs it. False when idle."""
        if not self.is_leader:
            return False
        n = self.config.num_buckets
        while self._sweep_cursor < n and not self._needs_work(self._sweep_cursor):
            self._sweep_cursor += 1
        if self._sweep_cursor >= n:
            if self.reconfig_mode:
                if any(self._needs_work(i) for i in range(n)):
                    self._sweep_cursor = 0
                    return self.background_recovery_tick(done)
                self.stats["copy_complete"] += 1
                if self.on_copy_complete is not None:
                    self.on_copy_complete(self)
            return False
        index = self._sweep_cursor
        self._sweep_cursor += 1
        self.stats["sweep_ticks"] += 1
        self.spawn(self._sweep_one(index), done, "sweep")
        return True

    def _sweep_one(self, index: int):
        eid = self.elect_id
        owner = yield Acquire(index)
        try:
            self.check_term(eid)
            if self.reconfig_mode:
                yield from self.reconfig_read(index, eid)
            else:
                yield from self.ensure_recovery(index, eid)
        except NotLeaderError:
            pass
        finally:
            self.release(index, owner)

    # -- client requests ----------------------------------------------------

    def _on_client_request(self, env: Envelope) -> None:
        req: ClientRequest = env.payload
        cached = self._results.get(req.req_id) or self._rejected.get(req.req_id)
        if cached is not None:
            self.send(env.src, ClientResponse(req.req_id, cached))
            return
        if req.req_id in self._inflight:
            self.send(env.src, RequestPending(req.req_id))
            return
        if self.draining and not req.internal:
            self.stats["rejected_draining"] += 1
            self._reject(env, ReconfigError(self.successor))
            return
        if not self.is_leader:
            self._reject(env, NotALeader(self.leader))
            return
        self.stats["internal_requests" if req.internal else "client_requests"] += 1
        self._inflight.add(req.req_id)
        src, req_id = env.src, req.req_id
        incarnation = self._incarnation

        def done(response):
            if incarnation != self._incarnation:
                return
            self._inflight.discard(req_id)
            self._results[req_id] = response
            if len(self._results) > self.config.result_cache_size:
                self._results.popitem(last=False)
            self.send(src, ClientResponse(req_id, response))

        self.spawn(kv.execute(self, req.op, req.internal), done, "client")

    def _reject(self, env: Envelope, response) -> None:
        req_id = env.payload.req_id
        self._rejected[req_id] = response
        if len(self._rejected) > self.config.result_cache_size:
            self._rejected.popitem(last=False)
        self.send(env.src, ClientResponse(req_id, response))

    def submit(self, op, callback: Callable, internal: bool = False) -> None:
        """Run a key-value operation on this node directly, bypassing the network."""
        if not self.is_leader:
            callback(NotALeader(self.leader))
            return
        self.spawn(kv.execute(self, op, internal), callback, "local")
