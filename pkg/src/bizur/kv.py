"""
Leader-side key-value API on top of the node's bucket Read/Write.

Each operation is a coroutine run by the node. It takes the bucket lock,
performs the bucket-level protocol steps and returns a response value
(``Value``, ``Absent``, ``Ok``, ``CasMismatch``, ``Keys``, ``NotALeader`` or
``ReconfigError``).

Mutations on a recovered bucket skip the read phase and use the leader's local
copy, so the common case costs one cluster round trip. The first mutation
after an election folds the recovery write-back and the mutation into a single
write.
"""

from __future__ import annotations

from .core import (
    Absent, BucketValue, CasDelete, CasMismatch, CasSet, Delete, Get,
    IterateKeys, Keys, NotALeader, Ok, ReadBucket, ReconfigError, Set, Value,
    decode, decode_keys, encode_delete, encode_set,
)
from .tasks import Acquire, Gather, CasFailed, Drained, NotLeaderError

__all__ = ["execute", "get", "set_", "delete", "cas_set", "cas_delete",
           "iterate_keys", "read_bucket"]


def execute(node, op, internal: bool = False):
    """Run ``op`` on ``node`` and return its response."""
    try:
        if isinstance(op, Get):
            return (yield from get(node, op.key, internal))
        if isinstance(op, Set):
            return (yield from set_(node, op.key, op.value, internal))
        if isinstance(op, Delete):
            return (yield from delete(node, op.key, internal))
        if isinstance(op, CasSet):
            return (yield from cas_set(node, op.key, op.expected, op.value, internal))
        if isinstance(op, CasDelete):
            return (yield from cas_delete(node, op.key, op.expected, internal))
        if isinstance(op, IterateKeys):
            return (yield from iterate_keys(node, internal))
        if isinstance(op, ReadBucket):
            return (yield from read_bucket(node, op.index))
        raise TypeError("unknown operation %r" % (op,))
    except NotLeaderError as exc:
        hint = None if node.leader == node.server_id else node.leader
        return NotALeader(hint, exc.maybe_applied)
    except Drained:
        return ReconfigError(node.successor)


def _check_open(node, internal):
    if node.draining and not internal:
        raise Drained()


def get(node, key: bytes, internal: bool = False):
    index = node.bucket_index(key)
    eid = node.begin()
    owner = yield Acquire(index)
    try:
        node.check_term(eid)
        _check_open(node, internal)
        bucket = yield from node.read_for_op(index, eid)
        if bucket is None:
            raise NotLeaderError(False)
        value = decode(bucket, key)
        return Absent() if value is None else Value(value)
    finally:
        node.release(index, owner)


def _mutate(node, key: bytes, transform, internal: bool):
    """Apply ``transform`` (bucket -> bucket, may raise CasFailed) to key's bucket."""
    index = node.bucket_index(key)
    eid = node.begin()
    owner = yield Acquire(index)
    try:
        node.check_term(eid)
        _check_open(node, internal)
        cfg = node.config
        local = node.bucket(index)
        recovered = local.ver.elect_id == eid
        if recovered and not local.needs_copy and cfg.single_round_mutations:
            try:
                updated = transform(local)
            except CasFailed:
                # a mismatch is a read; confirm leadership before reporting it
                ok = yield from node.validate(index, eid)
                if not ok:
                    raise NotLeaderError(False)
                raise
        elif (not recovered and not node.reconfig_mode
              and cfg.fold_recovery_into_write and not cfg.skip_recovery_writeback):
            result = yield from node.recover(index, eid, transform)
            if result is None:
                raise NotLeaderError(False)
            return Ok()
        else:
            bucket = yield from node.read_for_op(index, eid)
            if bucket is None:
                raise NotLeaderError(False)
            node.check_term(eid)
            _check_open(node, internal)
            updated = transform(bucket)
        ok = yield from node.write(updated, eid)
        if not ok:
            raise NotLeaderError(True)
        return Ok()
    except CasFailed as exc:
        return CasMismatch(exc.actual)
    finally:
        node.release(index, owner)


def set_(node, key: bytes, value: bytes, internal: bool = False):
    return (yield from _mutate(node, key, lambda b: encode_set(b, key, value), internal))


def delete(node, key: bytes, internal: bool = False):
    return (yield from _mutate(node, key, lambda b: encode_delete(b, key), internal))


def _expecting(key, expected):
    def check(bucket):
        actual = decode(bucket, key)
        if actual != expected:
            raise CasFailed(actual)
    return check


def cas_set(node, key: bytes, expected, value: bytes, internal: bool = False):
    check = _expecting(key, expected)

    def transform(b):
        check(b)
        return encode_set(b, key, value)
    return (yield from _mutate(node, key, transform, internal))


def cas_delete(node, key: bytes, expected, internal: bool = False):
    check = _expecting(key, expected)

    def transform(b):
        check(b)
        return encode_delete(b, key)
    return (yield from _mutate(node, key, transform, internal))


def iterate_keys(node, internal: bool = False):
    """Union of keys over all buckets, one validation round per batch."""
    eid = node.begin()
    n = node.config.num_buckets
    batch = node.config.iterate_batch or n
    keys = set()
    for start in range(0, n, batch):
        indexes = range(start, min(start + batch, n))
        owners = []
        try:
            for i in indexes:
                owners.append((i, (yield Acquire(i))))
            node.check_term(eid)
            _check_open(node, internal)
            stale = [i for i in indexes if node.bucket(i).ver.elect_id != eid
                     or (node.reconfig_mode and node.bucket(i).needs_copy)]
            if stale:
                got = yield Gather(node.read_for_op(i, eid) for i in stale)
                if any(b is None for b in got):
                    raise NotLeaderError(False)
            recovered_here = bool(stale)
            if not (recovered_here and node.config.skip_check_after_recovery):
                if not (yield from node.validate(start, eid)):
                    raise NotLeaderError(False)
            for i in indexes:
                keys |= decode_keys(node.bucket(i))
        finally:
            for i, owner in owners:
                node.release(i, owner)
    return Keys(frozenset(keys))


def read_bucket(node, index: int):
    """Internal copy read served to a reconfiguring successor instance."""
    eid = node.begin()
    owner = yield Acquire(index)
    try:
        node.check_term(eid)
        bucket = yield from node.read_for_op(index, eid)
        if bucket is None:
            raise NotLeaderError(False)
        return BucketValue(bucket)
    finally:
        node.release(index, owner)

