"""
Domain types shared by every part of the package: bucket versions, buckets,
key hashing, the bucket binary codec and the protocol message payloads.

Everything here is an immutable value. Buckets are never mutated in place;
``encode_set`` and ``encode_delete`` return new buckets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Hashable, Mapping, NamedTuple, Optional

MAX_KEY_SIZE = 4 * 1024
MAX_VALUE_SIZE = 64 * 1024
DEFAULT_NUM_BUCKETS = 64

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class DecodeError(ValueError):
    """Raised when a serialized bucket is truncated or malformed."""


##########################################################################
## Versions and ordering
##########################################################################

class BucketVersion(NamedTuple):
    """(elect_id, counter); tuple comparison gives the lexicographic order."""

    elect_id: int = 0
    counter: int = 0


LESS, EQUAL, GREATER = -1, 0, 1


def compare_versions(a: BucketVersion, b: BucketVersion) -> int:
    """Return LESS, EQUAL or GREATER comparing elect_id first, then counter."""
    a, b = tuple(a), tuple(b)
    if a < b:
        return LESS
    if a > b:
        return GREATER
    return EQUAL


##########################################################################
## Hashing
##########################################################################

def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def _mix64(x: int) -> int:
    # splitmix64 finalizer
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & _MASK64
    return x ^ (x >> 31)


def hash_key(key: bytes, num_buckets: int, seed: int = 0) -> int:
    """
    Map ``key`` to an index in ``[0, num_buckets)``.

    With ``seed == 0`` this is plain 64-bit FNV-1a reduced modulo
    ``num_buckets``. A non-zero seed passes the FNV digest through a seeded
    finalizer so that two hash levels (shard, bucket) are uncorrelated.
    """
    if num_buckets < 1:
        raise ValueError("num_buckets must be >= 1")
    h = fnv1a_64(key)
    if seed:
        h = _mix64(h ^ _mix64(seed))
    return h % num_buckets


##########################################################################
## Buckets
##########################################################################

def _frozen(entries: Mapping[bytes, bytes]) -> Mapping[bytes, bytes]:
    return MappingProxyType(dict(entries))


@dataclass(frozen=True)
class Bucket:
    index: int
    ver: BucketVersion = BucketVersion()
    entries: Mapping[bytes, bytes] = field(default_factory=lambda: _frozen({}))
    needs_copy: bool = False

    def __post_init__(self):
        if not isinstance(self.entries, MappingProxyType):
            object.__setattr__(self, "entries", _frozen(self.entries))
        if not isinstance(self.ver, BucketVersion):
            object.__setattr__(self, "ver", BucketVersion(*self.ver))

    def __eq__(self, other):
        if not isinstance(other, Bucket):
            return NotImplemented
        return (self.index, self.ver, self.needs_copy) == (
            other.index, other.ver, other.needs_copy
        ) and dict(self.entries) == dict(other.entries)

    def __hash__(self):
        return hash((self.index, self.ver, self.needs_copy,
                     tuple(sorted(self.entries.items()))))

    def __repr__(self):
        return "Bucket(index=%d, ver=(%d, %d), keys=%d%s)" % (
            self.index, self.ver.elect_id, self.ver.counter, len(self.entries),
            ", needs_copy" if self.needs_copy else "")

    def with_version(self, elect_id: int, counter: int) -> "Bucket":
        return replace(self, ver=BucketVersion(elect_id, counter))


def _check_sizes(key: bytes, value: Optional[bytes] = None) -> None:
    if len(key) > MAX_KEY_SIZE:
        raise ValueError("key exceeds %d bytes" % MAX_KEY_SIZE)
    if value is not None and len(value) > MAX_VALUE_SIZE:
        raise ValueError("value exceeds %d bytes" % MAX_VALUE_SIZE)


def encode_set(bucket: Bucket, key: bytes, value: bytes,
               num_buckets: Optional[int] = None) -> Bucket:
    """Return a copy of ``bucket`` with ``key`` mapped to ``value``."""
    _check_sizes(key, value)
    if num_buckets is not None:
        assert hash_key(key, num_buckets) == bucket.index, "key hashes elsewhere"
    entries = dict(bucket.entries)
    entries[key] = value
    return replace(bucket, entries=entries)


def encode_delete(bucket: Bucket, key: bytes,
                  num_buckets: Optional[int] = None) -> Bucket:
    """Return a copy of ``bucket`` without ``key``; absent keys are a no-op."""
    if num_buckets is not None:
        assert hash_key(key, num_buckets) == bucket.index, "key hashes elsewhere"
    if key not in bucket.entries:
        return bucket
    entries = dict(bucket.entries)
    del entries[key]
    return replace(bucket, entries=entries)


def decode(bucket: Bucket, key: bytes) -> Optional[bytes]:
    return bucket.entries.get(key)


def decode_keys(bucket: Bucket) -> frozenset:
    return frozenset(bucket.entries)


##########################################################################
## Binary format
##########################################################################

MAGIC = b"BZB1"
_HEADER = struct.Struct("<4sIQQBI")
_KEY_LEN = struct.Struct("<H")
_VAL_LEN = struct.Struct("<I")


def serialize_bucket(bucket: Bucket) -> bytes:
    parts = [_HEADER.pack(MAGIC, bucket.index, bucket.ver.elect_id,
                          bucket.ver.counter, int(bucket.needs_copy),
                          len(bucket.entries))]
    for key in sorted(bucket.entries):
        value = bucket.entries[key]
        parts.append(_KEY_LEN.pack(len(key)))
        parts.append(key)
        parts.append(_VAL_LEN.pack(len(value)))
        parts.append(value)
    return b"".join(parts)


def deserialize_bucket(data: bytes) -> Bucket:
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise DecodeError("truncated header")
    magic, index, elect_id, counter, needs_copy, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DecodeError("bad magic %r" % magic)
    if needs_copy not in (0, 1):
        raise DecodeError("bad needs_copy flag %d" % needs_copy)
    pos = _HEADER.size
    entries = {}
    for _ in range(count):
        if pos + _KEY_LEN.size > len(data):
            raise DecodeError("truncated key length")
        (klen,) = _KEY_LEN.unpack_from(data, pos)
        pos += _KEY_LEN.size
        key = data[pos:pos + klen]
        pos += klen
        if len(key) != klen or pos + _VAL_LEN.size > len(data):
            raise DecodeError("truncated entry")
        (vlen,) = _VAL_LEN.unpack_from(data, pos)
        pos += _VAL_LEN.size
        value = data[pos:pos + vlen]
        pos += vlen
        if len(value) != vlen:
            raise DecodeError("truncated value")
        if key in entries:
            raise DecodeError("duplicate key %r" % key)
        entries[key] = value
    if pos != len(data):
        raise DecodeError("%d trailing bytes" % (len(data) - pos))
    return Bucket(index, BucketVersion(elect_id, counter), entries, bool(needs_copy))


##########################################################################
## Messages
##########################################################################

Address = Hashable


@dataclass(frozen=True)
class Envelope:
    msg_id: int
    src: Address
    dst: Address
    payload: object

    @property
    def tag(self) -> str:
        return type(self.payload).__name__


# Server to server. Every reply echoes the msg_id of the request.

@dataclass(frozen=True)
class PleaseVote:
    elect_id: int
    source: int


@dataclass(frozen=True)
class AckVote:
    pass


@dataclass(frozen=True)
class NackVote:
    pass


@dataclass(frozen=True)
class ReplicaWrite:
    bucket: Bucket
    source: int


@dataclass(frozen=True)
class AckWrite:
    pass


@dataclass(frozen=True)
class NackWrite:
    pass


@dataclass(frozen=True)
class ReplicaRead:
    index: int
    elect_id: int
    source: int
    validate_only: bool = False


@dataclass(frozen=True)
class AckRead:
    bucket: Optional[Bucket] = None


@dataclass(frozen=True)
class NackRead:
    pass


ACKS = (AckVote, AckWrite, AckRead)
NACKS = (NackVote, NackWrite, NackRead)

# Client operations.


@dataclass(frozen=True)
class Get:
    key: bytes


@dataclass(frozen=True)
class Set:
    key: bytes
    value: bytes


@dataclass(frozen=True)
class Delete:
    key: bytes


@dataclass(frozen=True)
class CasSet:
    key: bytes
    expected: Optional[bytes]
    value: bytes


@dataclass(frozen=True)
class CasDelete:
    key: bytes
    expected: Optional[bytes]


@dataclass(frozen=True)
class IterateKeys:
    pass


@dataclass(frozen=True)
class ReadBucket:
    """Internal copy read issued by a reconfiguring instance."""

    index: int


MUTATIONS = (Set, Delete, CasSet, CasDelete)

# Responses (the KvResponse variants).


@dataclass(frozen=True)
class Value:
    value: bytes


@dataclass(frozen=True)
class Absent:
    pass


@dataclass(frozen=True)
class Ok:
    pass


@dataclass(frozen=True)
class CasMismatch:
    actual: Optional[bytes]


@dataclass(frozen=True)
class NotALeader:
    hint: Optional[int] = None
    # True when a write for this request may have reached replicas.
    maybe_applied: bool = False


@dataclass(frozen=True)
class ReconfigError:
    descriptor: object = None


@dataclass(frozen=True)
class Keys:
    keys: frozenset


@dataclass(frozen=True)
class BucketValue:
    bucket: Bucket


@dataclass(frozen=True)
class ClientRequest:
    req_id: tuple
    op: object
    internal: bool = False


@dataclass(frozen=True)
class ClientResponse:
    req_id: tuple
    response: object


@dataclass(frozen=True)
class RequestPending:
    """Leader is still working on ``req_id``; keeps the client from timing out."""

    req_id: tuple


@dataclass(frozen=True)
class ElectionRequest:
    req_id: tuple


@dataclass(frozen=True)
class ElectionResponse:
    req_id: tuple
    leader: Optional[int]
