"""Seeded generation of client scripts for consistency runs and benchmarks."""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Dict, List

from ..core import CasDelete, CasSet, Delete, Get, Set

UNIFORM = "uniform"
ZIPF = "zipf"

DEFAULT_MIX = {"get": 0.45, "set": 0.25, "delete": 0.05, "cas": 0.25}


@dataclass
class WorkloadParams:
    clients: int = 8
    keys: int = 8
    ops_per_client: int = 30
    mix: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MIX))
    distribution: str = UNIFORM
    zipf_s: float = 1.1
    key_prefix: str = "k"

    def __post_init__(self):
        if self.clients < 1 or self.keys < 1 or self.ops_per_client < 0:
            raise ValueError("clients and keys must be >= 1, ops_per_client >= 0")
        if self.distribution not in (UNIFORM, ZIPF):
            raise ValueError("distribution must be 'uniform' or 'zipf'")
        unknown = set(self.mix) - {"get", "set", "delete", "cas"}
        if unknown:
            raise ValueError("unknown op kinds in mix: %s" % sorted(unknown))
        if not self.mix or sum(self.mix.values()) <= 0 or min(self.mix.values()) < 0:
            raise ValueError("mix weights must be non-negative with a positive sum")


def key_names(params: WorkloadParams) -> List[bytes]:
    return [("%s%d" % (params.key_prefix, i)).encode() for i in range(params.keys)]


class KeyChooser:
    def __init__(self, rng: random.Random, params: WorkloadParams):
        self.rng = rng
        self.keys = key_names(params)
        if params.distribution == ZIPF:
            weights = [1.0 / (i + 1) ** params.zipf_s for i in range(params.keys)]
        else:
            weights = [1.0] * params.keys
        self.cum = list(itertools.accumulate(weights))

    def __call__(self) -> bytes:
        return self.rng.choices(self.keys, cum_weights=self.cum)[0]


def generate_workload(seed: int, params: WorkloadParams) -> List[list]:
    """One list of requests per client; identical for identical seeds.

    Written values are unique across the whole workload, so every read can be
    traced back to the write that produced it. CAS expectations are drawn from
    values scripted earlier for the same key (or absence).
    """
    rng = random.Random(seed)
    choose_key = KeyChooser(rng, params)
    kinds = sorted(params.mix)
    cum = list(itertools.accumulate(params.mix[k] for k in kinds))
    written: Dict[bytes, List[bytes]] = {}
    scripts: List[list] = [[] for _ in range(params.clients)]
    counter = itertools.count()
    # interleave generation across clients so CAS expectations span clients
    for i in range(params.ops_per_client):
        for c in range(params.clients):
            key = choose_key()
            kind = rng.choices(kinds, cum_weights=cum)[0]
            if kind == "get":
                op = Get(key)
            elif kind == "delete":
                op = Delete(key)
            else:
                value = b"v%d" % next(counter)
                if kind == "set":
                    op = Set(key, value)
                else:
                    seen = written.get(key, [])
                    pool = [None] + seen[-3:]
                    expected = rng.choice(pool)
                    if rng.random() < 0.2:
                        op = CasDelete(key, expected)
                    else:
                        op = CasSet(key, expected, value)
                if not isinstance(op, CasDelete):
                    written.setdefault(key, []).append(value)
            scripts[c].append(op)
    return scripts


def stream(seed: int, params: WorkloadParams, client_index: int):
    """Endless request stream for one benchmark client."""
    rng = random.Random((seed << 20) ^ (client_index * 0x9E3779B1))
    choose_key = KeyChooser(rng, params)
    kinds = sorted(params.mix)
    cum = list(itertools.accumulate(params.mix[k] for k in kinds))
    n = 0
    while True:
        key = choose_key()
        kind = rng.choices(kinds, cum_weights=cum)[0]
        n += 1
        value = b"c%d-%d" % (client_index, n)
        if kind == "get":
            yield Get(key)
        elif kind == "set":
            yield Set(key, value)
        elif kind == "delete":
            yield Delete(key)
        else:
            yield CasSet(key, None if rng.random() < 0.5 else value, value)
