"""
Linearizability search.

All operations touch a single key, so a history is strictly serializable iff
every per-key subhistory is linearizable; each key is searched on its own.

The per-key search is Wing & Gong's backtracking over "which pending
operation takes effect next", with the memoization of Lowe: a search state is
(set of linearized operations, register value) and is never expanded twice.
Operations with an ``info`` result may take effect at any point after their
invoke or not at all; ``fail`` operations are dropped.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .history import FAIL, INF, History, Operation
from .model import INVALID, step

DEFAULT_BUDGET = 10 ** 7


class SearchBudgetExceeded(RuntimeError):
    """The search gave up; this is neither a pass nor a violation."""

    def __init__(self, key, explored):
        super().__init__("search budget exhausted on key %r after %d states" % (key, explored))
        self.key = key
        self.explored = explored


@dataclass
class Linearizable:
    witness: Dict[bytes, List[int]] = field(default_factory=dict)
    explored: int = 0

    ok = True


@dataclass
class Violation:
    key: bytes
    prefix: History           # shortest failing prefix of the history
    log: str                  # full event log
    explored: int = 0

    ok = False

    def describe(self) -> str:
        return ("non-linearizable history on key %r; shortest failing prefix has %d events\n%s"
                % (self.key, len(self.prefix), self.prefix.dumps()))


def _by_key(ops: Sequence[Operation]) -> Dict[bytes, List[Operation]]:
    groups: Dict[bytes, List[Operation]] = {}
    for o in ops:
        if o.result != FAIL:
            groups.setdefault(o.key, []).append(o)
    return groups


def check_key(ops: Sequence[Operation], budget: int = DEFAULT_BUDGET, key=None):
    """Search one key's operations. Returns (order or None, states explored)."""
    ops = sorted(ops, key=lambda o: o.inv)
    n = len(ops)
    need = sum(1 for o in ops if o.ret != INF)
    seen = set()
    # (lo, done-above-lo, value, completed count, path)
    stack = [(0, frozenset(), None, 0, None)]
    explored = 0
    while stack:
        lo, done, value, completed, path = stack.pop()
        memo = (lo, done, value)
        if memo in seen:
            continue
        seen.add(memo)
        explored += 1
        if explored > budget:
            raise SearchBudgetExceeded(key, explored)
        if completed == need:
            order = []
            while path is not None:
                order.append(path[0])
                path = path[1]
            return [ops[i].op_id for i in reversed(order)], explored
        min_ret = INF
        for p in range(lo, n):
            if p in done:
                continue
            o = ops[p]
            if o.inv > min_ret:
                break
            if o.ret < min_ret:
                min_ret = o.ret
            nxt = step(value, o.op, o.args, o.result)
            moves = []
            if nxt is not INVALID:
                moves.append((nxt, (p, path)))
            if o.ret == INF and p == lo:
                # an operation with unknown outcome may simply not have happened
                moves.append((value, path))
            for new_value, new_path in moves:
                ndone = done | {p}
                nlo = lo
                while nlo in ndone:
                    ndone = ndone - {nlo}
                    nlo += 1
                stack.append((nlo, ndone, new_value,
                              completed + (o.ret != INF), new_path))
    return None, explored


def _check_ops(ops, budget):
    witness = {}
    explored = 0
    for key, group in sorted(_by_key(ops).items()):
        order, n = check_key(group, budget, key)
        explored += n
        if order is None:
            return key, witness, explored
        witness[key] = order
    return None, witness, explored


def check(history: History, budget: int = DEFAULT_BUDGET, minimize: bool = True):
    """Linearizable(witness) or Violation(shortest failing prefix, log)."""
    bad, witness, explored = _check_ops(history.operations(), budget)
    if bad is None:
        return Linearizable(witness, explored)
    prefix = history
    if minimize:
        prefix = history.prefix(_shortest_failing_prefix(history, bad, budget))
    return Violation(bad, prefix, history.dumps(), explored)


def _shortest_failing_prefix(history: History, key: bytes, budget: int) -> int:
    """Failure is monotone in the prefix length, so bisect on it."""
    lo, hi = 1, len(history)
    while lo < hi:
        mid = (lo + hi) // 2
        ops = _by_key(history.prefix(mid).operations()).get(key)
        order, _ = check_key(ops, budget, key) if ops else ([], 0)
        if order is None:
            hi = mid
        else:
            lo = mid + 1
    return hi


def brute_force(ops: Sequence[Operation]) -> bool:
    """Exhaustive check over every subset and order; for tiny histories only."""
    ops = [o for o in ops if o.result != FAIL]
    if len(ops) > 8:
        raise ValueError("brute force is only meant for a handful of operations")
    for key, group in _by_key(ops).items():
        if not _brute_force_key(group):
            return False
    return True


def _brute_force_key(ops: List[Operation]) -> bool:
    optional = [o for o in ops if o.ret == INF]
    required = [o for o in ops if o.ret != INF]
    for r in range(len(optional) + 1):
        for extra in itertools.combinations(optional, r):
            chosen = required + list(extra)
            for perm in itertools.permutations(chosen):
                if _legal(perm):
                    return True
    return False


def _legal(order) -> bool:
    for i, a in enumerate(order):
        for b in order[i + 1:]:
            if b.ret < a.inv:
                return False
    value: Optional[bytes] = None
    for o in order:
        value = step(value, o.op, o.args, o.result)
        if value is INVALID:
            return False
    return True
