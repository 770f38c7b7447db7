"""
Operation histories.

A history is an ordered list of events. Each event is an ``invoke`` or a
``respond`` of one client; a client has at most one outstanding invoke and
every respond closes the client's outstanding invoke. Event order (not the
timestamp) defines real-time precedence, so two events at the same virtual
time are still ordered.

Text format, one event per line::

    <time_us> <client> invoke <op> <key> <payload>
    <time_us> <client> respond <op> <key> <result>

Keys and values are percent-encoded; ``*`` stands for "no value". Results are
``ok``, ``absent``, ``value=<v>``, ``mismatch=<v>``, ``info`` (unknown
outcome) or ``fail`` (definitely not applied).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple
from urllib.parse import quote_from_bytes, unquote_to_bytes

from ..core import (
    Absent, CasDelete, CasMismatch, CasSet, Delete, Get, Ok, Set, Value,
)

INF = float("inf")

GET, SET, DELETE, CAS_SET, CAS_DELETE = "get", "set", "delete", "cas_set", "cas_delete"
KINDS = (GET, SET, DELETE, CAS_SET, CAS_DELETE)

OK = ("ok",)
ABSENT = ("absent",)
INFO = ("info",)
FAIL = ("fail",)


class HistoryError(ValueError):
    """Malformed history text or event sequence."""


@dataclass(frozen=True)
class Event:
    time: int
    client: str
    kind: str          # "invoke" | "respond"
    op: str
    key: bytes
    data: tuple        # invoke: args; respond: result


@dataclass
class Operation:
    """An invoke matched with its respond (if any)."""

    op_id: int
    client: str
    op: str
    key: bytes
    args: tuple
    inv: int                       # event index of the invoke
    ret: float = INF               # event index of the respond; INF if unknown
    result: tuple = INFO
    inv_time: int = 0
    ret_time: Optional[int] = None

    @property
    def indeterminate(self) -> bool:
        return self.result == INFO

    def __repr__(self):
        return "Operation(%d %s %s %r %r -> %r)" % (
            self.op_id, self.client, self.op, self.key, self.args, self.result)


# -- core op / response conversion ---------------------------------------

def describe(op) -> Tuple[str, bytes, tuple]:
    """(kind, key, args) of a key-value request."""
    if isinstance(op, Get):
        return GET, op.key, ()
    if isinstance(op, Set):
        return SET, op.key, (op.value,)
    if isinstance(op, Delete):
        return DELETE, op.key, ()
    if isinstance(op, CasSet):
        return CAS_SET, op.key, (op.expected, op.value)
    if isinstance(op, CasDelete):
        return CAS_DELETE, op.key, (op.expected,)
    raise TypeError("not a single-key operation: %r" % (op,))


def outcome(response) -> tuple:
    """History result of a final client response."""
    if isinstance(response, Ok):
        return OK
    if isinstance(response, Absent):
        return ABSENT
    if isinstance(response, Value):
        return ("value", response.value)
    if isinstance(response, CasMismatch):
        return ("mismatch", response.actual)
    # local import keeps the checker usable without the client module loaded
    from ..client import RetriesExhausted
    if isinstance(response, RetriesExhausted):
        return FAIL
    return INFO


# -- text encoding -------------------------------------------------------

def _enc(v: Optional[bytes]) -> str:
    return "*" if v is None else (quote_from_bytes(v, safe="") or "%")


def _dec(tok: str) -> Optional[bytes]:
    if tok == "*":
        return None
    if tok == "%":
        return b""
    return unquote_to_bytes(tok)


def _enc_args(args: tuple) -> str:
    return ",".join(_enc(a) for a in args) if args else "-"


def _dec_args(tok: str) -> tuple:
    return () if tok == "-" else tuple(_dec(t) for t in tok.split(","))


def _enc_result(res: tuple) -> str:
    if len(res) == 1:
        return res[0]
    return "%s=%s" % (res[0], _enc(res[1]))


def _dec_result(tok: str) -> tuple:
    name, sep, rest = tok.partition("=")
    if not sep:
        if name not in ("ok", "absent", "info", "fail"):
            raise HistoryError("unknown result %r" % tok)
        return (name,)
    if name not in ("value", "mismatch"):
        raise HistoryError("unknown result %r" % tok)
    return (name, _dec(rest))


class History:
    def __init__(self, events: Iterable[Event] = ()):
        self.events: List[Event] = []
        self._open: Dict[str, int] = {}
        for ev in events:
            self._append(ev)

    def __len__(self):
        return len(self.events)

    def _append(self, ev: Event) -> None:
        if ev.op not in KINDS:
            raise HistoryError("unknown op %r" % ev.op)
        if ev.kind == "invoke":
            if ev.client in self._open:
                raise HistoryError("client %s has two outstanding invokes" % ev.client)
            self._open[ev.client] = len(self.events)
        elif ev.kind == "respond":
            idx = self._open.pop(ev.client, None)
            if idx is None:
                raise HistoryError("respond without invoke for client %s" % ev.client)
            inv = self.events[idx]
            if (inv.op, inv.key) != (ev.op, ev.key):
                raise HistoryError("respond does not match invoke at event %d" % idx)
        else:
            raise HistoryError("bad event kind %r" % ev.kind)
        self.events.append(ev)

    def invoke(self, time: int, client, op: str, key: bytes, args: tuple = ()) -> None:
        self._append(Event(int(time), str(client), "invoke", op, key, tuple(args)))

    def respond(self, time: int, client, op: str, key: bytes, result: tuple) -> None:
        self._append(Event(int(time), str(client), "respond", op, key, tuple(result)))

    def invoke_op(self, time: int, client, request) -> None:
        kind, key, args = describe(request)
        self.invoke(time, client, kind, key, args)

    def respond_op(self, time: int, client, request, response) -> None:
        kind, key, _ = describe(request)
        self.respond(time, client, kind, key, outcome(response))

    def prefix(self, n: int) -> "History":
        return History(self.events[:n])

    def operations(self) -> List[Operation]:
        ops: List[Operation] = []
        open_: Dict[str, Operation] = {}
        for i, ev in enumerate(self.events):
            if ev.kind == "invoke":
                o = Operation(len(ops), ev.client, ev.op, ev.key, ev.data, i, inv_time=ev.time)
                ops.append(o)
                open_[ev.client] = o
            else:
                o = open_.pop(ev.client)
                o.result, o.ret_time = ev.data, ev.time
                # an unknown outcome may take effect at any time after the invoke
                o.ret = INF if ev.data == INFO else i
        return ops

    def keys(self) -> List[bytes]:
        return sorted({ev.key for ev in self.events})

    # -- serialization --

    def dumps(self) -> str:
        lines = []
        for ev in self.events:
            tail = _enc_args(ev.data) if ev.kind == "invoke" else _enc_result(ev.data)
            lines.append("%d %s %s %s %s %s" % (
                ev.time, ev.client, ev.kind, ev.op, _enc(ev.key), tail))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def loads(cls, text: str) -> "History":
        h = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 6:
                raise HistoryError("line %d: expected 6 fields, got %d" % (lineno, len(parts)))
            t, client, kind, op, key, tail = parts
            try:
                data = _dec_args(tail) if kind == "invoke" else _dec_result(tail)
                h._append(Event(int(t), client, kind, op, _dec(key), data))
            except (HistoryError, ValueError) as exc:
                raise HistoryError("line %d: %s" % (lineno, exc)) from None
        return h
