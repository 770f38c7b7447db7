"""Sequential specification of a single key: a register with compare-and-set."""

from __future__ import annotations

from typing import Optional

from .history import CAS_DELETE, CAS_SET, DELETE, GET, INFO, OK, SET

_INVALID = object()


def step(state: Optional[bytes], op: str, args: tuple, result: tuple):
    """Next state after ``op`` returns ``result`` in ``state``.

    Returns the module-level sentinel ``INVALID`` if the result is impossible
    in that state. An ``info`` result accepts whatever the operation would have
    returned.
    """
    unknown = result == INFO
    if op == GET:
        if unknown:
            return state
        if state is None:
            return state if result == ("absent",) else _INVALID
        return state if result == ("value", state) else _INVALID
    if op == SET:
        return args[0] if unknown or result == OK else _INVALID
    if op == DELETE:
        return None if unknown or result == OK else _INVALID
    if op in (CAS_SET, CAS_DELETE):
        expected = args[0]
        new = args[1] if op == CAS_SET else None
        if state == expected:
            return new if unknown or result == OK else _INVALID
        if unknown or result == ("mismatch", state):
            return state
        return _INVALID
    raise ValueError("unknown op %r" % op)


INVALID = _INVALID
