"""Coroutine commands and control-flow exceptions shared by node and kv."""


class NotLeaderError(Exception):
    """Raised inside a coroutine when the node cannot act as leader."""

    def __init__(self, maybe_applied: bool = False):
        super().__init__("not a leader")
        self.maybe_applied = maybe_applied


class CasFailed(Exception):
    def __init__(self, actual):
        super().__init__("compare-and-set mismatch")
        self.actual = actual


class Drained(Exception):
    """The instance is draining; the request must go to its successor."""


class Quorum:
    """Broadcast ``payload`` to all members and wait for a majority decision."""

    __slots__ = ("payload", "kind")

    def __init__(self, payload, kind):
        self.payload = payload
        self.kind = kind


class Acquire:
    """Take the per-bucket lock; the coroutine receives its owner token."""

    __slots__ = ("index",)

    def __init__(self, index):
        self.index = index


class Sleep:
    __slots__ = ("delay",)

    def __init__(self, delay):
        self.delay = delay


class Remote:
    """Call the previous instance (reconfiguration copy read)."""

    __slots__ = ("op",)

    def __init__(self, op):
        self.op = op


class Gather:
    """Run sub-coroutines concurrently; resume with their results in order."""

    __slots__ = ("gens",)

    def __init__(self, gens):
        self.gens = list(gens)
