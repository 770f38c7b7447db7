import itertools

import pytest
from hypothesis import given, settings, strategies as st

from bizur.checker import (
    CheckerParams, History, HistoryError, Linearizable, SearchBudgetExceeded,
    Violation, WorkloadParams, brute_force, check, generate_workload, run_check,
    stream,
)
from bizur.checker.history import ABSENT, FAIL, INFO, OK
from bizur.checker.model import INVALID, step
from bizur.client import Indeterminate, RetriesExhausted
from bizur.core import Absent, CasDelete, CasMismatch, CasSet, Delete, Get, Ok, Set, Value


def H(*rows):
    """Build a history from (client, 'i'|'r', op, key, data) rows."""
    h = History()
    for t, (client, kind, op, key, data) in enumerate(rows):
        if kind == "i":
            h.invoke(t, client, op, key, data)
        else:
            h.respond(t, client, op, key, data)
    return h


# -- model -----------------------------------------------------------------------

def test_register_model():
    assert step(None, "get", (), ABSENT) is None
    assert step(b"a", "get", (), ("value", b"a")) == b"a"
    assert step(b"a", "get", (), ABSENT) is INVALID
    assert step(b"a", "set", (b"b",), OK) == b"b"
    assert step(b"a", "delete", (), OK) is None
    assert step(None, "cas_set", (None, b"x"), OK) == b"x"
    assert step(b"y", "cas_set", (b"a", b"x"), ("mismatch", b"y")) == b"y"
    assert step(b"y", "cas_set", (b"a", b"x"), OK) is INVALID
    assert step(b"a", "cas_delete", (b"a",), OK) is None
    assert step(b"a", "cas_set", (b"a", b"x"), INFO) == b"x"


# -- history format -----------------------------------------------------------------

def test_history_text_roundtrip():
    h = H(("a", "i", "set", b"k 1", (b"\x00v",)),
          ("b", "i", "cas_set", b"k 1", (None, b"")),
          ("a", "r", "set", b"k 1", OK),
          ("b", "r", "cas_set", b"k 1", ("mismatch", b"\x00v")),
          ("a", "i", "get", b"k 1", ()),
          ("a", "r", "get", b"k 1", INFO))
    text = h.dumps()
    assert History.loads(text).events == h.events
    assert text.splitlines()[0] == "0 a invoke set k%201 %00v"
    assert text.splitlines()[1] == "1 b invoke cas_set k%201 *,%"


def test_history_is_well_formed():
    h = History()
    h.invoke(0, "a", "get", b"k")
    with pytest.raises(HistoryError):
        h.invoke(1, "a", "get", b"k")
    with pytest.raises(HistoryError):
        h.respond(1, "b", "get", b"k", OK)
    with pytest.raises(HistoryError):
        h.respond(1, "a", "set", b"k", OK)
    with pytest.raises(HistoryError):
        History.loads("0 a invoke get k\n")
    with pytest.raises(HistoryError):
        History.loads("0 a invoke get k -\n1 a respond get k weird\n")


def test_outcomes_of_client_responses():
    h = History()
    for i, (req, resp, want) in enumerate([
        (Get(b"k"), Value(b"v"), ("value", b"v")),
        (Get(b"k"), Absent(), ABSENT),
        (Set(b"k", b"v"), Ok(), OK),
        (CasSet(b"k", None, b"v"), CasMismatch(b"w"), ("mismatch", b"w")),
        (Delete(b"k"), Indeterminate("t"), INFO),
        (CasDelete(b"k", b"v"), RetriesExhausted(3), FAIL),
    ]):
        h.invoke_op(2 * i, "c", req)
        h.respond_op(2 * i + 1, "c", req, resp)
        assert h.events[-1].data == want


def test_unfinished_and_info_ops_have_open_end():
    h = H(("a", "i", "set", b"k", (b"1",)),
          ("b", "i", "set", b"k", (b"2",)),
          ("b", "r", "set", b"k", INFO))
    ops = h.operations()
    assert all(o.ret == float("inf") for o in ops)


# -- verdicts on handcrafted histories -----------------------------------------------

def test_sequential_set_get_is_linearizable():
    h = H(("a", "i", "set", b"k", (b"v",)), ("a", "r", "set", b"k", OK),
          ("a", "i", "get", b"k", ()), ("a", "r", "get", b"k", ("value", b"v")))
    v = check(h)
    assert isinstance(v, Linearizable) and v.witness == {b"k": [0, 1]}


def test_read_of_unwritten_value_is_a_violation():
    h = H(("a", "i", "get", b"k", ()), ("a", "r", "get", b"k", ("value", b"ghost")))
    v = check(h)
    assert isinstance(v, Violation) and v.key == b"k"
    assert "ghost" in v.log


def test_two_overlapping_cas_both_ok_is_a_violation():
    h = H(("w", "i", "set", b"k", (b"v0",)), ("w", "r", "set", b"k", OK),
          ("a", "i", "cas_set", b"k", (b"v0", b"v1")),
          ("b", "i", "cas_set", b"k", (b"v0", b"v2")),
          ("a", "r", "cas_set", b"k", OK),
          ("b", "r", "cas_set", b"k", OK))
    assert not check(h).ok
    assert not brute_force(h.operations())


def test_one_ok_one_mismatch_is_fine():
    h = H(("w", "i", "set", b"k", (b"v0",)), ("w", "r", "set", b"k", OK),
          ("a", "i", "cas_set", b"k", (b"v0", b"v1")),
          ("b", "i", "cas_set", b"k", (b"v0", b"v2")),
          ("a", "r", "cas_set", b"k", OK),
          ("b", "r", "cas_set", b"k", ("mismatch", b"v1")))
    assert check(h).ok


def test_stale_read_after_completed_write_is_a_violation():
    h = H(("a", "i", "set", b"k", (b"1",)), ("a", "r", "set", b"k", OK),
          ("a", "i", "set", b"k", (b"2",)), ("a", "r", "set", b"k", OK),
          ("b", "i", "get", b"k", ()), ("b", "r", "get", b"k", ("value", b"1")))
    assert not check(h).ok


def test_concurrent_read_may_see_either():
    for seen in (b"1", b"2"):
        h = H(("a", "i", "set", b"k", (b"1",)), ("a", "r", "set", b"k", OK),
              ("a", "i", "set", b"k", (b"2",)),
              ("b", "i", "get", b"k", ()), ("b", "r", "get", b"k", ("value", seen)),
              ("a", "r", "set", b"k", OK))
        assert check(h).ok


def test_info_write_may_or_may_not_happen():
    base = [("a", "i", "set", b"k", (b"1",)), ("a", "r", "set", b"k", INFO)]
    for result in (ABSENT, ("value", b"1")):
        h = H(*base, ("b", "i", "get", b"k", ()), ("b", "r", "get", b"k", result))
        assert check(h).ok
    # but once seen it cannot un-happen
    h = H(*base, ("b", "i", "get", b"k", ()), ("b", "r", "get", b"k", ("value", b"1")),
          ("b", "i", "get", b"k", ()), ("b", "r", "get", b"k", ABSENT))
    assert not check(h).ok


def test_failed_write_never_happened():
    h = H(("a", "i", "set", b"k", (b"1",)), ("a", "r", "set", b"k", FAIL),
          ("b", "i", "get", b"k", ()), ("b", "r", "get", b"k", ("value", b"1")))
    assert not check(h).ok


def test_real_time_order_uses_event_order_not_timestamps():
    h = History()
    h.invoke(5, "a", "set", b"k", (b"1",))
    h.respond(5, "a", "set", b"k", OK)
    h.invoke(5, "b", "get", b"k", ())
    h.respond(5, "b", "get", b"k", ABSENT)
    assert not check(h).ok


def test_violation_prefix_is_minimal():
    h = H(("a", "i", "set", b"k", (b"1",)), ("a", "r", "set", b"k", OK),
          ("b", "i", "get", b"j", ()), ("b", "r", "get", b"j", ABSENT),
          ("b", "i", "get", b"k", ()), ("b", "r", "get", b"k", ABSENT),
          ("a", "i", "set", b"k", (b"2",)), ("a", "r", "set", b"k", OK))
    v = check(h)
    assert not v.ok and len(v.prefix) == 6
    assert check(h.prefix(5)).ok
    assert v.log == h.dumps()
    assert "shortest failing prefix has 6 events" in v.describe()


def test_budget_exhaustion_is_not_a_verdict():
    rows = []
    for c in range(8):
        rows.append(("c%d" % c, "i", "set", b"k", (b"%d" % c,)))
    for c in range(8):
        rows.append(("c%d" % c, "r", "set", b"k", OK))
    rows += [("z", "i", "get", b"k", ()), ("z", "r", "get", b"k", ("value", b"nope"))]
    with pytest.raises(SearchBudgetExceeded):
        check(H(*rows), budget=50)
    assert not check(H(*rows)).ok


# -- oracle agreement -------------------------------------------------------------

VALUES = [b"1", b"2"]


@st.composite
def histories(draw, keys=(b"k",), max_ops=6, clients=3):
    h = History()
    open_ = {}
    n_ops = draw(st.integers(1, max_ops))
    started = 0
    t = 0
    while started < n_ops or open_:
        idle = [c for c in range(clients) if c not in open_]
        can_invoke = started < n_ops and idle
        if can_invoke and (not open_ or draw(st.booleans())):
            c = draw(st.sampled_from(idle))
            op = draw(st.sampled_from(["get", "set", "delete", "cas_set", "cas_delete"]))
            key = draw(st.sampled_from(keys))
            v = draw(st.sampled_from(VALUES))
            e = draw(st.sampled_from([None] + VALUES))
            args = {"get": (), "set": (v,), "delete": (), "cas_set": (e, v),
                    "cas_delete": (e,)}[op]
            h.invoke(t, "c%d" % c, op, key, args)
            open_[c] = (op, key)
            started += 1
        else:
            c = draw(st.sampled_from(sorted(open_)))
            op, key = open_.pop(c)
            if op == "get":
                choices = [ABSENT, INFO] + [("value", v) for v in VALUES]
            elif op in ("set", "delete"):
                choices = [OK, INFO, FAIL]
            else:
                choices = [OK, INFO, FAIL, ("mismatch", None)] + [("mismatch", v) for v in VALUES]
            h.respond(t, "c%d" % c, op, key, draw(st.sampled_from(choices)))
        t += 1
    return h


@settings(max_examples=400, deadline=None)
@given(histories())
def test_checker_agrees_with_brute_force(h):
    assert check(h, minimize=False).ok == brute_force(h.operations())


def _global_brute_force(ops):
    """Strict serializability over all keys at once: some legal total order."""
    ops = [o for o in ops if o.result != FAIL]
    optional = [o for o in ops if o.ret == float("inf")]
    required = [o for o in ops if o.ret != float("inf")]
    for r in range(len(optional) + 1):
        for extra in itertools.combinations(optional, r):
            for perm in itertools.permutations(required + list(extra)):
                if any(b.ret < a.inv for i, a in enumerate(perm) for b in perm[i + 1:]):
                    continue
                state, good = {}, True
                for o in perm:
                    nxt = step(state.get(o.key), o.op, o.args, o.result)
                    if nxt is INVALID:
                        good = False
                        break
                    state[o.key] = nxt
                if good:
                    return True
    return False


@settings(max_examples=200, deadline=None)
@given(histories(keys=(b"a", b"b"), max_ops=6))
def test_per_key_reduction_matches_whole_history_search(h):
    assert check(h, minimize=False).ok == _global_brute_force(h.operations())


def test_cross_key_history_handcrafted():
    # each key alone is fine, and together too: single-key ops compose
    h = H(("a", "i", "set", b"x", (b"1",)),
          ("b", "i", "set", b"y", (b"1",)),
          ("a", "r", "set", b"x", OK),
          ("a", "i", "get", b"y", ()), ("a", "r", "get", b"y", ABSENT),
          ("b", "r", "set", b"y", OK),
          ("b", "i", "get", b"x", ()), ("b", "r", "get", b"x", ("value", b"1")))
    assert check(h).ok and _global_brute_force(h.operations())


@settings(max_examples=100, deadline=None)
@given(histories())
def test_violation_prefixes_fail_and_shorter_ones_pass(h):
    v = check(h)
    if v.ok:
        return
    n = len(v.prefix)
    assert not check(h.prefix(n), minimize=False).ok
    assert check(h.prefix(n - 1), minimize=False).ok


# -- workload ------------------------------------------------------------------------

def test_workload_is_deterministic():
    p = WorkloadParams(clients=4, keys=5, ops_per_client=20)
    assert generate_workload(3, p) == generate_workload(3, p)
    assert generate_workload(3, p) != generate_workload(4, p)


def test_single_key_workload_hits_one_key():
    scripts = generate_workload(1, WorkloadParams(keys=1))
    assert {op.key for s in scripts for op in s} == {b"k0"}


def test_written_values_are_unique():
    scripts = generate_workload(2, WorkloadParams(clients=8, keys=3, ops_per_client=50))
    vals = [op.value for s in scripts for op in s if isinstance(op, (Set, CasSet))]
    assert len(vals) == len(set(vals))


def test_zipf_skews_toward_first_keys():
    p = WorkloadParams(clients=4, keys=50, ops_per_client=500, distribution="zipf")
    ops = [op for s in generate_workload(0, p) for op in s]
    hot = sum(op.key == b"k0" for op in ops)
    assert hot > len(ops) / 10


def test_workload_param_validation():
    with pytest.raises(ValueError):
        WorkloadParams(keys=0)
    with pytest.raises(ValueError):
        WorkloadParams(mix={"scan": 1.0})
    with pytest.raises(ValueError):
        WorkloadParams(distribution="pareto")


def test_benchmark_stream_is_deterministic_per_client():
    p = WorkloadParams(keys=10)
    a = list(itertools.islice(stream(1, p, 0), 50))
    assert a == list(itertools.islice(stream(1, p, 0), 50))
    assert a != list(itertools.islice(stream(1, p, 1), 50))


# -- end-to-end runs -------------------------------------------------------------------

def test_clean_runs_are_linearizable():
    for seed in range(10):
        res = run_check(seed)
        assert res.ok, res.verdict
        assert res.killed is not None


def test_rerun_gives_identical_history_and_verdict():
    a, b = run_check(11), run_check(11)
    assert a.history.dumps() == b.history.dumps()
    assert a.verdict.ok == b.verdict.ok


def test_zero_chaos_rate_leaves_schedule_unchanged():
    base = run_check(5, CheckerParams(chaos_rate=0.0))
    again = run_check(5, CheckerParams())
    assert base.history.dumps() == again.history.dumps()


def test_chaos_is_seed_deterministic_and_stays_linearizable():
    params = CheckerParams(chaos_rate=0.3)
    runs = [run_check(s, params) for s in range(8)]
    assert all(r.ok for r in runs)
    assert run_check(3, params).history.dumps() == runs[3].history.dumps()
    assert run_check(3, params).history.dumps() != run_check(3).history.dumps()


def test_mutant_is_caught():
    params = CheckerParams(mutant=True)
    caught = next((s for s in range(200) if not run_check(s, params).verdict.ok), None)
    assert caught is not None
