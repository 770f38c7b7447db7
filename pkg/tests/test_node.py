import itertools

import pytest
from hypothesis import given, settings, strategies as st

from bizur.core import (
    AckRead, AckVote, AckWrite, Bucket, BucketVersion, NackRead, NackVote,
    NackWrite,
)
from bizur.checker.elections import election_stress
from bizur.node import LeaderObserver, MemoryStore, Node, QuorumTally, SafetyViolation
from bizur.simnet import ms

from helpers import elect, make_nodes, plant, run


def voter(voted=0, leader=None):
    sim, nodes = make_nodes(1)
    node = nodes[0]
    node.voted_elect_id, node.leader = voted, leader
    return node


# -- PleaseVote ----------------------------------------------------------------

def test_vote_for_newer_election():
    n = voter(3)
    assert isinstance(n.handle_please_vote(4, 2), AckVote)
    assert n.voted_elect_id == 4 and n.leader == 2
    assert n.store.voted_elect_id == 4


def test_revote_for_same_leader():
    n = voter(4, leader=1)
    assert isinstance(n.handle_please_vote(4, 1), AckVote)


def test_same_election_other_candidate_is_refused():
    n = voter(4, leader=1)
    assert isinstance(n.handle_please_vote(4, 2), NackVote)


def test_stale_election_is_refused_without_state_change():
    n = voter(4, leader=1)
    assert isinstance(n.handle_please_vote(3, 2), NackVote)
    assert (n.voted_elect_id, n.leader) == (4, 1)


def test_two_candidates_same_elect_id_all_delivery_orders():
    """Enumerate every order in which the three voters see the two requests,
    including lost requests; never more than one candidate reaches 2 votes."""
    for orders in itertools.product([(0, 1), (1, 0), (0,), (1,), ()], repeat=3):
        voters = [voter(3) for _ in range(3)]
        votes = {0: 0, 1: 0}
        for v, order in zip(voters, orders):
            for cand in order:
                if isinstance(v.handle_please_vote(4, cand), AckVote):
                    votes[cand] += 1
        assert sum(c >= 2 for c in votes.values()) <= 1, orders


# -- elections through the network ---------------------------------------------

def test_election_with_majority_wins():
    sim, nodes = make_nodes(3)
    elect(sim, nodes[0])
    assert nodes[0].is_leader and nodes[0].elect_id == 1
    assert all(n.voted_elect_id == 1 and n.leader == 0 for n in nodes)


def test_election_sends_to_every_other_member():
    sim, nodes = make_nodes(3)
    elect(sim, nodes[0])
    assert sim.sent["PleaseVote"] == 2 and sim.sent["AckVote"] == 2


def test_election_fails_when_majority_already_voted_higher():
    sim, nodes = make_nodes(3)
    for n in nodes[1:]:
        n.handle_please_vote(5, 2)
    nodes[0].elect_id = nodes[0].voted_elect_id = 0
    won = []
    nodes[0].start_election(won.append)
    sim.run_for(ms(100))
    assert won == [False] and not nodes[0].is_leader


def test_election_fails_without_a_reachable_majority():
    sim, nodes = make_nodes(3)
    sim.crash(1)
    sim.crash(2)
    won = []
    nodes[0].start_election(won.append)
    sim.run_for(ms(200))
    assert won == [False] and not nodes[0].is_leader


def test_new_election_deposes_old_leader():
    sim, nodes = make_nodes(3)
    elect(sim, nodes[0])
    elect(sim, nodes[1])
    assert nodes[1].elect_id == 2
    assert all(n.voted_elect_id == 2 for n in nodes)
    assert not nodes[0].is_leader


def test_observer_flags_two_leaders():
    obs = LeaderObserver()
    obs.elected(1, 4, 0)
    obs.elected(1, 4, 0)
    obs.elected(1, 5, 1)
    with pytest.raises(SafetyViolation):
        obs.elected(1, 4, 2)


# -- ReplicaWrite / ReplicaRead handlers ---------------------------------------

def test_replica_write_newer_election():
    n = voter(3)
    b = Bucket(2, BucketVersion(5, 1), {b"k": b"v"})
    assert isinstance(n.handle_replica_write(b, 1), AckWrite)
    assert n.voted_elect_id == 5 and n.leader == 1
    assert n.local_buckets[2] == b and n.store.buckets[2] == b


def test_replica_write_stale_is_refused():
    n = voter(5)
    assert isinstance(n.handle_replica_write(Bucket(2, BucketVersion(3, 1)), 1), NackWrite)
    assert 2 not in n.local_buckets and n.voted_elect_id == 5


def test_replica_write_same_election():
    n = voter(5)
    b = Bucket(0, BucketVersion(5, 9))
    assert isinstance(n.handle_replica_write(b, 1), AckWrite)
    assert n.local_buckets[0] == b


def test_replica_read_handlers():
    n = voter(2)
    plant(n, Bucket(1, BucketVersion(2, 3), {b"a": b"b"}))
    reply = n.handle_replica_read(1, 4, 0)
    assert isinstance(reply, AckRead) and reply.bucket.ver == (2, 3)
    assert n.voted_elect_id == 4
    assert isinstance(n.handle_replica_read(1, 3, 0), NackRead)
    validate = n.handle_replica_read(1, 4, 0, validate_only=True)
    assert isinstance(validate, AckRead) and validate.bucket is None


def test_missing_bucket_reads_as_empty_with_right_index():
    n = voter()
    assert n.handle_replica_read(7, 1, 0).bucket == Bucket(7)


# -- write ---------------------------------------------------------------------

def test_write_stamps_current_election():
    sim, nodes = make_nodes(3)
    for n in nodes:
        n.voted_elect_id = n.elect_id = 4
    leader = elect(sim, nodes[0])
    assert leader.elect_id == 5
    ok = run(sim, leader, leader.write(Bucket(0, BucketVersion(4, 7))))
    assert ok and leader.bucket(0).ver == (5, 8)
    sim.run_for(ms(5))
    assert all(n.bucket(0).ver == (5, 8) for n in nodes)


@pytest.mark.parametrize("votes", list(itertools.product((4, 5, 6), repeat=2)))
def test_write_outcome_for_every_follower_vote(votes):
    sim, nodes = make_nodes(3)
    for n in nodes:
        n.voted_elect_id = n.elect_id = 4
    leader = elect(sim, nodes[0])
    for n, v in zip(nodes[1:], votes):
        n.voted_elect_id = max(n.voted_elect_id, v)
    # oracle: the leader acks itself; each follower acks iff it has not moved past 5
    expected = 1 + sum(v <= 5 for v in votes) >= 2
    ok = run(sim, leader, leader.write(Bucket(0)))
    assert ok == expected
    assert leader.is_leader == expected


# -- recovery ------------------------------------------------------------------

def test_recovery_picks_max_version_and_rewrites():
    sim, nodes = make_nodes(3)
    for n in nodes:
        n.voted_elect_id = n.elect_id = 4
    plant(nodes[0], Bucket(3, BucketVersion(2, 4), {b"x": b"old"}))
    plant(nodes[1], Bucket(3, BucketVersion(3, 7), {b"x": b"mid"}))
    plant(nodes[2], Bucket(3, BucketVersion(3, 9), {b"x": b"new"}))
    leader = elect(sim, nodes[0])
    assert leader.elect_id == 5
    # make sure the (3,9) replica is in the read majority
    sim.add_delay_rule(lambda env: env.src == (1, 1), ms(30))
    got = run(sim, leader, leader.recover(3, 5))
    assert got.ver == (5, 1) and dict(got.entries) == {b"x": b"new"}
    sim.run_for(ms(50))
    assert all(n.bucket(3).ver == (5, 1) for n in nodes)


def test_recovery_with_other_read_majority_returns_that_max():
    sim, nodes = make_nodes(3)
    for n in nodes:
        n.voted_elect_id = n.elect_id = 4
    plant(nodes[0], Bucket(3, BucketVersion(2, 4), {b"x": b"old"}))
    plant(nodes[1], Bucket(3, BucketVersion(3, 7), {b"x": b"mid"}))
    plant(nodes[2], Bucket(3, BucketVersion(3, 9), {b"x": b"new"}))
    leader = elect(sim, nodes[0])
    sim.crash(2)
    got = run(sim, leader, leader.recover(3, 5))
    assert got.ver == (5, 1) and dict(got.entries) == {b"x": b"mid"}


def test_half_written_value_is_fixed_once_recovered():
    outcomes = set()
    for seed in range(20):
        sim, nodes = make_nodes(3, seed=seed)
        for n in nodes:
            n.voted_elect_id = n.elect_id = 4
        plant(nodes[2], Bucket(0, BucketVersion(4, 1), {b"k": b"half"}))
        leader = elect(sim, nodes[0])
        first = run(sim, leader, leader.read(0))
        outcomes.add(first.entries.get(b"k"))
        for _ in range(3):
            again = elect(sim, nodes[seed % 2])
            assert run(sim, again, again.read(0)).entries.get(b"k") == first.entries.get(b"k")
    assert outcomes == {None, b"half"}


def test_recovery_asserts_equal_payloads_at_equal_versions():
    sim, nodes = make_nodes(3)
    for n in nodes:
        n.voted_elect_id = n.elect_id = 4
    plant(nodes[0], Bucket(0, BucketVersion(3, 3), {b"k": b"a"}))
    plant(nodes[1], Bucket(0, BucketVersion(3, 3), {b"k": b"b"}))
    sim.crash(2)
    leader = elect(sim, nodes[0])
    with pytest.raises(SafetyViolation):
        run(sim, leader, leader.recover(0, leader.elect_id))


def test_ensure_recovery_short_circuits():
    sim, nodes = make_nodes(3)
    leader = elect(sim, nodes[0])
    assert run(sim, leader, leader.ensure_recovery(0))
    before = sum(sim.sent.values())
    assert run(sim, leader, leader.ensure_recovery(0))
    assert sum(sim.sent.values()) == before


# -- read ----------------------------------------------------------------------

def test_read_of_recovered_bucket_is_one_round():
    sim, nodes = make_nodes(3)
    leader = elect(sim, nodes[0])
    run(sim, leader, leader.ensure_recovery(0))
    rounds = leader.stats["rounds"]
    got = run(sim, leader, leader.read(0))
    assert got == leader.bucket(0)
    assert leader.stats["rounds"] - rounds == 1


def test_first_read_after_election_is_two_rounds():
    sim, nodes = make_nodes(3)
    leader = elect(sim, nodes[0])
    rounds = leader.stats["rounds"]
    run(sim, leader, leader.read(0))
    assert leader.stats["rounds"] - rounds == 2
    assert leader.stats["round:recovery-read"] == 1 and leader.stats["round:write"] == 1


def test_read_with_majority_nack_deposes():
    sim, nodes = make_nodes(3)
    leader = elect(sim, nodes[0])
    run(sim, leader, leader.ensure_recovery(0))
    for n in nodes[1:]:
        n.voted_elect_id = 9
    assert run(sim, leader, leader.read(0)) is None
    assert not leader.is_leader


# -- tally -------------------------------------------------------------------

def test_tally_counts_duplicates_once():
    t = QuorumTally(1, (0, 1, 2), "vote", None)
    assert t.record(0, AckVote())
    assert not t.record(0, AckVote())
    assert t.decision() is None
    t.record(1, AckVote())
    assert t.decision() is True


def test_tally_fails_early_once_majority_impossible():
    t = QuorumTally(1, (0, 1, 2, 3, 4), "write", None)
    t.record(0, AckWrite())
    t.record(1, NackWrite())
    t.record(2, NackWrite())
    assert t.decision() is None
    t.record(3, NackWrite())
    assert t.decision() is False


def test_response_after_decision_is_ignored():
    sim, nodes = make_nodes(3)
    leader = elect(sim, nodes[0])
    sim.run_for(ms(50))
    assert leader.pending == {}
    leader.stats.clear()
    run(sim, leader, leader.ensure_recovery(0))
    sim.run_for(ms(50))
    assert leader.is_leader and leader.pending == {}


@given(st.integers(1, 7), st.lists(st.tuples(st.integers(0, 6), st.booleans()), max_size=30))
def test_tally_resolves_exactly_once(n, replies):
    t = QuorumTally(1, tuple(range(n)), "write", None)
    decisions = []
    for server, ack in replies:
        if server >= n:
            continue
        t.record(server, AckWrite() if ack else NackWrite())
        assert len(t.acks) + len(t.nacks) <= n
        d = t.decision()
        if d is not None and not t.decided:
            t.decided = True
            decisions.append(d)
    assert len(decisions) <= 1


# -- background sweep ----------------------------------------------------------

def test_sweep_recovers_every_bucket():
    sim, nodes = make_nodes(3, num_buckets=64)
    leader = elect(sim, nodes[0])
    ticks = 0
    while leader.background_recovery_tick():
        ticks += 1
        sim.run_for(ms(10))
    assert ticks == 64
    assert all(leader.is_recovered(i) for i in range(64))
    assert leader.stats["recoveries"] == 64


def test_sweep_on_non_leader_is_a_noop():
    sim, nodes = make_nodes(3)
    elect(sim, nodes[0])
    assert not nodes[1].background_recovery_tick()
    assert nodes[1].stats["sweep_ticks"] == 0


def test_sweep_racing_client_reads_recovers_each_bucket_once():
    sim, nodes = make_nodes(3, num_buckets=16, background_sweep=True)
    leader = elect(sim, nodes[0])
    from bizur.core import Get
    keys = [b"key%d" % i for i in range(40)]
    answers = []
    for k in keys:
        leader.submit(Get(k), answers.append)
    sim.run_for(ms(300))
    assert len(answers) == 40
    assert all(leader.is_recovered(i) for i in range(16))
    assert leader.stats["recoveries"] == 16


# -- crash and partitions ------------------------------------------------------

def test_vote_survives_crash_recover():
    sim, nodes = make_nodes(3)
    elect(sim, nodes[0])
    elect(sim, nodes[1])
    sim.crash(2, recover_after=ms(1))
    sim.run_for(ms(5))
    assert nodes[2].voted_elect_id == 2 and nodes[2].leader is None
    assert isinstance(nodes[2].handle_please_vote(1, 0), NackVote)


def test_buckets_survive_crash_recover_volatile_state_does_not():
    sim, nodes = make_nodes(3)
    leader = elect(sim, nodes[0])
    run(sim, leader, leader.write(Bucket(0, entries={b"k": b"v"})))
    sim.crash(0, recover_after=ms(1))
    sim.run_for(ms(5))
    assert leader.bucket(0).entries[b"k"] == b"v"
    assert not leader.is_leader and leader.leader is None


def test_leader_crash_then_survivors_elect():
    sim, nodes = make_nodes(3)
    elect(sim, nodes[0])
    sim.crash(0)
    elect(sim, nodes[1])
    assert nodes[1].elect_id == 2


def test_follower_crash_does_not_stop_writes():
    sim, nodes = make_nodes(3)
    leader = elect(sim, nodes[0])
    sim.crash(2)
    assert run(sim, leader, leader.write(Bucket(0)))


def test_partitioned_leader_is_deposed_and_relinquishes_after_heal():
    sim, nodes = make_nodes(3)
    old = elect(sim, nodes[0])
    run(sim, old, old.ensure_recovery(0))
    sim.partition([[0], [1, 2]])
    new = elect(sim, nodes[1])
    assert run(sim, old, old.write(old.bucket(0))) is False
    assert not old.is_leader
    sim.heal()
    # a fresh attempt by the stale node now meets nacks from the new majority
    old.is_leader, old.elect_id = True, 1
    assert run(sim, old, old.read(0)) is None
    assert not old.is_leader and new.is_leader


# -- invariants under random schedules -----------------------------------------

class MonotoneStore(MemoryStore):
    def save_vote(self, voted_elect_id):
        assert voted_elect_id >= self.voted_elect_id, "vote went backwards"
        return super().save_vote(voted_elect_id)


def _monotone_node(sim, sid, members, **kw):
    return Node(sim, sid, members, store=MonotoneStore(), **kw)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_at_most_one_leader_per_election(seed):
    result = election_stress(seed, node_factory=_monotone_node)
    assert result.violations == []


def test_election_stress_actually_elects():
    runs = [election_stress(s) for s in range(30)]
    assert sum(r.wins for r in runs) > 30
    assert {r.servers for r in runs} == {3, 5}
