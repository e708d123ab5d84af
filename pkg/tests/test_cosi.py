import random

import pytest

from byzcoin_lab import cosi, groups
from byzcoin_lab.cosi import build_tree, flat_round, run_round, verify_collective
from byzcoin_lab.groups import TOY


def make_keys(n, seed=1):
    rng = random.Random(seed)
    return [groups.keypair_from_secret(TOY, rng.randrange(TOY.order)) for _ in range(n)]


def reachability_oracle(n, branching, faults):
    # Independent BFS over explicit child lists; nothing shared with CommTree.
    children = {i: [] for i in range(n)}
    for i in range(1, n):
        children[(i - 1) // branching].append(i)
    reached = set()
    queue = [0]
    while queue:
        node = queue.pop()
        if node in faults:
            continue
        reached.add(node)
        queue.extend(children[node])
    return frozenset(range(n)) - frozenset(reached)


class TestBuildTree:
    def test_seven_nodes_binary(self):
        tree = build_tree(range(7), 2)
        assert tree.children(0) == [1, 2]
        assert tree.children(1) == [3, 4]
        assert tree.parent(6) == 2
        assert tree.parent(0) is None

    def test_single_node(self):
        tree = build_tree(["solo"], 2)
        assert tree.depth() == 0
        assert tree.children(0) == []

    def test_depth_formula_oracle(self):
        for n, b in [(1008, 8), (144, 8), (7, 2), (1, 2), (16, 3), (36, 8), (2, 2)]:
            tree = build_tree(range(n), b)
            assert tree.depth() == cosi.tree_depth_formula(n, b)
        assert build_tree(range(1008), 8).depth() == 4

    def test_errors(self):
        with pytest.raises(ValueError):
            build_tree([], 2)
        with pytest.raises(ValueError):
            build_tree(range(3), 1)


class TestRunRound:
    def test_honest_roster_verifies(self):
        keys = make_keys(7)
        tree = build_tree(range(7), 2)
        sig = run_round(TOY, tree, keys, b"block")
        assert sig.excepted == frozenset()
        assert verify_collective(TOY, [k.public for k in keys], sig, b"block")

    def test_single_fault_masks_and_verifies_without_that_key(self):
        keys = make_keys(7)
        tree = build_tree(range(7), 2)
        sig = run_round(TOY, tree, keys, b"block", faults={5})
        assert sig.excepted == frozenset({5})
        assert verify_collective(TOY, [k.public for k in keys], sig, b"block")
        # Including the excepted key in the aggregate must break it.
        full_aggregate = groups.aggregate(TOY, (k.public for k in keys))
        assert not groups.verify(TOY, full_aggregate, sig.commitment, sig.challenge, sig.response)

    def test_all_reject_raises(self):
        keys = make_keys(7)
        tree = build_tree(range(7), 2)
        with pytest.raises(cosi.InsufficientParticipation) as info:
            run_round(TOY, tree, keys, b"block", validator=lambda i, m: False, quorum=1)
        assert len(info.value.excepted) == 7

    def test_quorum_error_carries_partial_mask(self):
        keys = make_keys(7)
        tree = build_tree(range(7), 2)
        with pytest.raises(cosi.InsufficientParticipation) as info:
            run_round(TOY, tree, keys, b"block", faults={1, 2}, quorum=5)
        assert info.value.excepted == frozenset({1, 2, 3, 4, 5, 6})

    def test_faulty_leader_rejected(self):
        keys = make_keys(3)
        tree = build_tree(range(3), 2)
        with pytest.raises(ValueError):
            run_round(TOY, tree, keys, b"block", faults={0})

    def test_interior_fault_cuts_subtree(self):
        keys = make_keys(7)
        tree = build_tree(range(7), 2)
        sig = run_round(TOY, tree, keys, b"block", faults={1})
        assert sig.excepted == frozenset({1, 3, 4})
        assert verify_collective(TOY, [k.public for k in keys], sig, b"block")


class TestVerifyCollective:
    def test_tampered_message_fails(self):
        keys = make_keys(7)
        tree = build_tree(range(7), 2)
        sig = run_round(TOY, tree, keys, b"block")
        assert not verify_collective(TOY, [k.public for k in keys], sig, b"blocj")

    def test_mask_length_mismatch(self):
        keys = make_keys(7)
        sig = run_round(TOY, build_tree(range(7), 2), keys, b"block")
        with pytest.raises(ValueError):
            verify_collective(TOY, [k.public for k in keys[:5]], sig, b"block")

    def test_wrong_mask_fails(self):
        keys = make_keys(7)
        tree = build_tree(range(7), 2)
        sig = run_round(TOY, tree, keys, b"block", faults={5})
        forged = cosi.CollectiveSignature(
            commitment=sig.commitment,
            challenge=sig.challenge,
            response=sig.response,
            excepted=frozenset(),
            roster_size=sig.roster_size,
        )
        assert not verify_collective(TOY, [k.public for k in keys], forged, b"block")


class TestTreeFlatEquivalence:
    def test_matches_flat_reference_for_all_small_rosters(self):
        message = b"equivalence"
        for n in range(1, 17):
            keys = make_keys(n, seed=n)
            publics = [k.public for k in keys]
            for branching in (2, 3, 8):
                tree = build_tree(range(n), branching)
                fault_choices = [frozenset()] + [frozenset({i}) for i in range(1, n)]
                for faults in fault_choices:
                    tree_sig = run_round(TOY, tree, keys, message, faults=faults)
                    expected_mask = reachability_oracle(n, branching, faults)
                    assert tree_sig.excepted == expected_mask
                    flat_sig = flat_round(TOY, keys, message, faults=expected_mask)
                    assert flat_sig.excepted == tree_sig.excepted
                    assert verify_collective(TOY, publics, tree_sig, message)
                    assert verify_collective(TOY, publics, flat_sig, message)

    def test_exception_monotonicity(self):
        keys = make_keys(13)
        tree = build_tree(range(13), 3)
        rng = random.Random(5)
        for _ in range(50):
            base = frozenset(rng.sample(range(1, 13), 2))
            extra = base | {rng.randrange(1, 13)}
            small = run_round(TOY, tree, keys, b"m", faults=base).excepted
            large = run_round(TOY, tree, keys, b"m", faults=extra).excepted
            assert small <= large

    def test_subtree_aggregate_consistency(self):
        keys = make_keys(10)
        tree = build_tree(range(10), 2)
        sig, state = run_round(TOY, tree, keys, b"m", faults={4}, return_state=True)
        for index, aggregate in state.subtree_commitments.items():
            members = [
                i for i in tree.subtree(index) if i not in sig.excepted
            ]
            product = groups.aggregate(TOY, (state.commitments[i] for i in members))
            assert aggregate == product


class TestCountMessages:
    def test_binary_seven_total(self):
        tree = build_tree(range(7), 2)
        stats = cosi.count_messages(tree)
        assert stats.total == 24
        assert stats.per_phase["announcement"] == 6
        assert stats.max_hops == 2 * tree.depth()

    def test_single_node(self):
        tree = build_tree(range(1), 2)
        assert cosi.count_messages(tree).total == 0

    def test_flat_topology_counts(self):
        n = 9
        tree = build_tree(range(n), n - 1)
        stats = cosi.count_messages(tree)
        # Leader sends n-1 per down phase and receives n-1 per up phase.
        assert stats.per_phase["announcement"] == n - 1
        assert stats.per_phase["commitment"] == n - 1
        assert stats.total == 4 * (n - 1)
        assert stats.max_hops == 2

    def test_faults_reduce_counts(self):
        tree = build_tree(range(7), 2)
        stats = cosi.count_messages(tree, faults={1})
        # Node 1 receives the announcement but sends nothing; subtree silent.
        assert stats.per_phase["announcement"] == 4
        assert stats.per_phase["commitment"] == 3


class TestWireFormat:
    def test_phase_frame_roundtrip(self):
        frame = cosi.PhaseFrame(
            round_id=7, era_id=bytes(range(32)), phase=cosi.PHASE_CHALLENGE, payload=b"xyz"
        )
        assert cosi.PhaseFrame.deserialize(frame.serialize()) == frame

    def test_signature_serialization_stable(self):
        keys = make_keys(7)
        sig = run_round(TOY, build_tree(range(7), 2), keys, b"block", faults={5})
        blob = sig.serialize(TOY)
        assert blob == sig.serialize(TOY)
        assert sig.mask_bits()[4:5] == bytes([1 << 5])
