import hashlib
import random
from collections import Counter

import pytest

from byzcoin_lab import chain, cosi, groups
from byzcoin_lab.chain import (
    GENESIS_HASH,
    KeyBlock,
    MicroBlock,
    Roster,
    ShareWindow,
    Violation,
    resolve_fork,
    split_reward,
    update_window,
    validate_microblock,
    voting_power,
)
from byzcoin_lab.groups import TOY


def make_keyblock(height=0, prev=GENESIS_HASH, miner="A", nonce=1, ts=0):
    pubkey = groups.keypair_from_secret(TOY, sum(miner.encode())).public
    return KeyBlock(
        height=height,
        prev_hash=prev,
        miner=miner,
        miner_pubkey=pubkey,
        pow_nonce=nonce,
        extra_zero_bits=0,
        pow_valid=True,
        timestamp_ms=ts,
    )


def window_of(size, miners):
    window = ShareWindow(size=size)
    prev = GENESIS_HASH
    for height, miner in enumerate(miners):
        block = make_keyblock(height=height, prev=prev, miner=miner)
        window = update_window(window, block, expected_prev=prev)
        prev = block.hash()
    return window


class TestShareWindow:
    def test_fifo_eviction(self):
        window = window_of(3, ["A", "B", "C"])
        assert window.miners() == ("A", "B", "C")
        block = make_keyblock(height=3, miner="D")
        window = update_window(window, block)
        assert window.miners() == ("B", "C", "D")
        assert "A" not in Roster.from_window(window).shares

    def test_repeat_miner_holds_multiple_shares(self):
        window = window_of(3, ["A", "B", "A"])
        window = update_window(window, make_keyblock(height=3, miner="A"))
        assert window.miners() == ("B", "A", "A")
        assert voting_power(Roster.from_window(window), "A") == 2

    def test_monopoly_miner(self):
        window = window_of(144, ["M"] * 200)
        roster = Roster.from_window(window)
        assert voting_power(roster, "M") == 144
        assert roster.total_shares == 144

    def test_extend_check(self):
        window = window_of(3, ["A"])
        stranger = make_keyblock(height=5, prev=b"\x99" * 32, miner="B")
        with pytest.raises(ValueError):
            update_window(window, stranger, expected_prev=b"\x11" * 32)

    def test_share_conservation(self):
        rng = random.Random(0)
        window = ShareWindow(size=10)
        mined = 0
        for height in range(25):
            miner = rng.choice("ABCD")
            window = update_window(window, make_keyblock(height=height, miner=miner))
            mined += 1
            roster = Roster.from_window(window)
            assert sum(roster.shares.values()) == min(10, mined)

    def test_statistical_proportionality(self):
        rng = random.Random(42)
        powers = {"A": 0.5, "B": 0.3, "C": 0.2}
        w = 144
        window = ShareWindow(size=w)
        sums = Counter()
        samples = 0
        for height in range(10 * w):
            pick = rng.random()
            miner = "A" if pick < 0.5 else "B" if pick < 0.8 else "C"
            window = update_window(window, make_keyblock(height=height, miner=miner))
            if height >= 5 * w:
                roster = Roster.from_window(window)
                for name in powers:
                    sums[name] += voting_power(roster, name) / w
                samples += 1
        for miner, power in powers.items():
            assert abs(sums[miner] / samples - power) <= 0.05


class TestRoster:
    def test_fault_tolerance_mapping(self):
        for total, f in [(2, 0), (5, 1), (8, 2), (11, 3), (14, 4), (144, 47)]:
            window = window_of(total, [f"M{i}" for i in range(total)])
            roster = Roster.from_window(window)
            assert roster.fault_tolerance == f
            assert 3 * f + 2 <= total

    def test_quorums(self):
        roster = Roster.from_window(window_of(11, [f"M{i}" for i in range(11)]))
        assert roster.fault_tolerance == 3
        assert roster.quorum() == 8
        assert roster.view_change_quorum() == 7

    def test_absent_miner_has_no_power(self):
        roster = Roster.from_window(window_of(3, ["A", "B", "A"]))
        assert voting_power(roster, "Z") == 0
        assert sum(roster.shares.values()) == 3


class TestSplitReward:
    def test_proportional(self):
        roster = Roster.from_window(window_of(4, ["A", "A", "A", "B"]))
        split = split_reward(100, roster)
        assert split.allocations == {"A": 75, "B": 25}
        assert split.discarded == 0

    def test_zero_reward(self):
        roster = Roster.from_window(window_of(2, ["A", "B"]))
        split = split_reward(0, roster)
        assert all(v == 0 for v in split.allocations.values())

    def test_largest_remainder_tie_to_lowest_id(self):
        roster = Roster.from_window(window_of(3, ["A", "B", "C"]))
        split = split_reward(100, roster)
        assert split.allocations == {"A": 34, "B": 33, "C": 33}

    def test_largest_remainder_oracle(self):
        # Independent largest-remainder computation on a lopsided roster.
        roster = Roster.from_window(window_of(7, ["A", "A", "A", "B", "B", "C", "D"]))
        split = split_reward(10, roster)
        quotas = {"A": 30 / 7, "B": 20 / 7, "C": 10 / 7, "D": 10 / 7}
        floors = {m: int(q) for m, q in quotas.items()}
        leftover = 10 - sum(floors.values())
        order = sorted(quotas, key=lambda m: (-(quotas[m] - floors[m]), m))
        for m in order[:leftover]:
            floors[m] += 1
        assert split.allocations == floors

    def test_offline_portion_discarded_not_redistributed(self):
        roster = Roster.from_window(window_of(4, ["A", "A", "B", "C"]))
        online_only = split_reward(100, roster, offline_shares={"B": 1})
        assert online_only.allocations["B"] == 0
        assert online_only.discarded == 25
        assert online_only.allocations["A"] == 50
        assert online_only.allocations["C"] == 25
        assert online_only.total == 100

    def test_sum_always_exact(self):
        rng = random.Random(7)
        for _ in range(200):
            miners = [rng.choice("ABCDE") for _ in range(rng.randrange(1, 12))]
            roster = Roster.from_window(window_of(len(miners), miners))
            reward = rng.randrange(0, 1000)
            offline = {rng.choice("ABCDE"): rng.randrange(0, 3)}
            split = split_reward(reward, roster, offline_shares=offline)
            assert split.total == reward
            assert all(v >= 0 for v in split.allocations.values())


class TestResolveFork:
    def test_single_candidate(self):
        block = make_keyblock(miner="A")
        assert resolve_fork([block]) == block

    def test_permutation_invariance(self):
        rng = random.Random(3)
        for k in (2, 3, 4, 5):
            blocks = [make_keyblock(miner=f"M{i}", nonce=rng.randrange(10**9)) for i in range(k)]
            winner = resolve_fork(blocks)
            for _ in range(10):
                shuffled = blocks[:]
                rng.shuffle(shuffled)
                assert resolve_fork(shuffled) == winner

    def test_two_candidate_independent_hash_oracle(self):
        a = make_keyblock(miner="A", nonce=11)
        b = make_keyblock(miner="B", nonce=22)
        ordered = sorted([a, b], key=lambda blk: hashlib.sha256(blk.header_bytes()).digest())
        digest = hashlib.sha256(
            hashlib.sha256(ordered[0].header_bytes()).digest()
            + hashlib.sha256(ordered[1].header_bytes()).digest()
        ).digest()
        expected = ordered[digest[-1] & 1]
        assert resolve_fork([a, b]) == expected

    def test_two_candidate_uniformity(self):
        rng = random.Random(12)
        wins = Counter()
        trials = 10_000
        for i in range(trials):
            a = make_keyblock(miner="A", nonce=rng.randrange(2**62), ts=i)
            b = make_keyblock(miner="B", nonce=rng.randrange(2**62), ts=i)
            ordered = sorted([a, b], key=lambda blk: blk.hash())
            winner = resolve_fork([a, b])
            wins[0 if winner == ordered[0] else 1] += 1
        for position in (0, 1):
            assert abs(wins[position] / trials - 0.5) <= 0.02

    def test_mismatched_candidates_rejected(self):
        a = make_keyblock(miner="A")
        b = make_keyblock(miner="B", height=1, prev=a.hash())
        with pytest.raises(ValueError):
            resolve_fork([a, b])
        with pytest.raises(ValueError):
            resolve_fork([])


class TestValidateMicroblock:
    def setup_method(self):
        self.rng = random.Random(5)
        self.window = window_of(5, ["A", "B", "C", "D", "E"])
        self.roster = Roster.from_window(self.window)
        self.era_hash = b"\xee" * 32
        self.slots = self.window.slots_newest_first()
        self.secrets = {
            miner: groups.keypair_from_secret(TOY, sum(miner.encode()))
            for miner, _ in self.slots
        }

    def sign(self, block, faults=frozenset()):
        keypairs = [self.secrets[miner] for miner, _ in self.slots]
        tree = cosi.build_tree(range(len(self.slots)), 2)
        sig = cosi.run_round(TOY, tree, keypairs, block.hash(), faults=faults, rng=self.rng)
        return block.with_signature(sig)

    def make_block(self, prev=GENESIS_HASH, height=0, era=None):
        return MicroBlock(
            height=height,
            prev_hash=prev,
            keyblock_hash=era if era is not None else self.era_hash,
            transactions=(b"tx1", b"tx2"),
            payload_bytes=6,
        )

    def test_well_formed_block_ok(self):
        block = self.sign(self.make_block())
        verdict = validate_microblock(TOY, block, GENESIS_HASH, -1, self.era_hash, self.window)
        assert verdict is None

    def test_stale_parent(self):
        block = self.sign(self.make_block(prev=b"\x01" * 32))
        verdict = validate_microblock(TOY, block, GENESIS_HASH, -1, self.era_hash, self.window)
        assert verdict == Violation.STALE_PARENT

    def test_wrong_era(self):
        block = self.sign(self.make_block(era=b"\x02" * 32))
        verdict = validate_microblock(TOY, block, GENESIS_HASH, -1, self.era_hash, self.window)
        assert verdict == Violation.WRONG_ERA

    def test_mask_beyond_fault_bound(self):
        # f=1 for a 5-share window, so two excepted shares is one too many.
        assert self.roster.fault_tolerance == 1
        block = self.sign(self.make_block(), faults={3, 4})
        verdict = validate_microblock(TOY, block, GENESIS_HASH, -1, self.era_hash, self.window)
        assert verdict == Violation.INSUFFICIENT_SIGNERS

    def test_mask_at_fault_bound_accepted(self):
        block = self.sign(self.make_block(), faults={4})
        verdict = validate_microblock(TOY, block, GENESIS_HASH, -1, self.era_hash, self.window)
        assert verdict is None

    def test_tampered_signature(self):
        block = self.sign(self.make_block())
        bad_sig = cosi.CollectiveSignature(
            commitment=block.signature.commitment,
            challenge=block.signature.challenge,
            response=(block.signature.response + 1) % TOY.order,
            excepted=block.signature.excepted,
            roster_size=block.signature.roster_size,
        )
        verdict = validate_microblock(
            TOY, block.with_signature(bad_sig), GENESIS_HASH, -1, self.era_hash, self.window
        )
        assert verdict == Violation.BAD_SIGNATURE

    def test_unsigned_block(self):
        verdict = validate_microblock(
            TOY, self.make_block(), GENESIS_HASH, -1, self.era_hash, self.window
        )
        assert verdict == Violation.MISSING_SIGNATURE


class TestSerialization:
    def test_header_hash_excludes_signature(self):
        block = make_keyblock(miner="A")
        signed = block.with_signature(
            cosi.CollectiveSignature(b"\x01", 1, 2, frozenset(), 3)
        )
        assert block.hash() == signed.hash()

    def test_block_kind_domains_differ(self):
        kb = make_keyblock(miner="A")
        mb = MicroBlock(0, GENESIS_HASH, GENESIS_HASH, (), 0)
        assert kb.hash() != mb.hash()

    def test_dump_load_roundtrip(self):
        window = window_of(3, ["A", "B"])
        keyblocks = [make_keyblock(height=i, miner=m) for i, m in enumerate("AB")]
        micro = MicroBlock(0, GENESIS_HASH, keyblocks[0].hash(), (b"tx",), 2)
        keypair = groups.keypair_from_secret(TOY, 3)
        sig = cosi.flat_round(TOY, [keypair] * 3, micro.hash())
        micro = micro.with_signature(sig)
        text = chain.dump_chain(keyblocks, [micro])
        loaded_keys, loaded_micros = chain.load_chain(text)
        assert loaded_keys == keyblocks
        assert loaded_micros == [micro]
        assert chain.dump_chain(loaded_keys, loaded_micros) == text
