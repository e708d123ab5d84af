"""Per-node consensus engine: two-round collective signing per block.

Each node is a pure event-driven state machine; the simulator delivers
messages and timer expiries, the node replies with sends and new timers.
A microblock commits through two collective-signing rounds led by the
era's leader: the first round's signature is the proof that a
supermajority accepted the block, the second round's signature makes the
decision durable.  Era transitions are mandatory leadership handoffs to
the miner of the newest keyblock; if a leader stalls, share-weighted
view-change votes hand leadership to the miner of the previous keyblock.

Safety rests on three rules enforced here:

* share-weighted quorum 2f+2 out of the window's 3f+2 shares, for both
  rounds (any two quorums overlap in at least one honest share);
* an honest node signs at most one candidate per (era, height, view);
* a node that co-signs a commit round locks on that block hash for that
  height and refuses conflicting candidates in any later view.

The first microblock of an era must also extend the previous era's last
committed microblock; a leader that cannot gather the era-first quorum
falls back to checkpoint synchronization over the previous roster.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from . import groups
from .chain import (
    GENESIS_HASH,
    KeyBlock,
    MicroBlock,
    Roster,
    ShareWindow,
    resolve_fork,
    split_reward,
    update_window,
)
from .cosi import CollectiveSignature, verify_collective
from .simnet import Adversary, Simulator, Timer, TraceRecord

PREPARE = "prepare"
COMMIT = "commit"
KEYBLOCK_ACCEPT = "keyblock"

_SIGN_DOMAIN = {PREPARE: b"\x10", COMMIT: b"\x11", KEYBLOCK_ACCEPT: b"\x12"}


def signing_message(kind: str, block_hash: bytes) -> bytes:
    return _SIGN_DOMAIN[kind] + block_hash


@dataclass(frozen=True)
class ConsensusConfig:
    group_name: str = "toy"
    branching: int = 8
    topology: str = "tree"
    block_size_bytes: int = 32_768
    tx_size_bytes: int = 250
    block_reward: int = 100
    propose_gap_ms: float = 0.0
    max_micro_per_era: int | None = None
    view_change_timeout_ms: float = 60_000.0
    ack_timeout_ms: float = 30_000.0
    level_budget_block_ms: float = 3_000.0
    level_budget_small_ms: float = 500.0
    ser_block_ms: float = 250.0
    ser_small_ms: float = 1.0
    rtt_ms: float = 200.0
    verify_ms_per_byte: float = 4e-7
    era_first_quorum_override: int | None = None  # test hook for the weakened rule


# -- wire messages ---------------------------------------------------------


@dataclass(frozen=True)
class RoundKey:
    era: bytes
    height: int
    view: int
    attempt: int
    kind: str


@dataclass(frozen=True)
class CommitRecord:
    """A committed microblock with the signature that sealed it."""

    block: MicroBlock
    signature: CollectiveSignature
    era: bytes
    view: int


@dataclass(frozen=True)
class RoundAnnounce:
    key: RoundKey
    slot_from: int
    slot_to: int
    mode: str
    block: MicroBlock | None
    block_hash: bytes
    proof: CollectiveSignature | None
    evidence: CommitRecord | None

    def size_bytes(self) -> int:
        size = 120
        if self.block is not None:
            size += 96 + self.block.payload_bytes
        if self.proof is not None:
            size += 96 + self.proof.roster_size // 8
        if self.evidence is not None:
            size += 192 + self.evidence.block.payload_bytes
        return size


@dataclass(frozen=True)
class AggregateUp:
    key: RoundKey
    slot_from: int
    slot_to: int
    commitment: bytes
    mask: frozenset[int]

    def size_bytes(self) -> int:
        return 96 + len(self.mask) * 2


@dataclass(frozen=True)
class ChallengeDown:
    key: RoundKey
    slot_from: int
    slot_to: int
    challenge: int
    mask: frozenset[int]

    def size_bytes(self) -> int:
        return 96 + len(self.mask) * 2


@dataclass(frozen=True)
class ResponseUp:
    key: RoundKey
    slot_from: int
    slot_to: int
    response: int
    failed: frozenset[int]

    def size_bytes(self) -> int:
        return 96


@dataclass(frozen=True)
class HashProbe:
    era: bytes
    height: int
    view: int
    block_hash: bytes

    def size_bytes(self) -> int:
        return 104


@dataclass(frozen=True)
class ProbeAck:
    era: bytes
    height: int
    view: int
    block_hash: bytes
    miner: str

    def size_bytes(self) -> int:
        return 112


@dataclass(frozen=True)
class RejectNotice:
    era: bytes
    height: int
    view: int
    block_hash: bytes
    reason: str
    miner: str

    def size_bytes(self) -> int:
        return 128


@dataclass(frozen=True)
class ViewChangeVote:
    era: bytes
    new_view: int
    miner: str

    def size_bytes(self) -> int:
        return 72


@dataclass(frozen=True)
class CommittedNotice:
    record: CommitRecord
    sender: str

    def size_bytes(self) -> int:
        return 160


@dataclass(frozen=True)
class BlockFetchReq:
    block_hash: bytes
    miner: str

    def size_bytes(self) -> int:
        return 64


@dataclass(frozen=True)
class BlockFetchResp:
    record: CommitRecord

    def size_bytes(self) -> int:
        return 192 + self.record.block.payload_bytes


@dataclass(frozen=True)
class CheckpointReq:
    era: bytes
    miner: str

    def size_bytes(self) -> int:
        return 64


@dataclass(frozen=True)
class CheckpointResp:
    era: bytes
    record: CommitRecord | None
    miner: str

    def size_bytes(self) -> int:
        size = 96
        if self.record is not None:
            size += 192 + self.record.block.payload_bytes
        return size


# -- per-round bookkeeping ---------------------------------------------------


@dataclass
class SlotAggregation:
    """Bottom-up fold state for one slot this node hosts."""

    mode: str
    pending_children: set[int]
    commitment: bytes
    mask: set[int]
    parent_slot: int
    timer: object = None


@dataclass
class SlotResponseAgg:
    pending_children: set[int]
    response: int
    failed: set[int]
    parent_slot: int
    timer: object = None


@dataclass
class LeaderRound:
    key: RoundKey
    block: MicroBlock | None
    mode: str
    proof: CollectiveSignature | None
    restrict: frozenset[int] | None = None
    contacted: frozenset[int] = frozenset()
    commitment: bytes | None = None
    mask: frozenset[int] = frozenset()
    challenge: int = 0
    started_ms: float = 0.0
    first_attempt_ms: float = 0.0
    acks: set[str] = field(default_factory=set)
    ack_timer: object = None
    rejected_by: set[str] = field(default_factory=set)
    done: bool = False


@dataclass
class EraState:
    keyblock: KeyBlock
    window: ShareWindow
    prev_window: ShareWindow
    roster: Roster
    view: int = 0
    mode: str = "tree"
    signed_in_era: bool = False
    accepted: bool = False
    micro_in_era: int = 0

    @property
    def hash(self) -> bytes:
        return self.keyblock.hash()


class Node:
    """One miner process hosting every tree slot its shares occupy."""

    def __init__(
        self,
        miner_id: str,
        keypair: groups.KeyPair,
        group,
        sim: Simulator,
        config: ConsensusConfig,
        adversary: Adversary,
        pubkeys: dict[str, bytes],
        hooks=None,
    ):
        self.id = miner_id
        self.keypair = keypair
        self.group = group
        self.sim = sim
        self.config = config
        self.adversary = adversary
        self.pubkeys = pubkeys
        self.hooks = hooks

        self.rng = random.Random(sim.rng.randrange(2**63))
        self.byzantine_accept = adversary.is_equivocating_leader(miner_id)
        self.silent_in_rounds = (
            adversary.withholds_votes(miner_id) or adversary.cuts_subtree(miner_id)
        )

        # Chain state.
        self.keyblocks: dict[bytes, KeyBlock] = {}
        self.window_after: dict[bytes, ShareWindow] = {}
        self.kb_candidates: dict[int, list[KeyBlock]] = {}
        self.micro_records: dict[bytes, CommitRecord] = {}
        self.micro_chain: list[CommitRecord] = []
        self.pending_appends: dict[bytes, CommitRecord] = {}

        self.era: EraState | None = None
        self.prepared: dict[tuple[bytes, int, int], bytes] = {}
        self.commit_locks: dict[int, bytes] = {}
        self.proofs: dict[bytes, CollectiveSignature] = {}

        # Round state, keyed by RoundKey.
        self.nonces: dict[tuple[RoundKey, int], tuple[int, bytes]] = {}
        self.slot_aggs: dict[RoundKey, dict[int, SlotAggregation]] = {}
        self.slot_resps: dict[RoundKey, dict[int, SlotResponseAgg]] = {}
        self.round_decisions: dict[tuple[RoundKey, bytes], bool] = {}
        self.leader_rounds: dict[RoundKey, LeaderRound] = {}
        self.seen_probes: dict[tuple[bytes, int, int], HashProbe] = {}
        self.view_votes: dict[tuple[bytes, int], set[str]] = {}
        self.vc_timer: object = None
        self.checkpoint_replies: dict[bytes, dict[str, CommitRecord | None]] = {}
        self.checkpoint_active: RoundKey | None = None
        self.withheld_keyblocks: dict[int, KeyBlock] = {}
        self.mine_epoch = 0
        self._agg_cache: dict[bytes, bytes] = {}

    # -- chain helpers ------------------------------------------------------

    @property
    def tip_record(self) -> CommitRecord | None:
        return self.micro_chain[-1] if self.micro_chain else None

    @property
    def tip_hash(self) -> bytes:
        return self.micro_chain[-1].block.hash() if self.micro_chain else GENESIS_HASH

    @property
    def tip_height(self) -> int:
        return self.micro_chain[-1].block.height if self.micro_chain else -1

    def slots(self, era: EraState | None = None, view: int | None = None) -> tuple[tuple[str, bytes], ...]:
        """Slot arrangement for a view: the acting leader's share at root."""
        era = era or self.era
        view = era.view if view is None else view
        return arrange_slots(era.window, view)

    def slot_keys(self, era: EraState | None = None, view: int | None = None) -> list[bytes]:
        return [pk for _, pk in self.slots(era, view)]

    def leader_for_view(self, era: EraState, view: int) -> str:
        return era.window.slots_newest_first()[view % era.window.size][0]

    def current_leader(self) -> str:
        return self.leader_for_view(self.era, self.era.view)

    def is_leader(self) -> bool:
        return self.era is not None and self.current_leader() == self.id

    def tree_children(self, slot: int, mode: str, n: int) -> list[int]:
        if mode == "flat":
            return list(range(1, n)) if slot == 0 else []
        b = self.config.branching
        first = b * slot + 1
        return [i for i in range(first, first + b) if i < n]

    def _subtree(self, slot: int, mode: str, n: int) -> set[int]:
        members = set()
        stack = [slot]
        while stack:
            current = stack.pop()
            members.add(current)
            stack.extend(self.tree_children(current, mode, n))
        return members

    def send_to_slot(self, era: EraState, view: int, slot: int, msg) -> None:
        dst = self.slots(era, view)[slot][0]
        self.sim.send(self.id, dst, msg, msg.size_bytes())

    def broadcast(self, msg) -> None:
        for miner in sorted(self.pubkeys):
            if miner != self.id:
                self.sim.send(self.id, miner, msg, msg.size_bytes())

    def required_quorum(self, era_first: bool) -> int:
        if era_first and self.config.era_first_quorum_override is not None:
            return self.config.era_first_quorum_override
        return self.era.roster.quorum()

    def _roster_aggregate(self, era_hash: bytes) -> bytes | None:
        """Product of the whole window's slot keys; view order is irrelevant."""
        cached = self._agg_cache.get(era_hash)
        if cached is None and era_hash in self.window_after:
            window = self.window_after[era_hash]
            cached = groups.aggregate(self.group, (pk for _, pk in window.entries))
            self._agg_cache[era_hash] = cached
        return cached

    def _era_first_round(self, key: RoundKey) -> bool:
        return self.era.micro_in_era == 0 and key.kind in (PREPARE, COMMIT)

    def _emit(self, event: str, height: int = -1, size: int = 0) -> None:
        self.sim.trace.add(TraceRecord(self.sim.now_ms, self.id, event, size, height))

    # -- genesis / era handling -------------------------------------------

    def install_genesis(self, keyblocks: list[KeyBlock], window_after: dict[bytes, ShareWindow] | None = None) -> None:
        if window_after is not None:
            self.window_after = dict(window_after)
            for kb in keyblocks:
                self.keyblocks[kb.hash()] = kb
        else:
            running = ShareWindow(size=len(keyblocks))
            for kb in keyblocks:
                self.keyblocks[kb.hash()] = kb
                running = update_window(running, kb)
                self.window_after[kb.hash()] = running
        window = self.window_after[keyblocks[-1].hash()]
        prev_window = ShareWindow(size=window.size, entries=window.entries[:-1])
        self.era = EraState(
            keyblock=keyblocks[-1],
            window=window,
            prev_window=prev_window,
            roster=Roster.from_window(window),
            mode=self.config.topology,
            accepted=True,
        )
        self._reset_view_change_timer()

    def start(self) -> None:
        if self.is_leader() and not self.adversary.is_silent_leader(self.id):
            self._maybe_propose()

    def on_keyblock(self, kb: KeyBlock) -> None:
        if not kb.pow_valid or kb.hash() in self.keyblocks:
            return
        if kb.prev_hash not in self.window_after:
            return  # ancestor unknown; gossip will deliver it eventually
        self.keyblocks[kb.hash()] = kb
        self.window_after[kb.hash()] = update_window(self.window_after[kb.prev_hash], kb)
        self.kb_candidates.setdefault(kb.height, []).append(kb)

        # A withholding miner releases its hidden block when a competitor
        # for the same height appears.
        held = self.withheld_keyblocks.pop(kb.height, None)
        if held is not None and held.hash() != kb.hash() and self.hooks:
            self.hooks.release_keyblock(self.id, held)

        current = self.era.keyblock
        if kb.height > current.height:
            # Direct extension, or a strictly longer rival branch whose
            # ancestry we know: the longest chain heals fork splits.
            self._adopt_era(kb)
        elif kb.height == current.height and kb.prev_hash == current.prev_hash:
            if not self.era.signed_in_era:
                rivals = [
                    c for c in self.kb_candidates[kb.height]
                    if c.prev_hash == current.prev_hash
                ]
                winner = resolve_fork(rivals)
                if winner.hash() != current.hash():
                    self._adopt_era(winner)

    def _adopt_era(self, kb: KeyBlock) -> None:
        prev_window = self.window_after[kb.prev_hash]
        window = self.window_after[kb.hash()]
        self.era = EraState(
            keyblock=kb,
            window=window,
            prev_window=prev_window,
            roster=Roster.from_window(window),
            mode=self.config.topology,
        )
        self.checkpoint_active = None
        self._emit("adopt-era", height=kb.height)
        self._reset_view_change_timer()
        if self.hooks:
            self.hooks.era_adopted(self.id, kb)
        if self.is_leader() and not self.adversary.is_silent_leader(self.id):
            era = self.era
            key = RoundKey(era.hash, era.keyblock.height, era.view, 0, KEYBLOCK_ACCEPT)
            self._start_round(key, block=None, block_hash=era.hash, proof=None, evidence=None)

    # -- proposing ---------------------------------------------------------

    def _make_block(self, salt: int = 0) -> MicroBlock:
        count = max(1, self.config.block_size_bytes // self.config.tx_size_bytes)
        marker = salt.to_bytes(4, "little") + len(self.micro_chain).to_bytes(4, "little")
        return MicroBlock(
            height=self.tip_height + 1,
            prev_hash=self.tip_hash,
            keyblock_hash=self.era.hash,
            transactions=(marker + count.to_bytes(4, "little"),),
            payload_bytes=self.config.block_size_bytes,
        )

    def _maybe_propose(self) -> None:
        era = self.era
        if era is None or not self.is_leader() or self.adversary.is_silent_leader(self.id):
            return
        if not era.accepted or self.checkpoint_active is not None:
            return
        if (
            self.config.max_micro_per_era is not None
            and era.micro_in_era >= self.config.max_micro_per_era
        ):
            return
        height = self.tip_height + 1
        locked = self.commit_locks.get(height)
        if locked is not None and locked in self.micro_records:
            block = self.micro_records[locked].block
        else:
            block = self._make_block()
        if self.adversary.is_equivocating_leader(self.id):
            self._propose_equivocating(block)
            return
        key = RoundKey(era.hash, block.height, era.view, 0, PREPARE)
        evidence = self.tip_record if era.micro_in_era == 0 else None
        if self.hooks:
            self.hooks.proposed(self.id, key, block)
        self._start_round(key, block=block, block_hash=block.hash(), proof=None, evidence=evidence)

    def _propose_equivocating(self, block_a: MicroBlock) -> None:
        """Propose two conflicting candidates, each pushed at half the roster."""
        era = self.era
        block_b = replace(block_a, transactions=(b"\xff" + block_a.transactions[0],))
        n = len(self.slots())
        halves = (
            frozenset(range(0, n, 2)) | {0},
            frozenset(range(1, n, 2)) | {0},
        )
        for attempt, (block, half) in zip((0, 10), zip((block_a, block_b), halves)):
            key = RoundKey(era.hash, block.height, era.view, attempt, PREPARE)
            if self.hooks:
                self.hooks.proposed(self.id, key, block)
            self._start_round(
                key, block=block, block_hash=block.hash(), proof=None, evidence=None,
                restrict=half,
            )

    def _start_round(
        self,
        key: RoundKey,
        block: MicroBlock | None,
        block_hash: bytes,
        proof: CollectiveSignature | None,
        evidence: CommitRecord | None,
        restrict: frozenset[int] | None = None,
        first_attempt_ms: float | None = None,
    ) -> None:
        era = self.era
        mode = era.mode
        n = len(self.slots(era, key.view))
        round_state = LeaderRound(
            key=key,
            block=block,
            mode=mode,
            proof=proof,
            restrict=restrict,
            started_ms=self.sim.now_ms,
            first_attempt_ms=self.sim.now_ms if first_attempt_ms is None else first_attempt_ms,
        )
        self.leader_rounds[key] = round_state

        announce = RoundAnnounce(
            key=key, slot_from=0, slot_to=0, mode=mode,
            block=block, block_hash=block_hash, proof=proof, evidence=evidence,
        )
        self._witness_decide(announce)  # records the leader's own prepare/lock state

        agg = SlotAggregation(
            mode=mode,
            pending_children=set(),
            commitment=self.group.identity(),
            mask=set(),
            parent_slot=-1,
        )
        nonce, commitment = groups.commit(self.group, self.rng)
        self.nonces[(key, 0)] = (nonce, commitment)
        agg.commitment = commitment
        children = [
            c for c in self.tree_children(0, mode, n)
            if restrict is None or self._subtree(c, mode, n) & restrict
        ]
        round_state.contacted = frozenset(children)
        agg.pending_children = set(children)
        self.slot_aggs.setdefault(key, {})[0] = agg
        for child in children:
            self.send_to_slot(era, key.view, child, replace(announce, slot_from=0, slot_to=child))
        if not children:
            self._slot_agg_complete(key, 0)
        else:
            patience = self._patience_ms(0, mode, n, with_block=block is not None)
            agg.timer = self.sim.set_timer(self.id, "children", patience, data=(key, 0))

        # Tree health probe, only for block-bearing rounds over the tree.
        if block is not None and mode == "tree":
            self.broadcast(HashProbe(key.era, key.height, key.view, block_hash))
            round_state.ack_timer = self.sim.set_timer(
                self.id, "ack", self.config.ack_timeout_ms, data=key
            )

    def _patience_ms(self, slot: int, mode: str, n: int, with_block: bool) -> float:
        """How long a slot waits for its subtree before excepting laggards.

        Covers this slot's own serial fan-out on its uplink plus a budget
        per relay level underneath, so a healthy subtree always reports in
        time and only genuinely silent branches get masked.
        """
        config = self.config
        ser = config.ser_block_ms if with_block else config.ser_small_ms
        fanout = len(self.tree_children(slot, mode, n)) * ser
        if mode == "flat":
            levels_below = 0
        else:
            total_depth = 0
            index = n - 1
            while index > 0:
                index = (index - 1) // config.branching
                total_depth += 1
            levels_below = max(0, total_depth - self._slot_depth(slot) - 1)
        budget = config.level_budget_block_ms if with_block else config.level_budget_small_ms
        verify = config.verify_ms_per_byte * config.block_size_bytes
        return fanout + levels_below * budget + verify + 2.0 * config.rtt_ms + 200.0

    def _slot_depth(self, slot: int) -> int:
        depth = 0
        while slot > 0:
            slot = (slot - 1) // self.config.branching
            depth += 1
        return depth

    # -- witness side ------------------------------------------------------

    def _witness_decide(self, msg: RoundAnnounce) -> bool:
        """Accept or reject a candidate; cached per (round, hash)."""
        cache_key = (msg.key, msg.block_hash)
        if cache_key in self.round_decisions:
            return self.round_decisions[cache_key]
        decision = self._decide_uncached(msg)
        self.round_decisions[cache_key] = decision
        if decision and self.era is not None and msg.key.era == self.era.hash:
            if msg.key.kind == PREPARE:
                self.prepared[(msg.key.era, msg.key.height, msg.key.view)] = msg.block_hash
                self.era.signed_in_era = True
            elif msg.key.kind == KEYBLOCK_ACCEPT:
                self.era.signed_in_era = True
        return decision

    def _decide_uncached(self, msg: RoundAnnounce) -> bool:
        if self.byzantine_accept:
            return True
        era = self.era
        if era is None or msg.key.era != era.hash or msg.key.view != era.view:
            return False
        if msg.key.kind == KEYBLOCK_ACCEPT:
            return msg.block_hash == era.hash

        if msg.key.kind == COMMIT:
            if msg.proof is None:
                return False
            try:
                keys = self.slot_keys(era, msg.key.view)
                ok = verify_collective(
                    self.group, keys, msg.proof, signing_message(PREPARE, msg.block_hash),
                    full_aggregate=self._roster_aggregate(era.hash),
                )
            except ValueError:
                ok = False
            if not ok:
                return self._reject(msg, "bad-proof")
            if msg.proof.num_signers < self.required_quorum(self._era_first_round(msg.key)):
                return self._reject(msg, "weak-proof")
            lock = self.commit_locks.get(msg.key.height)
            if lock is not None and lock != msg.block_hash:
                return self._reject(msg, "conflicting-lock")
            # Without the block a commit signature could seal an unknown
            # payload; only nodes that prepared this hash may co-sign.
            if msg.block_hash not in self.micro_records:
                pending = self.prepared.get((msg.key.era, msg.key.height, msg.key.view))
                if pending != msg.block_hash:
                    return self._reject(msg, "unknown-block")
            self.commit_locks[msg.key.height] = msg.block_hash
            return True

        # Prepare round: structural checks against this node's chain view.
        block = msg.block
        if block is None or block.hash() != msg.block_hash:
            return self._reject(msg, "missing-block")
        prior = self.prepared.get((msg.key.era, msg.key.height, msg.key.view))
        if prior is not None and prior != msg.block_hash:
            self._vote_view_change()  # an equivocating leader is provably faulty
            return self._reject(msg, "equivocation")
        lock = self.commit_locks.get(msg.key.height)
        if lock is not None and lock != msg.block_hash:
            return self._reject(msg, "conflicting-lock")
        if msg.evidence is not None:
            self._consider_commit_record(msg.evidence)
        if block.prev_hash != self.tip_hash or block.height != self.tip_height + 1:
            return self._reject(msg, "stale-parent")
        if block.keyblock_hash != era.hash:
            return self._reject(msg, "wrong-era")
        return True

    def _reject(self, msg: RoundAnnounce, reason: str) -> bool:
        leader = self.leader_for_view(self.era, msg.key.view) if self.era else None
        if leader and leader != self.id:
            notice = RejectNotice(msg.key.era, msg.key.height, msg.key.view,
                                  msg.block_hash, reason, self.id)
            self.sim.send(self.id, leader, notice, notice.size_bytes())
        self._emit(f"reject:{reason}", height=msg.key.height)
        return False

    def _handle_announce(self, msg: RoundAnnounce) -> None:
        if self.silent_in_rounds:
            return
        era = self.era
        if era is None or msg.key.era != era.hash:
            return
        aggs = self.slot_aggs.setdefault(msg.key, {})
        if msg.slot_to in aggs:
            return  # duplicate delivery
        n = len(self.slots(era, msg.key.view))
        decision = self._witness_decide(msg)
        slot = msg.slot_to

        # Relay down even when rejecting: honest nodes do not censor.
        children = self.tree_children(slot, msg.mode, n)
        agg = SlotAggregation(
            mode=msg.mode,
            pending_children=set(children),
            commitment=self.group.identity(),
            mask=set(),
            parent_slot=msg.slot_from,
        )
        if decision:
            nonce, commitment = groups.commit(self.group, self.rng)
            self.nonces[(msg.key, slot)] = (nonce, commitment)
            agg.commitment = commitment
        else:
            agg.mask.add(slot)
        aggs[slot] = agg
        for child in children:
            self.send_to_slot(era, msg.key.view, child, replace(msg, slot_from=slot, slot_to=child))

        # Answer any probe that arrived before the candidate did.
        probe = self.seen_probes.get((msg.key.era, msg.key.height, msg.key.view))
        if probe is not None and probe.block_hash == msg.block_hash:
            self._ack_probe(probe)

        if not children:
            verify_delay = 0.0
            if msg.key.kind == PREPARE and decision and msg.block is not None:
                verify_delay = self.config.verify_ms_per_byte * msg.block.payload_bytes
            if verify_delay > 0:
                self.sim.set_timer(self.id, "leafdone", verify_delay, data=(msg.key, slot))
            else:
                self._slot_agg_complete(msg.key, slot)
        else:
            patience = self._patience_ms(slot, msg.mode, n, with_block=msg.block is not None)
            agg.timer = self.sim.set_timer(self.id, "children", patience, data=(msg.key, slot))

    def _handle_aggregate_up(self, msg: AggregateUp) -> None:
        aggs = self.slot_aggs.get(msg.key)
        if aggs is None or msg.slot_to not in aggs:
            return
        agg = aggs[msg.slot_to]
        if msg.slot_from not in agg.pending_children:
            return
        agg.pending_children.discard(msg.slot_from)
        agg.commitment = self.group.mul(agg.commitment, msg.commitment)
        agg.mask |= msg.mask
        if not agg.pending_children:
            if agg.timer is not None:
                self.sim.cancel(agg.timer)
                agg.timer = None
            self._slot_agg_complete(msg.key, msg.slot_to)

    def _slot_agg_complete(self, key: RoundKey, slot: int) -> None:
        era = self.era
        if era is None or key.era != era.hash:
            return
        agg = self.slot_aggs[key][slot]
        if slot == 0:
            self._leader_commitments_done(key)
            return
        up = AggregateUp(
            key=key, slot_from=slot, slot_to=agg.parent_slot,
            commitment=agg.commitment, mask=frozenset(agg.mask),
        )
        self.send_to_slot(era, key.view, agg.parent_slot, up)

    def _children_timeout(self, key: RoundKey, slot: int) -> None:
        aggs = self.slot_aggs.get(key)
        if aggs is None or slot not in aggs:
            return
        agg = aggs[slot]
        if not agg.pending_children:
            return
        era = self.era
        if era is None or key.era != era.hash:
            return
        n = len(self.slots(era, key.view))
        for child in list(agg.pending_children):
            agg.mask |= self._subtree(child, agg.mode, n)
        agg.pending_children.clear()
        self._slot_agg_complete(key, slot)

    # -- leader completion of the commitment phase ---------------------------

    def _leader_commitments_done(self, key: RoundKey) -> None:
        era = self.era
        round_state = self.leader_rounds.get(key)
        if round_state is None or round_state.done:
            return
        agg = self.slot_aggs[key][0]
        n = len(self.slots(era, key.view))
        # A subtree the root never announced to contributed nothing; it
        # must sit in the mask or the signature would claim its keys.
        uncontacted: set[int] = set()
        for child in self.tree_children(0, round_state.mode, n):
            if child not in round_state.contacted:
                uncontacted |= self._subtree(child, round_state.mode, n)
        mask = frozenset(agg.mask | uncontacted)
        participating = n - len(mask)
        quorum = self.required_quorum(self._era_first_round(key))
        if participating < quorum:
            self._round_failed(key, mask)
            return
        round_state.commitment = agg.commitment
        round_state.mask = mask
        message = signing_message(key.kind, self._round_hash(round_state))
        round_state.challenge = groups.challenge(self.group, agg.commitment, message)

        resp = SlotResponseAgg(pending_children=set(), response=0, failed=set(), parent_slot=-1)
        if 0 not in mask:
            nonce, _ = self.nonces[(key, 0)]
            resp.response = groups.respond(
                self.keypair.secret, nonce, round_state.challenge, self.group.order
            )
        children = [
            c for c in self.tree_children(0, round_state.mode, n)
            if (round_state.restrict is None or self._subtree(c, round_state.mode, n) & round_state.restrict)
            and self._subtree(c, round_state.mode, n) - mask
        ]
        resp.pending_children = set(children)
        self.slot_resps.setdefault(key, {})[0] = resp
        for child in children:
            msg = ChallengeDown(
                key=key, slot_from=0, slot_to=child,
                challenge=round_state.challenge, mask=mask,
            )
            self.send_to_slot(era, key.view, child, msg)
        if not children:
            self._slot_resp_complete(key, 0)
        else:
            patience = self._patience_ms(0, round_state.mode, n, with_block=False)
            resp.timer = self.sim.set_timer(self.id, "respchildren", patience, data=(key, 0))

    def _round_hash(self, round_state: LeaderRound) -> bytes:
        if round_state.key.kind == KEYBLOCK_ACCEPT:
            return self.era.hash
        return round_state.block.hash()

    def _handle_challenge(self, msg: ChallengeDown) -> None:
        if self.silent_in_rounds:
            return
        era = self.era
        if era is None or msg.key.era != era.hash:
            return
        aggs = self.slot_aggs.get(msg.key)
        if aggs is None or msg.slot_to not in aggs:
            return
        resps = self.slot_resps.setdefault(msg.key, {})
        if msg.slot_to in resps:
            return
        slot = msg.slot_to
        agg = aggs[slot]
        n = len(self.slots(era, msg.key.view))
        children = [
            c for c in self.tree_children(slot, agg.mode, n)
            if self._subtree(c, agg.mode, n) - msg.mask
        ]
        resp = SlotResponseAgg(
            pending_children=set(children), response=0, failed=set(), parent_slot=agg.parent_slot
        )
        if slot not in msg.mask and (msg.key, slot) in self.nonces:
            nonce, _ = self.nonces[(msg.key, slot)]
            resp.response = groups.respond(
                self.keypair.secret, nonce, msg.challenge, self.group.order
            )
        resps[slot] = resp
        for child in children:
            self.send_to_slot(era, msg.key.view, child, replace(msg, slot_from=slot, slot_to=child))
        if not children:
            self._slot_resp_complete(msg.key, slot)
        else:
            patience = self._patience_ms(slot, agg.mode, n, with_block=False)
            resp.timer = self.sim.set_timer(self.id, "respchildren", patience, data=(msg.key, slot))

    def _handle_response_up(self, msg: ResponseUp) -> None:
        resps = self.slot_resps.get(msg.key)
        if resps is None or msg.slot_to not in resps:
            return
        resp = resps[msg.slot_to]
        if msg.slot_from not in resp.pending_children:
            return
        resp.pending_children.discard(msg.slot_from)
        resp.response = (resp.response + msg.response) % self.group.order
        resp.failed |= msg.failed
        if not resp.pending_children:
            if resp.timer is not None:
                self.sim.cancel(resp.timer)
                resp.timer = None
            self._slot_resp_complete(msg.key, msg.slot_to)

    def _resp_timeout(self, key: RoundKey, slot: int) -> None:
        resps = self.slot_resps.get(key)
        if resps is None or slot not in resps:
            return
        resp = resps[slot]
        if not resp.pending_children:
            return
        resp.failed |= set(resp.pending_children)
        resp.pending_children.clear()
        self._slot_resp_complete(key, slot)

    def _slot_resp_complete(self, key: RoundKey, slot: int) -> None:
        era = self.era
        if era is None or key.era != era.hash:
            return
        resp = self.slot_resps[key][slot]
        if slot == 0:
            self._leader_responses_done(key)
            return
        up = ResponseUp(
            key=key, slot_from=slot, slot_to=resp.parent_slot,
            response=resp.response, failed=frozenset(resp.failed),
        )
        self.send_to_slot(era, key.view, resp.parent_slot, up)

    def _leader_responses_done(self, key: RoundKey) -> None:
        round_state = self.leader_rounds.get(key)
        if round_state is None or round_state.done:
            return
        resp = self.slot_resps[key][0]
        if resp.failed:
            self._round_failed(key, round_state.mask | frozenset(resp.failed))
            return
        signature = CollectiveSignature(
            commitment=round_state.commitment,
            challenge=round_state.challenge,
            response=resp.response,
            excepted=round_state.mask,
            roster_size=len(self.slots(self.era, key.view)),
        )
        message = signing_message(key.kind, self._round_hash(round_state))
        if not verify_collective(self.group, self.slot_keys(self.era, key.view), signature, message,
                                 full_aggregate=self._roster_aggregate(self.era.hash)):
            self._round_failed(key, round_state.mask)
            return
        round_state.done = True
        if round_state.ack_timer is not None:
            self.sim.cancel(round_state.ack_timer)
            round_state.ack_timer = None
        self._round_succeeded(key, round_state, signature)

    # -- round outcomes ------------------------------------------------------

    def _round_succeeded(self, key: RoundKey, round_state: LeaderRound, sig: CollectiveSignature) -> None:
        era = self.era
        if key.kind == KEYBLOCK_ACCEPT:
            era.accepted = True
            era.keyblock = era.keyblock.with_signature(sig)
            offline: dict[str, int] = {}
            for slot in sig.excepted:
                miner = self.slots(era, key.view)[slot][0]
                offline[miner] = offline.get(miner, 0) + 1
            rewards = split_reward(self.config.block_reward, era.roster, offline_shares=offline)
            if self.hooks:
                self.hooks.keyblock_accepted(self.id, era.keyblock, sig, rewards)
            self._maybe_propose()
            return

        if key.kind == PREPARE:
            self.proofs[round_state.block.hash()] = sig
            if self.hooks:
                self.hooks.prepared_proof(self.id, key, round_state.block, sig)
            commit_key = replace(key, kind=COMMIT)
            commit_round = LeaderRound(
                key=commit_key, block=round_state.block, mode=round_state.mode,
                proof=sig, restrict=round_state.restrict,
                started_ms=self.sim.now_ms,
                first_attempt_ms=round_state.first_attempt_ms,
            )
            self.leader_rounds[commit_key] = commit_round
            self._start_commit_phase(commit_key, commit_round)
            return

        # Commit round complete: the block is durable.
        record = CommitRecord(block=round_state.block, signature=sig, era=key.era, view=key.view)
        self._append_record(record)
        era.micro_in_era += 1
        if self.hooks:
            self.hooks.committed(self.id, key, record, round_state.first_attempt_ms)
        self.broadcast(CommittedNotice(record=record, sender=self.id))
        # Always go through the event loop so run conditions apply between blocks.
        self.sim.set_timer(self.id, "propose", max(self.config.propose_gap_ms, 0.0))

    def _start_commit_phase(self, key: RoundKey, round_state: LeaderRound) -> None:
        era = self.era
        n = len(self.slots(era, key.view))
        announce = RoundAnnounce(
            key=key, slot_from=0, slot_to=0, mode=round_state.mode,
            block=None, block_hash=round_state.block.hash(),
            proof=round_state.proof, evidence=None,
        )
        self._witness_decide(announce)
        agg = SlotAggregation(
            mode=round_state.mode, pending_children=set(),
            commitment=self.group.identity(), mask=set(), parent_slot=-1,
        )
        nonce, commitment = groups.commit(self.group, self.rng)
        self.nonces[(key, 0)] = (nonce, commitment)
        agg.commitment = commitment
        children = [
            c for c in self.tree_children(0, round_state.mode, n)
            if round_state.restrict is None
            or self._subtree(c, round_state.mode, n) & round_state.restrict
        ]
        round_state.contacted = frozenset(children)
        agg.pending_children = set(children)
        self.slot_aggs.setdefault(key, {})[0] = agg
        for child in children:
            self.send_to_slot(era, key.view, child, replace(announce, slot_from=0, slot_to=child))
        if not children:
            self._slot_agg_complete(key, 0)
        else:
            patience = self._patience_ms(0, round_state.mode, n, with_block=False)
            agg.timer = self.sim.set_timer(self.id, "children", patience, data=(key, 0))

    def _round_failed(self, key: RoundKey, mask: frozenset[int]) -> None:
        era = self.era
        round_state = self.leader_rounds.get(key)
        if round_state is None or round_state.done:
            return
        round_state.done = True
        if round_state.ack_timer is not None:
            self.sim.cancel(round_state.ack_timer)
            round_state.ack_timer = None
        self._emit(f"round-failed:{key.kind}", height=key.height)
        if self.hooks:
            self.hooks.round_failed(self.id, key, mask)

        if self.adversary.is_equivocating_leader(self.id):
            return
        total = len(self.slots(era, key.view))
        if era.mode == "tree" and (
            self._ack_weight(round_state) * 3 < 2 * total or round_state.rejected_by
        ):
            # The tree failed to carry the round; stay flat for this era.
            era.mode = "flat"
            if self.hooks:
                self.hooks.tree_fallback(self.id, era.hash)
            self._retry_round(key, round_state)
            return
        if (
            key.kind == PREPARE
            and era.micro_in_era == 0
            and self.checkpoint_active is None
            and key.attempt < 3
        ):
            self._start_checkpoint_sync(key)
            return
        # Liveness is gone for this view; abdicate so witnesses converge.
        self._vote_view_change()

    def _retry_round(self, key: RoundKey, round_state: LeaderRound) -> None:
        if key.attempt >= 3:
            return
        retry_key = replace(key, attempt=key.attempt + 1,
                            kind=key.kind if key.kind == KEYBLOCK_ACCEPT else PREPARE)
        block = round_state.block
        if key.kind == KEYBLOCK_ACCEPT:
            self._start_round(retry_key, block=None, block_hash=self.era.hash,
                              proof=None, evidence=None,
                              first_attempt_ms=round_state.first_attempt_ms)
        else:
            evidence = self.tip_record if self.era.micro_in_era == 0 else None
            self._start_round(retry_key, block=block, block_hash=block.hash(),
                              proof=None, evidence=evidence,
                              first_attempt_ms=round_state.first_attempt_ms)

    def _ack_weight(self, round_state: LeaderRound) -> int:
        roster = self.era.roster
        weight = sum(roster.shares.get(miner, 0) for miner in round_state.acks)
        return weight + roster.shares.get(self.id, 0)

    # -- probes, acks, view changes -----------------------------------------

    def _handle_probe(self, msg: HashProbe) -> None:
        if self.silent_in_rounds:
            return
        self.seen_probes[(msg.era, msg.height, msg.view)] = msg
        known = (
            msg.block_hash in self.micro_records
            or self.prepared.get((msg.era, msg.height, msg.view)) == msg.block_hash
            or self.byzantine_accept
        )
        if known:
            self._ack_probe(msg)

    def _ack_probe(self, msg: HashProbe) -> None:
        if self.era is None or msg.era != self.era.hash:
            return
        leader = self.leader_for_view(self.era, msg.view)
        if leader != self.id:
            ack = ProbeAck(msg.era, msg.height, msg.view, msg.block_hash, self.id)
            self.sim.send(self.id, leader, ack, ack.size_bytes())

    def _handle_ack(self, msg: ProbeAck) -> None:
        for key, round_state in self.leader_rounds.items():
            if (
                key.era == msg.era and key.height == msg.height
                and key.view == msg.view and not round_state.done
            ):
                round_state.acks.add(msg.miner)
                total = len(self.slots(self.era, key.view))
                if round_state.ack_timer is not None and self._ack_weight(round_state) * 3 >= 2 * total:
                    self.sim.cancel(round_state.ack_timer)
                    round_state.ack_timer = None

    def _ack_timeout(self, key: RoundKey) -> None:
        era = self.era
        round_state = self.leader_rounds.get(key)
        if round_state is None or round_state.done or era is None or key.era != era.hash:
            return
        total = len(self.slots(era, key.view))
        if self._ack_weight(round_state) * 3 < 2 * total:
            era.mode = "flat"
            if self.hooks:
                self.hooks.tree_fallback(self.id, era.hash)
            round_state.done = True
            self._retry_round(key, round_state)

    def _handle_reject(self, msg: RejectNotice) -> None:
        for key, round_state in self.leader_rounds.items():
            if key.era == msg.era and key.height == msg.height and key.view == msg.view:
                round_state.rejected_by.add(msg.miner)

    def _vote_view_change(self) -> None:
        era = self.era
        if era is None or self.silent_in_rounds:
            return
        vote = ViewChangeVote(era.hash, era.view + 1, self.id)
        self.broadcast(vote)
        self._record_view_vote(vote)

    def _record_view_vote(self, vote: ViewChangeVote) -> None:
        era = self.era
        if era is None or vote.era != era.hash or vote.new_view <= era.view:
            return
        voters = self.view_votes.setdefault((vote.era, vote.new_view), set())
        voters.add(vote.miner)
        weight = sum(era.roster.shares.get(m, 0) for m in voters)
        if weight >= era.roster.view_change_quorum():
            self._install_view(vote.new_view)

    def _install_view(self, new_view: int) -> None:
        era = self.era
        era.view = new_view
        self._emit("view-change", height=era.keyblock.height)
        if self.hooks:
            self.hooks.view_changed(self.id, era.hash, new_view, self.current_leader())
        self._reset_view_change_timer()
        if self.is_leader() and not self.adversary.is_silent_leader(self.id):
            era.accepted = True  # a view-change leader proceeds without re-signing the keyblock
            self._maybe_propose()

    def _era_capped(self) -> bool:
        cap = self.config.max_micro_per_era
        return cap is not None and self.era is not None and self.era.micro_in_era >= cap

    def _reset_view_change_timer(self) -> None:
        if self.vc_timer is not None:
            self.sim.cancel(self.vc_timer)
            self.vc_timer = None
        if self._era_capped():
            return  # no further progress is expected this era
        self.vc_timer = self.sim.set_timer(
            self.id, "viewchange", self.config.view_change_timeout_ms,
            data=(self.era.hash, self.era.view),
        )

    def _view_change_timeout(self, era_hash: bytes, view: int) -> None:
        era = self.era
        if era is None or era.hash != era_hash or era.view != view or self._era_capped():
            return
        if self.is_leader() and not self.adversary.is_silent_leader(self.id):
            self._reset_view_change_timer()
            return
        self._vote_view_change()
        self._reset_view_change_timer()

    # -- commit distribution and catch-up -------------------------------------

    def _append_record(self, record: CommitRecord) -> None:
        block = record.block
        self.micro_records[block.hash()] = record
        if any(r.block.hash() == block.hash() for r in self.micro_chain):
            return
        if block.prev_hash == self.tip_hash and block.height == self.tip_height + 1:
            self.micro_chain.append(record)
            self.commit_locks.pop(block.height, None)
            self._emit("append", height=block.height, size=block.payload_bytes)
            follower = self.pending_appends.pop(block.hash(), None)
            if follower is not None:
                self._consider_commit_record(follower)

    def _commit_quorum_floor(self) -> int:
        quorum = self.era.roster.quorum() if self.era else 2
        override = self.config.era_first_quorum_override
        return min(quorum, override) if override is not None else quorum

    def _verify_commit_record(self, record: CommitRecord) -> bool:
        if record.signature is None or record.era not in self.window_after:
            return False
        window = self.window_after[record.era]
        keys = [pk for _, pk in arrange_slots(window, record.view)]
        roster = Roster.from_window(window)
        floor = min(roster.quorum(), self._commit_quorum_floor())
        if record.signature.num_signers < floor:
            return False
        try:
            return verify_collective(
                self.group, keys, record.signature,
                signing_message(COMMIT, record.block.hash()),
                full_aggregate=self._roster_aggregate(record.era),
            )
        except ValueError:
            return False

    def _consider_commit_record(self, record: CommitRecord) -> None:
        """Adopt a committed block when its signature proves commitment."""
        block = record.block
        if block.height == self.tip_height + 1 and block.prev_hash == self.tip_hash:
            if self._verify_commit_record(record):
                self._append_record(record)

    def _handle_committed(self, msg: CommittedNotice) -> None:
        record = msg.record
        if self.era is not None and record.era == self.era.hash \
                and self._verify_commit_record(record):
            self._reset_view_change_timer()
            if record.block.height > self.tip_height:
                self.era.micro_in_era += 1
        if record.block.height <= self.tip_height:
            return
        if record.block.height == self.tip_height + 1 and record.block.prev_hash == self.tip_hash:
            self._consider_commit_record(record)
        else:
            self.pending_appends[record.block.prev_hash] = record
            req = BlockFetchReq(record.block.prev_hash, self.id)
            self.sim.send(self.id, msg.sender, req, req.size_bytes())

    def _handle_fetch_req(self, msg: BlockFetchReq) -> None:
        record = self.micro_records.get(msg.block_hash)
        if record is not None:
            resp = BlockFetchResp(record=record)
            self.sim.send(self.id, msg.miner, resp, resp.size_bytes())

    def _handle_fetch_resp(self, msg: BlockFetchResp) -> None:
        self._consider_commit_record(msg.record)

    # -- checkpoint synchronization -------------------------------------------

    def _start_checkpoint_sync(self, failed_key: RoundKey) -> None:
        era = self.era
        self.checkpoint_active = failed_key
        self.checkpoint_replies[era.hash] = {}
        population = set(era.roster.members())
        population |= set(m for m, _ in era.prev_window.entries)
        self._emit("checkpoint-sync", height=failed_key.height)
        for miner in sorted(population):
            if miner != self.id:
                req = CheckpointReq(era.hash, self.id)
                self.sim.send(self.id, miner, req, req.size_bytes())

    def _handle_checkpoint_req(self, msg: CheckpointReq) -> None:
        if self.silent_in_rounds:
            return
        resp = CheckpointResp(era=msg.era, record=self.tip_record, miner=self.id)
        self.sim.send(self.id, msg.miner, resp, resp.size_bytes())

    def _handle_checkpoint_resp(self, msg: CheckpointResp) -> None:
        era = self.era
        if era is None or msg.era != era.hash or self.checkpoint_active is None:
            return
        replies = self.checkpoint_replies.setdefault(era.hash, {})
        replies[msg.miner] = msg.record
        weight = sum(
            era.roster.shares.get(m, 1 if m not in era.roster.shares else 0) for m in replies
        )
        if weight < era.roster.view_change_quorum():
            return
        best: CommitRecord | None = None
        for record in replies.values():
            if record is None or record.block.height <= self.tip_height:
                continue
            if (best is None or record.block.height > best.block.height) \
                    and self._verify_commit_record(record):
                best = record
        self.checkpoint_active = None
        if best is not None:
            # Adopt the proven latest block; walk forward one at a time.
            if best.block.prev_hash == self.tip_hash:
                self._consider_commit_record(best)
            else:
                self.pending_appends[best.block.prev_hash] = best
                req = BlockFetchReq(best.block.prev_hash, self.id)
                self.sim.send(self.id, msg.miner, req, req.size_bytes())
        self._maybe_propose()

    # -- event entrypoint -------------------------------------------------------

    _DISPATCH = None

    def handle(self, payload) -> None:
        if isinstance(payload, Timer):
            self._handle_timer(payload)
            return
        if Node._DISPATCH is None:
            Node._DISPATCH = {
                RoundAnnounce: Node._handle_announce,
                AggregateUp: Node._handle_aggregate_up,
                ChallengeDown: Node._handle_challenge,
                ResponseUp: Node._handle_response_up,
                HashProbe: Node._handle_probe,
                ProbeAck: Node._handle_ack,
                RejectNotice: Node._handle_reject,
                ViewChangeVote: Node._record_view_vote,
                CommittedNotice: Node._handle_committed,
                BlockFetchReq: Node._handle_fetch_req,
                BlockFetchResp: Node._handle_fetch_resp,
                CheckpointReq: Node._handle_checkpoint_req,
                CheckpointResp: Node._handle_checkpoint_resp,
            }
        handler = Node._DISPATCH.get(type(payload))
        if handler is not None:
            handler(self, payload)

    def _handle_timer(self, timer: Timer) -> None:
        if timer.tag == "children":
            key, slot = timer.data
            self._children_timeout(key, slot)
        elif timer.tag == "respchildren":
            key, slot = timer.data
            self._resp_timeout(key, slot)
        elif timer.tag == "leafdone":
            key, slot = timer.data
            self._slot_agg_complete(key, slot)
        elif timer.tag == "ack":
            self._ack_timeout(timer.data)
        elif timer.tag == "viewchange":
            era_hash, view = timer.data
            self._view_change_timeout(era_hash, view)
        elif timer.tag == "propose":
            self._maybe_propose()
        elif self.hooks is not None:
            self.hooks.node_timer(self, timer)


def arrange_slots(window: ShareWindow, view: int) -> tuple[tuple[str, bytes], ...]:
    """Newest share first, with the acting view's share swapped to the root."""
    base = list(window.slots_newest_first())
    pivot = view % len(base)
    base[0], base[pivot] = base[pivot], base[0]
    return tuple(base)
