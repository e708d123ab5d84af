"""Collective signing rounds over a communication tree.

A round has four phases: an announcement travels down the tree, Schnorr
commitments aggregate bottom-up, the root derives one challenge from the
aggregate commitment and the message, and responses aggregate bottom-up
again.  The result is a single signature that verifies against the
product of the participants' public keys, plus an exception mask naming
the roster members that did not co-sign.

Nodes are addressed by their index in the roster.  Index 0 is the leader
and the tree is the implicit array heap: node i has children
b*i+1 .. b*i+b.  A node whose ancestor is faulty never hears the
announcement and is excepted for the round.

``run_round`` executes the whole round in one call, which is all the
deterministic simulator needs; the per-phase wire messages that a
networked deployment would exchange are defined at the bottom so their
byte layouts are pinned down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import encoding, groups


class CosiError(Exception):
    pass


class InsufficientParticipation(CosiError):
    """Too few co-signers for the quorum the caller asked for."""

    def __init__(self, participating: int, quorum: int, excepted: frozenset[int]):
        super().__init__(f"{participating} co-signers, quorum {quorum}")
        self.participating = participating
        self.quorum = quorum
        self.excepted = excepted


@dataclass(frozen=True)
class CommTree:
    """Complete b-ary tree laid out over the roster order."""

    roster: tuple
    branching: int

    def __post_init__(self):
        if not self.roster:
            raise ValueError("empty roster")
        if self.branching < 2:
            raise ValueError("branching factor must be at least 2")

    @property
    def size(self) -> int:
        return len(self.roster)

    def children(self, index: int) -> list[int]:
        first = self.branching * index + 1
        return [i for i in range(first, first + self.branching) if i < self.size]

    def parent(self, index: int) -> int | None:
        if index == 0:
            return None
        return (index - 1) // self.branching

    def depth(self) -> int:
        depth = 0
        index = self.size - 1
        while index > 0:
            index = (index - 1) // self.branching
            depth += 1
        return depth

    def node_depth(self, index: int) -> int:
        depth = 0
        while index > 0:
            index = (index - 1) // self.branching
            depth += 1
        return depth

    def subtree(self, index: int) -> frozenset[int]:
        members = []
        stack = [index]
        while stack:
            node = stack.pop()
            members.append(node)
            stack.extend(self.children(node))
        return frozenset(members)

    def is_leaf(self, index: int) -> bool:
        return self.branching * index + 1 >= self.size


def build_tree(roster, branching: int) -> CommTree:
    return CommTree(roster=tuple(roster), branching=branching)


def unreachable_under(tree: CommTree, faults: frozenset[int]) -> frozenset[int]:
    """Nodes cut off from the root when ``faults`` drop all traffic."""
    blocked = set()
    for fault in faults:
        blocked |= tree.subtree(fault)
    return frozenset(blocked)


@dataclass(frozen=True)
class CollectiveSignature:
    """Aggregate Schnorr signature plus the mask of non-signers."""

    commitment: bytes
    challenge: int
    response: int
    excepted: frozenset[int]
    roster_size: int

    @property
    def num_exceptions(self) -> int:
        return len(self.excepted)

    @property
    def num_signers(self) -> int:
        return self.roster_size - len(self.excepted)

    def mask_bits(self) -> bytes:
        return encoding.bitvector([i in self.excepted for i in range(self.roster_size)])

    def serialize(self, group) -> bytes:
        return (
            encoding.lp_bytes(self.commitment)
            + groups.encode_scalar(group, self.challenge)
            + groups.encode_scalar(group, self.response)
            + self.mask_bits()
        )


@dataclass
class CoSiRoundState:
    """Post-round audit record: per-subtree aggregates and exceptions."""

    phase: str
    message: bytes
    challenge: int
    excepted: frozenset[int]
    nonces: dict[int, int] = field(default_factory=dict)
    commitments: dict[int, bytes] = field(default_factory=dict)
    subtree_commitments: dict[int, bytes] = field(default_factory=dict)
    subtree_responses: dict[int, int] = field(default_factory=dict)


def run_round(
    group,
    tree: CommTree,
    keypairs,
    message: bytes,
    validator=None,
    faults=frozenset(),
    quorum: int | None = None,
    rng=None,
    challenge_override: int | None = None,
    return_state: bool = False,
):
    """Run one collective-signing round and return the signature.

    ``keypairs`` holds one KeyPair per roster slot.  ``validator`` is a
    per-node predicate ``(index, message) -> bool``; nodes that reject
    are excepted but still relay.  ``faults`` drop all traffic, cutting
    off their subtrees.  If fewer than ``quorum`` nodes co-sign the round
    raises InsufficientParticipation carrying the partial mask.
    """
    faults = frozenset(faults)
    if 0 in faults:
        raise ValueError("a faulty leader is a view-change concern, not a round input")
    if len(keypairs) != tree.size:
        raise ValueError("keypair list does not match roster size")
    rng = rng if rng is not None else __import__("random").Random(0)

    unreachable = unreachable_under(tree, faults)
    rejecting = frozenset(
        i for i in range(tree.size)
        if i not in unreachable and validator is not None and not validator(i, message)
    )
    excepted = unreachable | rejecting

    signers = [i for i in range(tree.size) if i not in excepted]
    if quorum is not None and len(signers) < quorum:
        raise InsufficientParticipation(len(signers), quorum, excepted)

    nonces = {i: groups.commit(group, rng) for i in signers}
    state = CoSiRoundState(phase="commitment", message=message, challenge=0, excepted=excepted)
    for i, (nonce, commitment) in nonces.items():
        state.nonces[i] = nonce
        state.commitments[i] = commitment

    def aggregate_subtree(index, per_node, fold, zero):
        acc = per_node.get(index, zero)
        for child in tree.children(index):
            if child in faults:
                continue
            acc = fold(acc, aggregate_subtree(child, per_node, fold, zero))
        return acc

    commitment_of = {i: c for i, (_, c) in nonces.items()}
    for index in range(tree.size):
        if index not in unreachable:
            state.subtree_commitments[index] = aggregate_subtree(
                index, commitment_of, group.mul, group.identity()
            )
    aggregate_commitment = state.subtree_commitments[0]

    state.phase = "challenge"
    challenge_scalar = groups.challenge(
        group, aggregate_commitment, message, override=challenge_override
    )
    state.challenge = challenge_scalar

    state.phase = "response"
    response_of = {
        i: groups.respond(keypairs[i].secret, nonces[i][0], challenge_scalar, group.order)
        for i in signers
    }
    for index in range(tree.size):
        if index not in unreachable:
            state.subtree_responses[index] = aggregate_subtree(
                index, response_of, lambda a, b: (a + b) % group.order, 0
            )
    state.phase = "done"

    signature = CollectiveSignature(
        commitment=aggregate_commitment,
        challenge=challenge_scalar,
        response=state.subtree_responses[0],
        excepted=excepted,
        roster_size=tree.size,
    )
    return (signature, state) if return_state else signature


def flat_round(
    group,
    keypairs,
    message: bytes,
    validator=None,
    faults=frozenset(),
    quorum: int | None = None,
    rng=None,
    challenge_override: int | None = None,
) -> CollectiveSignature:
    """All-to-all reference round: no tree, no relaying, same algebra.

    Kept deliberately independent of ``run_round`` so it can serve as an
    oracle for the tree implementation.
    """
    faults = frozenset(faults)
    if 0 in faults:
        raise ValueError("a faulty leader is a view-change concern, not a round input")
    rng = rng if rng is not None else __import__("random").Random(0)
    n = len(keypairs)

    excepted = set(faults)
    for i in range(n):
        if i not in excepted and validator is not None and not validator(i, message):
            excepted.add(i)
    excepted = frozenset(excepted)
    signers = [i for i in range(n) if i not in excepted]
    if quorum is not None and len(signers) < quorum:
        raise InsufficientParticipation(len(signers), quorum, excepted)

    nonces = {i: groups.commit(group, rng) for i in signers}
    aggregate_commitment = groups.aggregate(group, (v for _, v in nonces.values()))
    challenge_scalar = groups.challenge(
        group, aggregate_commitment, message, override=challenge_override
    )
    response = 0
    for i in signers:
        response = (
            response + groups.respond(keypairs[i].secret, nonces[i][0], challenge_scalar, group.order)
        ) % group.order
    return CollectiveSignature(
        commitment=aggregate_commitment,
        challenge=challenge_scalar,
        response=response,
        excepted=excepted,
        roster_size=n,
    )


def verify_collective(
    group,
    public_keys,
    signature: CollectiveSignature,
    message: bytes,
    full_aggregate: bytes | None = None,
) -> bool:
    """Check the signature against the roster minus the excepted keys.

    ``full_aggregate`` may carry the precomputed product of the whole
    roster; excepted keys are then divided out, which is much cheaper
    than re-multiplying a large roster for every verification.
    """
    if signature.roster_size != len(public_keys):
        raise ValueError("exception mask length does not match roster")
    if signature.num_signers == 0:
        return False
    if groups.challenge(group, signature.commitment, message) != signature.challenge:
        return False
    if full_aggregate is not None:
        aggregate_key = full_aggregate
        for i in signature.excepted:
            aggregate_key = group.mul(aggregate_key, group.inv(public_keys[i]))
    else:
        aggregate_key = groups.aggregate(
            group,
            (key for i, key in enumerate(public_keys) if i not in signature.excepted),
        )
    return groups.verify(
        group, aggregate_key, signature.commitment, signature.challenge, signature.response
    )


@dataclass(frozen=True)
class MessageStats:
    per_phase: dict
    total: int
    max_hops: int


def count_messages(tree: CommTree, faults=frozenset()) -> MessageStats:
    """Message counts for one round; faulty nodes receive but never send."""
    faults = frozenset(faults)
    unreachable = unreachable_under(tree, faults)
    functioning = [i for i in range(tree.size) if i not in unreachable]

    down = sum(len(tree.children(i)) for i in functioning)
    up = sum(1 for i in functioning if i != 0)
    per_phase = {
        "announcement": down,
        "commitment": up,
        "challenge": down,
        "response": up,
    }
    return MessageStats(
        per_phase=per_phase,
        total=2 * (down + up),
        max_hops=2 * tree.depth(),
    )


def tree_depth_formula(size: int, branching: int) -> int:
    """Closed form for the depth of a complete b-ary tree of n nodes."""
    if size <= 1:
        return 0
    return math.ceil(math.log(size * (branching - 1) + 1, branching)) - 1


# -- wire formats --------------------------------------------------------
#
# One frame per phase.  Every frame starts with the same routing header
# so relays never need to parse the payload:
#   u64 round id | 32 bytes era id | u8 phase tag | length-prefixed payload

PHASE_ANNOUNCEMENT = 0
PHASE_COMMITMENT = 1
PHASE_CHALLENGE = 2
PHASE_RESPONSE = 3


@dataclass(frozen=True)
class PhaseFrame:
    round_id: int
    era_id: bytes
    phase: int
    payload: bytes

    def serialize(self) -> bytes:
        return (
            encoding.u64(self.round_id)
            + self.era_id
            + encoding.u8(self.phase)
            + encoding.lp_bytes(self.payload)
        )

    @classmethod
    def deserialize(cls, data: bytes) -> "PhaseFrame":
        reader = encoding.Reader(data)
        frame = cls(
            round_id=reader.u64(),
            era_id=reader.raw(32),
            phase=reader.u8(),
            payload=reader.lp_bytes(),
        )
        if not reader.done():
            raise ValueError("trailing bytes in phase frame")
        return frame
