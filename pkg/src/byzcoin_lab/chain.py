"""The two parallel chains and window-based membership.

Keyblocks are mined (simulated work), elect the next leader, and each
credits its miner one membership share.  Microblocks carry transaction
payloads, link both to their predecessor microblock and to the keyblock
naming their era, and are committed by collective signature.

The sliding window of the last w keyblock miners defines the consensus
roster.  Voting power is share-denominated: a miner holding s shares in
the window casts s-weighted votes and occupies s tree slots.

Serialization is canonical (see encoding.py); a block's hash covers the
header fields only, never the collective signature, because the
signature signs that hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from enum import Enum

from . import encoding
from .cosi import CollectiveSignature

GENESIS_HASH = bytes(32)

# Tag bytes separating the hash domains of the two block kinds.
_KEYBLOCK_TAG = b"\x4b"
_MICROBLOCK_TAG = b"\x4d"


@dataclass(frozen=True)
class KeyBlock:
    height: int
    prev_hash: bytes
    miner: str
    miner_pubkey: bytes
    pow_nonce: int
    extra_zero_bits: int
    pow_valid: bool
    timestamp_ms: int
    signature: CollectiveSignature | None = None

    def header_bytes(self) -> bytes:
        return (
            _KEYBLOCK_TAG
            + encoding.u64(self.height)
            + self.prev_hash
            + encoding.lp_str(self.miner)
            + encoding.lp_bytes(self.miner_pubkey)
            + encoding.u64(self.pow_nonce)
            + encoding.u8(self.extra_zero_bits)
            + encoding.u8(1 if self.pow_valid else 0)
            + encoding.u64(self.timestamp_ms)
        )

    def hash(self) -> bytes:
        cached = self.__dict__.get("_hash")
        if cached is None:
            cached = hashlib.sha256(self.header_bytes()).digest()
            object.__setattr__(self, "_hash", cached)
        return cached

    def with_signature(self, signature: CollectiveSignature) -> "KeyBlock":
        return replace(self, signature=signature)


@dataclass(frozen=True)
class MicroBlock:
    height: int
    prev_hash: bytes
    keyblock_hash: bytes
    transactions: tuple[bytes, ...]
    payload_bytes: int
    signature: CollectiveSignature | None = None

    def header_bytes(self) -> bytes:
        parts = [
            _MICROBLOCK_TAG,
            encoding.u64(self.height),
            self.prev_hash,
            self.keyblock_hash,
            encoding.u32(len(self.transactions)),
        ]
        parts.extend(encoding.lp_bytes(tx) for tx in self.transactions)
        parts.append(encoding.u64(self.payload_bytes))
        return b"".join(parts)

    def hash(self) -> bytes:
        cached = self.__dict__.get("_hash")
        if cached is None:
            cached = hashlib.sha256(self.header_bytes()).digest()
            object.__setattr__(self, "_hash", cached)
        return cached

    def with_signature(self, signature: CollectiveSignature) -> "MicroBlock":
        return replace(self, signature=signature)


@dataclass(frozen=True)
class ShareWindow:
    """The last w keyblock miners, oldest first."""

    size: int
    entries: tuple[tuple[str, bytes], ...] = ()

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("window size must be at least 1")
        if len(self.entries) > self.size:
            raise ValueError("window overfull")

    def miners(self) -> tuple[str, ...]:
        return tuple(miner for miner, _ in self.entries)

    def slots_newest_first(self) -> tuple[tuple[str, bytes], ...]:
        return tuple(reversed(self.entries))


def update_window(window: ShareWindow, keyblock: KeyBlock, *, expected_prev: bytes | None = None) -> ShareWindow:
    """Append the new miner's share; the oldest share expires if full."""
    if expected_prev is not None and keyblock.prev_hash != expected_prev:
        raise ValueError("keyblock does not extend the current chain")
    entries = window.entries + ((keyblock.miner, keyblock.miner_pubkey),)
    if len(entries) > window.size:
        entries = entries[len(entries) - window.size :]
    return ShareWindow(size=window.size, entries=entries)


@dataclass(frozen=True)
class Roster:
    """Share-weighted membership derived from a window."""

    shares: dict[str, int]
    pubkeys: dict[str, bytes]
    total_shares: int

    @classmethod
    def from_window(cls, window: ShareWindow) -> "Roster":
        shares: dict[str, int] = {}
        pubkeys: dict[str, bytes] = {}
        for miner, pubkey in window.entries:
            shares[miner] = shares.get(miner, 0) + 1
            pubkeys[miner] = pubkey
        return cls(shares=shares, pubkeys=pubkeys, total_shares=len(window.entries))

    @property
    def fault_tolerance(self) -> int:
        """f such that the window holds at least 3f+2 shares."""
        return max(0, (self.total_shares - 2) // 3)

    def quorum(self) -> int:
        """Share weight required to prepare or commit a microblock.

        2f+2 out of 3f+2: the smallest weight whose pairwise overlap
        always contains an honest share, and still reachable with f
        members silent.  Degenerate tiny windows cap at the window size.
        """
        return min(2 * self.fault_tolerance + 2, max(1, self.total_shares))

    def view_change_quorum(self) -> int:
        return min(2 * self.fault_tolerance + 1, max(1, self.total_shares))

    def members(self) -> tuple[str, ...]:
        return tuple(self.shares)


def voting_power(roster: Roster, miner: str) -> int:
    return roster.shares.get(miner, 0)


@dataclass(frozen=True)
class RewardSplit:
    allocations: dict[str, int]
    discarded: int

    @property
    def total(self) -> int:
        return sum(self.allocations.values()) + self.discarded


def split_reward(total_reward: int, roster: Roster, offline_shares: dict[str, int] | None = None) -> RewardSplit:
    """Proportional split by share count; largest remainder, ties by id.

    Shares whose holders sat out the committing signature forfeit their
    portion; forfeits go to a discard bucket, never to other miners, and
    the bucket keeps the split exact.
    """
    if total_reward < 0:
        raise ValueError("reward must be nonnegative")
    offline = offline_shares or {}
    total_shares = roster.total_shares
    if total_shares == 0 or total_reward == 0:
        return RewardSplit(allocations={m: 0 for m in roster.shares}, discarded=total_reward)

    online = {
        miner: count - min(offline.get(miner, 0), count)
        for miner, count in roster.shares.items()
    }
    discarded_weight = total_shares - sum(online.values())

    # Quotas over the full share count, so offline portions are lost, not
    # redistributed.  The discard bucket joins the largest-remainder pass
    # (sorting last on ties) to keep the sum exact.
    quotas = {miner: total_reward * count / total_shares for miner, count in online.items()}
    allocations = {miner: int(quota) for miner, quota in quotas.items()}
    discard_quota = total_reward * discarded_weight / total_shares
    discarded = int(discard_quota)

    leftover = total_reward - sum(allocations.values()) - discarded
    remainders = sorted(
        [(quotas[m] - allocations[m], 0, m) for m in allocations]
        + [(discard_quota - discarded, 1, "")],
        key=lambda item: (-item[0], item[1], item[2]),
    )
    for i in range(leftover):
        _, is_discard, miner = remainders[i % len(remainders)]
        if is_discard:
            discarded += 1
        else:
            allocations[miner] += 1
    return RewardSplit(allocations=allocations, discarded=discarded)


def resolve_fork(candidates: list[KeyBlock]) -> KeyBlock:
    """Deterministic winner among same-height keyblocks.

    Sort the header hashes, hash the sorted array, and let the digest's
    final bits index into the sorted order.  Every node computes the same
    winner from the same candidate set, and nothing a miner controls
    biases the outcome before the fork exists.
    """
    if not candidates:
        raise ValueError("no fork candidates")
    heights = {c.height for c in candidates}
    parents = {c.prev_hash for c in candidates}
    if len(heights) > 1 or len(parents) > 1:
        raise ValueError("fork candidates must share height and parent")
    ordered = sorted(candidates, key=lambda c: c.hash())
    if len(ordered) == 1:
        return ordered[0]
    digest = hashlib.sha256(b"".join(c.hash() for c in ordered)).digest()
    bits = max(1, (len(ordered) - 1).bit_length())
    index = (int.from_bytes(digest, "big") & ((1 << bits) - 1)) % len(ordered)
    return ordered[index]


class Violation(Enum):
    STALE_PARENT = "stale-parent"
    WRONG_ERA = "wrong-era"
    MISSING_SIGNATURE = "missing-signature"
    BAD_SIGNATURE = "bad-signature"
    INSUFFICIENT_SIGNERS = "insufficient-signers"


def validate_microblock(
    group,
    block: MicroBlock,
    tip_hash: bytes,
    tip_height: int,
    era_hash: bytes,
    window: ShareWindow,
) -> Violation | None:
    """Structural and signature checks against the era's roster.

    Returns None when the block extends the tip, names the current era,
    and carries a collective signature leaving at most f shares excepted.
    """
    if block.prev_hash != tip_hash or block.height != tip_height + 1:
        return Violation.STALE_PARENT
    if block.keyblock_hash != era_hash:
        return Violation.WRONG_ERA
    if block.signature is None:
        return Violation.MISSING_SIGNATURE
    slots = window.slots_newest_first()
    roster = Roster.from_window(window)
    if block.signature.num_exceptions > roster.fault_tolerance:
        return Violation.INSUFFICIENT_SIGNERS
    from .cosi import verify_collective  # local import to avoid cycle at module load

    try:
        ok = verify_collective(group, [pk for _, pk in slots], block.signature, block.hash())
    except ValueError:
        return Violation.BAD_SIGNATURE
    if not ok:
        return Violation.BAD_SIGNATURE
    return None


# -- fixture dump/load ----------------------------------------------------


def _signature_to_json(sig: CollectiveSignature | None):
    if sig is None:
        return None
    return {
        "commitment": sig.commitment.hex(),
        "challenge": sig.challenge,
        "response": sig.response,
        "excepted": sorted(sig.excepted),
        "roster_size": sig.roster_size,
    }


def _signature_from_json(data) -> CollectiveSignature | None:
    if data is None:
        return None
    return CollectiveSignature(
        commitment=bytes.fromhex(data["commitment"]),
        challenge=data["challenge"],
        response=data["response"],
        excepted=frozenset(data["excepted"]),
        roster_size=data["roster_size"],
    )


def dump_chain(keyblocks: list[KeyBlock], microblocks: list[MicroBlock]) -> str:
    """Line-delimited records, one block per line, keyblocks first."""
    lines = []
    for kb in keyblocks:
        lines.append(json.dumps({
            "kind": "key",
            "height": kb.height,
            "prev_hash": kb.prev_hash.hex(),
            "miner": kb.miner,
            "miner_pubkey": kb.miner_pubkey.hex(),
            "pow_nonce": kb.pow_nonce,
            "extra_zero_bits": kb.extra_zero_bits,
            "pow_valid": kb.pow_valid,
            "timestamp_ms": kb.timestamp_ms,
            "signature": _signature_to_json(kb.signature),
        }, sort_keys=True))
    for mb in microblocks:
        lines.append(json.dumps({
            "kind": "micro",
            "height": mb.height,
            "prev_hash": mb.prev_hash.hex(),
            "keyblock_hash": mb.keyblock_hash.hex(),
            "transactions": [tx.hex() for tx in mb.transactions],
            "payload_bytes": mb.payload_bytes,
            "signature": _signature_to_json(mb.signature),
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def load_chain(text: str) -> tuple[list[KeyBlock], list[MicroBlock]]:
    keyblocks: list[KeyBlock] = []
    microblocks: list[MicroBlock] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        if data["kind"] == "key":
            keyblocks.append(KeyBlock(
                height=data["height"],
                prev_hash=bytes.fromhex(data["prev_hash"]),
                miner=data["miner"],
                miner_pubkey=bytes.fromhex(data["miner_pubkey"]),
                pow_nonce=data["pow_nonce"],
                extra_zero_bits=data["extra_zero_bits"],
                pow_valid=data["pow_valid"],
                timestamp_ms=data["timestamp_ms"],
                signature=_signature_from_json(data["signature"]),
            ))
        elif data["kind"] == "micro":
            microblocks.append(MicroBlock(
                height=data["height"],
                prev_hash=bytes.fromhex(data["prev_hash"]),
                keyblock_hash=bytes.fromhex(data["keyblock_hash"]),
                transactions=tuple(bytes.fromhex(tx) for tx in data["transactions"]),
                payload_bytes=data["payload_bytes"],
                signature=_signature_from_json(data["signature"]),
            ))
        else:
            raise ValueError(f"unknown record kind {data['kind']!r}")
    return keyblocks, microblocks
