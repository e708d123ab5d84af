"""Deterministic discrete-event network simulator.

Events sit in a single heap ordered by (time, sequence number); a fixed
seed and configuration therefore produce a bit-identical trace.  The
link model charges each message against its sender's uplink, so a host
never ships more bytes per simulated second than its bandwidth, and
fan-out at a busy node serializes the way it would on a real access
link.

Also here: stochastic block mining, advertisement-based block
propagation (inventory notice, data request, header before body), the
Byzantine behavior profiles, and the withholding-miner revenue
simulation.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from dataclasses import dataclass, field

import networkx

DEFAULT_RTT_MS = 200.0
DEFAULT_BANDWIDTH_MBPS = 35.0
DEFAULT_BLOCK_INTERVAL_S = 600.0
DEFAULT_PEER_DEGREE = 8

ADVERSARY_BEHAVIORS = (
    "silent-leader",
    "equivocating-leader",
    "vote-withholder",
    "selfish-miner",
    "subtree-cutter",
    "message-delayer",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LinkModel:
    """Latency plus store-and-forward serialization on the sender uplink."""

    rtt_ms: float = DEFAULT_RTT_MS
    bandwidth_mbps: float = DEFAULT_BANDWIDTH_MBPS

    def one_way_ms(self) -> float:
        return self.rtt_ms / 2.0

    def serialization_ms(self, size_bytes: int) -> float:
        return size_bytes * 8.0 / (self.bandwidth_mbps * 1000.0)


@dataclass(frozen=True)
class MinerModel:
    """Hash-power fractions and the expected keyblock interval."""

    powers: dict[str, float]
    interval_s: float = DEFAULT_BLOCK_INTERVAL_S

    def __post_init__(self):
        total = sum(self.powers.values())
        if self.powers and not math.isclose(total, 1.0, rel_tol=1e-9):
            raise ConfigError(f"hash power fractions sum to {total}, expected 1")
        if any(p < 0 for p in self.powers.values()):
            raise ConfigError("hash power fractions must be nonnegative")

    def next_delay_s(self, miner: str, rng: random.Random) -> float | None:
        power = self.powers.get(miner, 0.0)
        if power <= 0.0:
            return None
        return rng.expovariate(power / self.interval_s)


def mine(model: MinerModel, rng: random.Random) -> tuple[str, float]:
    """Sample every miner's next find and return the earliest (miner, delay)."""
    best = None
    for miner in sorted(model.powers):
        delay = model.next_delay_s(miner, rng)
        if delay is None:
            continue
        if best is None or delay < best[1]:
            best = (miner, delay)
    if best is None:
        raise ConfigError("no miner has positive hash power")
    return best


@dataclass(frozen=True)
class AdversaryProfile:
    behavior: str
    miners: frozenset[str]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.behavior not in ADVERSARY_BEHAVIORS:
            raise ConfigError(
                f"unknown adversary behavior {self.behavior!r}; "
                f"known: {', '.join(ADVERSARY_BEHAVIORS)}"
            )


class Adversary:
    """Answers the simulator's behavior queries for controlled miners."""

    def __init__(self, profiles: list[AdversaryProfile]):
        self.profiles = list(profiles)
        self._by_miner: dict[str, AdversaryProfile] = {}
        for profile in self.profiles:
            for miner in profile.miners:
                if miner in self._by_miner:
                    raise ConfigError(f"miner {miner!r} appears in two adversary profiles")
                self._by_miner[miner] = profile

    def profile_of(self, miner: str) -> AdversaryProfile | None:
        return self._by_miner.get(miner)

    def controlled(self) -> frozenset[str]:
        return frozenset(self._by_miner)

    def is_silent_leader(self, miner: str) -> bool:
        profile = self.profile_of(miner)
        return profile is not None and profile.behavior == "silent-leader"

    def is_equivocating_leader(self, miner: str) -> bool:
        profile = self.profile_of(miner)
        return profile is not None and profile.behavior == "equivocating-leader"

    def withholds_votes(self, miner: str) -> bool:
        profile = self.profile_of(miner)
        return profile is not None and profile.behavior == "vote-withholder"

    def cuts_subtree(self, miner: str) -> bool:
        profile = self.profile_of(miner)
        return profile is not None and profile.behavior == "subtree-cutter"

    def extra_delay_ms(self, miner: str, rng: random.Random) -> float:
        profile = self.profile_of(miner)
        if profile is None or profile.behavior != "message-delayer":
            return 0.0
        bound = float(profile.params.get("max_delay_ms", 500.0))
        return rng.uniform(0.0, bound)

    def withholds_keyblock(self, miner: str, extra_zero_bits: int) -> bool:
        profile = self.profile_of(miner)
        if profile is None or profile.behavior != "selfish-miner":
            return False
        return extra_zero_bits >= int(profile.params.get("extra_bits", 2))


@dataclass
class TraceRecord:
    time_ms: float
    node: str
    event: str
    size_bytes: int = 0
    height: int = -1

    def as_row(self) -> tuple:
        return (round(self.time_ms, 6), self.node, self.event, self.size_bytes, self.height)


class Trace:
    """Append-only event log; hashable for determinism checks."""

    COLUMNS = ("time_ms", "node", "event", "bytes", "height")

    def __init__(self) -> None:
        self.records: list[TraceRecord] = []
        self.truncated = False

    def add(self, record: TraceRecord) -> None:
        self.records.append(record)

    def digest(self) -> str:
        hasher = hashlib.sha256()
        for record in self.records:
            hasher.update(repr(record.as_row()).encode())
        return hasher.hexdigest()

    def to_csv(self) -> str:
        lines = [",".join(self.COLUMNS)]
        for record in self.records:
            row = record.as_row()
            lines.append(f"{row[0]},{row[1]},{row[2]},{row[3]},{row[4]}")
        return "\n".join(lines) + "\n"


@dataclass(order=True)
class SimEvent:
    time_ms: float
    seq: int
    dest: str = field(compare=False)
    payload: object = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


@dataclass
class Timer:
    tag: str
    data: object = None


class Simulator:
    """Single-threaded event loop with per-host uplink accounting."""

    def __init__(self, links: LinkModel | None = None, seed: int = 0):
        self.links = links or LinkModel()
        self.rng = random.Random(seed)
        self.now_ms = 0.0
        self.trace = Trace()
        self._queue: list[SimEvent] = []
        self._seq = 0
        self._handlers: dict[str, object] = {}
        self._uplink_free_ms: dict[str, float] = {}
        self.bytes_sent: dict[str, int] = {}
        self.delay_hook = None  # optional (src, dst, payload) -> extra ms

    def register(self, node_id: str, handler) -> None:
        self._handlers[node_id] = handler

    def schedule_in(self, delay_ms: float, dest: str, payload) -> SimEvent:
        event = SimEvent(self.now_ms + max(0.0, delay_ms), self._seq, dest, payload)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def set_timer(self, node_id: str, tag: str, delay_ms: float, data=None) -> SimEvent:
        return self.schedule_in(delay_ms, node_id, Timer(tag=tag, data=data))

    def cancel(self, event: SimEvent) -> None:
        event.cancelled = True

    def send(self, src: str, dst: str, payload, size_bytes: int) -> None:
        """Queue a message on src's uplink and deliver after flight time."""
        if src == dst:
            self.schedule_in(0.0, dst, payload)
            return
        start = max(self.now_ms, self._uplink_free_ms.get(src, 0.0))
        ser = self.links.serialization_ms(size_bytes)
        self._uplink_free_ms[src] = start + ser
        self.bytes_sent[src] = self.bytes_sent.get(src, 0) + size_bytes
        delay = (start - self.now_ms) + ser + self.links.one_way_ms()
        if self.delay_hook is not None:
            delay += max(0.0, self.delay_hook(src, dst, payload))
        self.trace.add(TraceRecord(self.now_ms, src, f"send:{type(payload).__name__}", size_bytes))
        self.schedule_in(delay, dst, payload)

    def run_until(self, time_limit_ms: float | None = None, condition=None, max_events: int | None = None) -> Trace:
        processed = 0
        while self._queue:
            if condition is not None and condition():
                break
            event = self._queue[0]
            if time_limit_ms is not None and event.time_ms > time_limit_ms:
                self.trace.truncated = True
                self.now_ms = time_limit_ms
                break
            heapq.heappop(self._queue)
            if event.cancelled:
                continue
            self.now_ms = event.time_ms
            handler = self._handlers.get(event.dest)
            if handler is not None:
                handler(event.payload)
            processed += 1
            if max_events is not None and processed >= max_events:
                self.trace.truncated = True
                break
        return self.trace


# -- block propagation -----------------------------------------------------


def build_peer_graph(nodes: list[str], degree: int, seed: int) -> dict[str, list[str]]:
    """Random regular gossip graph; complete graph when too few nodes."""
    n = len(nodes)
    if n <= 1:
        return {node: [] for node in nodes}
    k = min(degree, n - 1)
    if k * n % 2 == 1:
        k -= 1
    if k < 1 or n <= degree + 1:
        return {node: [peer for peer in nodes if peer != node] for node in nodes}
    graph = networkx.random_regular_graph(k, n, seed=seed)
    while not networkx.is_connected(graph):
        seed += 1
        graph = networkx.random_regular_graph(k, n, seed=seed)
    index = {i: node for i, node in enumerate(nodes)}
    return {
        index[i]: sorted(index[j] for j in graph.neighbors(i))
        for i in range(n)
    }


@dataclass(frozen=True)
class InvNotice:
    block_hash: bytes
    sender: str

    def size_bytes(self) -> int:
        return 36


@dataclass(frozen=True)
class DataRequest:
    block_hash: bytes
    sender: str

    def size_bytes(self) -> int:
        return 36


@dataclass(frozen=True)
class BlockHeaderMsg:
    block_hash: bytes
    header_ok: bool
    sender: str

    def size_bytes(self) -> int:
        return 88


@dataclass(frozen=True)
class BlockBodyMsg:
    block_hash: bytes
    block: object
    size: int
    sender: str

    def size_bytes(self) -> int:
        return self.size


class GossipNode:
    """inv/getdata state for one node.

    A missing block is requested from exactly one peer (the first to
    advertise it); the header travels ahead of the body so a bad header
    kills the block before the body is re-advertised anywhere.
    """

    def __init__(self, node_id: str, sim: Simulator, peers: list[str], on_block, header_check=None):
        self.node_id = node_id
        self.sim = sim
        self.peers = peers
        self.on_block = on_block
        self.header_check = header_check or (lambda block: True)
        self.have: dict[bytes, object] = {}
        self.requested: set[bytes] = set()
        self.rejected: set[bytes] = set()
        self.body_sends = 0

    def originate(self, block_hash: bytes, block, size: int) -> None:
        self.have[block_hash] = block
        self._advertise(block_hash, exclude=None)

    def handle(self, msg) -> bool:
        if isinstance(msg, InvNotice):
            if msg.block_hash not in self.have and msg.block_hash not in self.requested \
                    and msg.block_hash not in self.rejected:
                self.requested.add(msg.block_hash)
                self.sim.send(
                    self.node_id, msg.sender,
                    DataRequest(msg.block_hash, self.node_id),
                    DataRequest(msg.block_hash, self.node_id).size_bytes(),
                )
            return True
        if isinstance(msg, DataRequest):
            block = self.have.get(msg.block_hash)
            if block is not None:
                header = BlockHeaderMsg(msg.block_hash, self.header_check(block), self.node_id)
                self.sim.send(self.node_id, msg.sender, header, header.size_bytes())
                size = getattr(block, "payload_bytes", None) or 256
                body = BlockBodyMsg(msg.block_hash, block, size, self.node_id)
                self.body_sends += 1
                self.sim.send(self.node_id, msg.sender, body, body.size_bytes())
            return True
        if isinstance(msg, BlockHeaderMsg):
            if not msg.header_ok:
                self.rejected.add(msg.block_hash)
                self.requested.discard(msg.block_hash)
                self.sim.trace.add(TraceRecord(
                    self.sim.now_ms, self.node_id, "reject-header", 0
                ))
            return True
        if isinstance(msg, BlockBodyMsg):
            if msg.block_hash in self.rejected or msg.block_hash in self.have:
                return True
            if not self.header_check(msg.block):
                self.rejected.add(msg.block_hash)
                return True
            self.have[msg.block_hash] = msg.block
            self.requested.discard(msg.block_hash)
            self._advertise(msg.block_hash, exclude=msg.sender)
            self.on_block(msg.block)
            return True
        return False

    def _advertise(self, block_hash: bytes, exclude: str | None) -> None:
        for peer in self.peers:
            if peer != exclude:
                notice = InvNotice(block_hash, self.node_id)
                self.sim.send(self.node_id, peer, notice, notice.size_bytes())


@dataclass
class PropagationReport:
    deliveries: dict[str, float]
    body_transmissions: int
    inv_count: int
    rejected_at_header: set[str]


def propagate_block(
    nodes: list[str],
    origin: str,
    block,
    block_hash: bytes,
    size_bytes: int,
    peer_graph: dict[str, list[str]] | None = None,
    links: LinkModel | None = None,
    seed: int = 0,
    header_ok: bool = True,
) -> PropagationReport:
    """Standalone advertisement-model propagation over a peer graph."""
    sim = Simulator(links=links or LinkModel(), seed=seed)
    peers = peer_graph or build_peer_graph(nodes, DEFAULT_PEER_DEGREE, seed)
    deliveries: dict[str, float] = {origin: 0.0}
    gossips: dict[str, GossipNode] = {}

    def make_on_block(node_id):
        return lambda block_obj: deliveries.setdefault(node_id, sim.now_ms)

    for node in nodes:
        gossip = GossipNode(
            node, sim, peers[node], make_on_block(node),
            header_check=lambda blk: header_ok,
        )
        gossips[node] = gossip
        sim.register(node, gossip.handle)

    class _SizedBlock:
        payload_bytes = size_bytes

        def __init__(self, inner):
            self.inner = inner

    gossips[origin].originate(block_hash, _SizedBlock(block), size_bytes)
    sim.run_until(time_limit_ms=3_600_000.0)

    inv_count = sum(
        1 for record in sim.trace.records if record.event == "send:InvNotice"
    )
    rejected = {node for node, gossip in gossips.items() if block_hash in gossip.rejected}
    return PropagationReport(
        deliveries=deliveries,
        body_transmissions=sum(g.body_sends for g in gossips.values()),
        inv_count=inv_count,
        rejected_at_header=rejected,
    )


# -- withholding-miner revenue simulation -----------------------------------


def draw_extra_zero_bits(rng: random.Random, cap: int = 30) -> int:
    """Extra leading zeros beyond the target: geometric with ratio 1/2."""
    bits = 0
    while bits < cap and rng.random() < 0.5:
        bits += 1
    return bits


@dataclass(frozen=True)
class SelfishSimResult:
    revenue_fraction: float
    opportunities: int
    forks: int
    fork_wins: int


def simulate_selfish_mining(
    power: float,
    extra_bits: int,
    resolution: str,
    rng: random.Random,
    min_forks: int = 10_000,
    max_opportunities: int = 5_000_000,
) -> SelfishSimResult:
    """Monte Carlo of the withholding strategy, one block race at a time.

    The attacker finds each block with probability ``power``.  A find
    lucky enough (at least ``extra_bits`` extra zeros) is withheld and
    later races a competing block: under ``smallest-hash`` the withheld
    block survives unless the competitor is even luckier, under
    ``coin-flip`` it survives half the time.  A surviving withheld block
    pays its reward and leaves the attacker mining on top, which is the
    recursive branch of the revenue recurrence.
    """
    if resolution not in ("smallest-hash", "coin-flip"):
        raise ConfigError(f"unknown fork resolution {resolution!r}")
    attacker_rewards = 0.0
    opportunities = 0
    forks = 0
    fork_wins = 0

    while forks < min_forks and opportunities < max_opportunities:
        opportunities += 1
        if rng.random() >= power:
            continue  # someone else claimed this block
        depth_rewards = 0.0
        while True:
            luck = draw_extra_zero_bits(rng)
            if luck < extra_bits:
                depth_rewards += 1.0  # publish immediately, bank the reward
                break
            # Withhold and mine on top until a competing block shows up.
            forks += 1
            if resolution == "smallest-hash":
                competitor_luck = draw_extra_zero_bits(rng)
                won = competitor_luck <= extra_bits  # strictly luckier competitor wins
            else:
                won = rng.random() < 0.5
            if not won:
                break  # hidden work orphaned
            fork_wins += 1
            depth_rewards += 1.0
            # Still mining on the survivor: the next find is attacker's
            # only with probability ``power`` again.
            if rng.random() >= power:
                break
        attacker_rewards += depth_rewards

    return SelfishSimResult(
        revenue_fraction=attacker_rewards / opportunities,
        opportunities=opportunities,
        forks=forks,
        fork_wins=fork_wins,
    )
