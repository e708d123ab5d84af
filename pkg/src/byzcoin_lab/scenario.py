"""Scenario configuration, the simulation runner, metrics, and the audit.

A scenario wires together the event loop, the gossip layer for keyblocks,
one consensus node per miner, stochastic mining, and the configured
Byzantine behaviors, then runs for a simulated duration and audits the
outcome.  The audit is global and unforgiving: it re-verifies every
commit signature it saw anywhere against the roster that was in force,
and fails the run if any height carries two distinct committed blocks.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass, field, replace

import yaml

from . import groups
from .chain import GENESIS_HASH, KeyBlock, MicroBlock, Roster, ShareWindow, update_window
from .consensus import (
    COMMIT,
    CommitRecord,
    ConsensusConfig,
    Node,
    PREPARE,
    RoundKey,
    arrange_slots,
    signing_message,
)
from .cosi import CollectiveSignature, tree_depth_formula, verify_collective
from .simnet import (
    Adversary,
    AdversaryProfile,
    ConfigError,
    GossipNode,
    LinkModel,
    MinerModel,
    Simulator,
    Timer,
    Trace,
    build_peer_graph,
    draw_extra_zero_bits,
)


@dataclass(frozen=True)
class AdversarySpec:
    behavior: str
    miners: int = 1
    genesis_shares: int = 1
    power: float = 0.0
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    window: int = 11
    honest_miners: int | None = None
    branching: int = 8
    topology: str = "tree"
    group: str = "toy"
    block_size_bytes: int = 32_768
    tx_size_bytes: int = 250
    block_reward: int = 100
    rtt_ms: float = 200.0
    bandwidth_mbps: float = 35.0
    block_interval_s: float = 600.0
    peer_degree: int = 8
    duration_s: float = 1800.0
    max_microblocks: int | None = None
    max_micro_per_era: int | None = None
    propose_gap_ms: float = 0.0
    adversaries: tuple[AdversarySpec, ...] = ()
    genesis_order: str = "adversary_oldest"
    era_first_quorum_override: int | None = None

    _FIELD_TYPES = None

    def validate(self) -> None:
        if self.window < 1:
            raise ConfigError("window: must be at least 1")
        if self.branching < 2:
            raise ConfigError("branching: must be at least 2")
        if self.topology not in ("tree", "flat"):
            raise ConfigError(f"topology: unknown value {self.topology!r}")
        if self.group not in ("toy", "ed25519"):
            raise ConfigError(f"group: unknown value {self.group!r}")
        if self.genesis_order not in ("adversary_oldest", "adversary_newest", "adversary_interior"):
            raise ConfigError(f"genesis_order: unknown value {self.genesis_order!r}")
        if self.duration_s <= 0:
            raise ConfigError("duration_s: must be positive")
        total_adv_shares = sum(spec.genesis_shares * spec.miners for spec in self.adversaries)
        if total_adv_shares >= self.window:
            raise ConfigError("adversaries: genesis shares must leave room for honest miners")
        total_adv_power = sum(spec.power * spec.miners for spec in self.adversaries)
        if total_adv_power > 1.0 + 1e-9:
            raise ConfigError("adversaries: power exceeds the whole network")
        for i, spec in enumerate(self.adversaries):
            AdversaryProfile(behavior=spec.behavior, miners=frozenset({"x"}), params=spec.params)
            if spec.miners < 1:
                raise ConfigError(f"adversaries[{i}].miners: must be at least 1")

    def honest_count(self) -> int:
        if self.honest_miners is not None:
            return self.honest_miners
        return max(1, self.window - sum(s.genesis_shares * s.miners for s in self.adversaries))

    def to_dict(self) -> dict:
        data = asdict(self)
        data["adversaries"] = [asdict(spec) for spec in self.adversaries]
        return data

    @classmethod
    def from_dict(cls, data: dict, path: str = "") -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"{path or 'config'}: expected a mapping")
        known = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
        unknown = set(data) - known
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"{path}{key}: unknown key")
        adversaries = []
        for i, spec in enumerate(data.get("adversaries", []) or []):
            spec_known = set(AdversarySpec.__dataclass_fields__)
            spec_unknown = set(spec) - spec_known
            if spec_unknown:
                key = sorted(spec_unknown)[0]
                raise ConfigError(f"{path}adversaries[{i}].{key}: unknown key")
            adversaries.append(AdversarySpec(**spec))
        fields = {k: v for k, v in data.items() if k != "adversaries"}
        config = cls(adversaries=tuple(adversaries), **fields)
        config.validate()
        return config

    @classmethod
    def from_yaml(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(yaml.safe_load(text) or {})

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    safety_ok: bool
    safety_violations: list[str]
    committed_blocks: int
    proposed_blocks: int
    commit_latencies_s: list[float]
    mean_commit_latency_s: float | None
    throughput_tps: float
    view_changes: int
    tree_fallbacks: int
    round_failures: int
    checkpoint_syncs: int
    keyblocks_mined: int
    eras: int
    stalled: bool
    messages_per_commit: float
    bytes_per_host: dict[str, int]
    reward_totals: dict[str, int]
    reward_discarded: int
    duration_s: float
    final_view_leaders: dict[str, str]
    byzantine_share_peak: int

    def to_dict(self) -> dict:
        return asdict(self)

    def block_metrics_csv(self) -> str:
        lines = ["height,latency_s"]
        for height, latency in enumerate(self.commit_latencies_s):
            lines.append(f"{height},{latency:.6f}")
        return "\n".join(lines) + "\n"


class ScenarioHooks:
    """Collects audit evidence and metrics from every node."""

    def __init__(self, runner: "ScenarioRunner"):
        self.runner = runner
        self.proposals: dict[tuple[bytes, int, int, str], MicroBlock] = {}
        self.proposal_count = 0
        self.prepare_proofs: dict[bytes, CollectiveSignature] = {}
        self.commits: list[tuple[CommitRecord, float, float]] = []
        self.view_changes: list[tuple[str, bytes, int, str]] = []
        self.tree_fallbacks: list[tuple[str, bytes]] = []
        self.round_failures: list[RoundKey] = []
        self.checkpoint_syncs = 0
        self.rewards: dict[str, int] = {}
        self.reward_discarded = 0
        self.eras_adopted: set[bytes] = set()

    # Consensus callbacks.

    def proposed(self, miner: str, key: RoundKey, block: MicroBlock) -> None:
        dedupe = (key.era, key.height, key.view, miner)
        if dedupe not in self.proposals:
            self.proposal_count += 1
        self.proposals[dedupe] = block

    def prepared_proof(self, miner, key, block, sig) -> None:
        self.prepare_proofs[block.hash()] = sig

    def committed(self, miner: str, key: RoundKey, record: CommitRecord, first_attempt_ms: float) -> None:
        self.runner.committed_total += 1
        self.commits.append((record, first_attempt_ms, self.runner.sim.now_ms))

    def round_failed(self, miner: str, key: RoundKey, mask) -> None:
        self.round_failures.append(key)

    def view_changed(self, miner: str, era: bytes, view: int, leader: str) -> None:
        self.view_changes.append((miner, era, view, leader))

    def tree_fallback(self, miner: str, era: bytes) -> None:
        self.tree_fallbacks.append((miner, era))

    def keyblock_accepted(self, miner, keyblock, sig, rewards) -> None:
        for name, amount in rewards.allocations.items():
            self.rewards[name] = self.rewards.get(name, 0) + amount
        self.reward_discarded += rewards.discarded

    def era_adopted(self, miner: str, kb: KeyBlock) -> None:
        self.eras_adopted.add(kb.hash())
        self.runner.reschedule_mining(miner)

    def release_keyblock(self, miner: str, kb: KeyBlock) -> None:
        self.runner.announce_keyblock(miner, kb)

    def node_timer(self, node: Node, timer: Timer) -> None:
        if timer.tag == "mine":
            self.runner.mining_attempt(node, timer.data)


class ScenarioRunner:
    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        self.group = groups.get_group(config.group)
        self.sim = Simulator(
            links=LinkModel(rtt_ms=config.rtt_ms, bandwidth_mbps=config.bandwidth_mbps),
            seed=config.seed,
        )
        self.rng = random.Random(config.seed ^ 0x5EED)
        self.hooks = ScenarioHooks(self)
        self.committed_total = 0
        self.keyblocks_mined = 0

        honest = [f"h{i}" for i in range(config.honest_count())]
        self.adversary_miners: list[str] = []
        profiles = []
        for spec_index, spec in enumerate(config.adversaries):
            names = [f"a{spec_index}_{j}" for j in range(spec.miners)]
            self.adversary_miners.extend(names)
            profiles.append(AdversaryProfile(
                behavior=spec.behavior, miners=frozenset(names), params=dict(spec.params)
            ))
        self.adversary = Adversary(profiles)
        self.miners = honest + self.adversary_miners

        self.keypairs = {
            miner: groups.keygen(self.group, self.rng.randrange(2**63))
            for miner in self.miners
        }
        pubkeys = {m: kp.public for m, kp in self.keypairs.items()}

        powers = self._hash_powers(honest)
        self.miner_model = MinerModel(powers=powers, interval_s=config.block_interval_s)

        depth = tree_depth_formula(config.window, config.branching)
        ser_block = self.sim.links.serialization_ms(config.block_size_bytes)
        ser_small = self.sim.links.serialization_ms(160)
        level_block = config.branching * ser_block + config.rtt_ms + 100.0
        level_small = config.branching * ser_small + config.rtt_ms + 100.0
        if config.topology == "flat":
            expected_round = 2 * ((config.window - 1) * (ser_block + ser_small) + 2 * config.rtt_ms + 400.0)
        else:
            expected_round = 2 * max(1, depth) * (level_block + level_small)
        self.consensus_config = ConsensusConfig(
            group_name=config.group,
            branching=config.branching,
            topology=config.topology,
            block_size_bytes=config.block_size_bytes,
            tx_size_bytes=config.tx_size_bytes,
            block_reward=config.block_reward,
            propose_gap_ms=config.propose_gap_ms,
            max_micro_per_era=config.max_micro_per_era,
            view_change_timeout_ms=10.0 * expected_round,
            ack_timeout_ms=5.0 * expected_round,
            level_budget_block_ms=level_block,
            level_budget_small_ms=level_small,
            ser_block_ms=ser_block,
            ser_small_ms=ser_small,
            rtt_ms=config.rtt_ms,
            era_first_quorum_override=config.era_first_quorum_override,
        )

        self.nodes: dict[str, Node] = {}
        self.gossips: dict[str, GossipNode] = {}
        peer_graph = build_peer_graph(self.miners, config.peer_degree, config.seed)

        genesis = self.build_genesis()
        self.keyblock_registry: dict[bytes, KeyBlock] = {kb.hash(): kb for kb in genesis}
        self.window_registry: dict[bytes, ShareWindow] = {}
        running = ShareWindow(size=config.window)
        for kb in genesis:
            running = update_window(running, kb)
            self.window_registry[kb.hash()] = running

        delayers = {
            m for m in self.adversary_miners
            if self.adversary.profile_of(m) and self.adversary.profile_of(m).behavior == "message-delayer"
        }
        if delayers:
            delay_rng = random.Random(config.seed ^ 0xDE1A)

            def delay_hook(src, dst, payload):
                if src in delayers:
                    return self.adversary.extra_delay_ms(src, delay_rng)
                return 0.0

            self.sim.delay_hook = delay_hook

        for miner in self.miners:
            node = Node(
                miner_id=miner,
                keypair=self.keypairs[miner],
                group=self.group,
                sim=self.sim,
                config=self.consensus_config,
                adversary=self.adversary,
                pubkeys=pubkeys,
                hooks=self.hooks,
            )
            node.install_genesis(genesis, window_after=self.window_registry)
            gossip = GossipNode(
                miner, self.sim, peer_graph[miner],
                on_block=node.on_keyblock,
                header_check=lambda kb: getattr(kb, "pow_valid", True),
            )
            self.nodes[miner] = node
            self.gossips[miner] = gossip

            def make_handler(g: GossipNode, n: Node):
                def handler(payload):
                    if not g.handle(payload):
                        n.handle(payload)
                return handler

            self.sim.register(miner, make_handler(gossip, node))

    def _hash_powers(self, honest: list[str]) -> dict[str, float]:
        powers: dict[str, float] = {}
        adv_total = 0.0
        for spec_index, spec in enumerate(self.config.adversaries):
            for j in range(spec.miners):
                powers[f"a{spec_index}_{j}"] = spec.power
                adv_total += spec.power
        remaining = max(0.0, 1.0 - adv_total)
        for miner in honest:
            powers[miner] = remaining / len(honest)
        return powers

    def build_genesis(self) -> list[KeyBlock]:
        """Seeded pre-agreed keyblocks filling the first window."""
        config = self.config
        honest = [m for m in self.miners if m not in self.adversary_miners]
        adversary_slots: list[str] = []
        for spec_index, spec in enumerate(self.config.adversaries):
            for j in range(spec.miners):
                adversary_slots.extend([f"a{spec_index}_{j}"] * spec.genesis_shares)
        honest_needed = config.window - len(adversary_slots)
        honest_slots = [honest[i % len(honest)] for i in range(honest_needed)]

        if config.genesis_order == "adversary_newest":
            order = honest_slots + adversary_slots
        elif config.genesis_order == "adversary_interior":
            # Adversary shares sit just under the leader's root slot.
            order = honest_slots[:-1] + adversary_slots + honest_slots[-1:]
            if not honest_slots:
                order = adversary_slots
        else:
            order = adversary_slots + honest_slots

        blocks = []
        prev = GENESIS_HASH
        for height, miner in enumerate(order):
            kb = KeyBlock(
                height=height,
                prev_hash=prev,
                miner=miner,
                miner_pubkey=self.keypairs[miner].public,
                pow_nonce=height,
                extra_zero_bits=0,
                pow_valid=True,
                timestamp_ms=0,
            )
            blocks.append(kb)
            prev = kb.hash()
        return blocks

    # -- mining ------------------------------------------------------------

    def reschedule_mining(self, miner: str) -> None:
        node = self.nodes[miner]
        node.mine_epoch += 1
        delay_s = self.miner_model.next_delay_s(miner, self.rng)
        if delay_s is None:
            return
        tip = node.era.keyblock.hash()
        self.sim.set_timer(miner, "mine", delay_s * 1000.0, data=(node.mine_epoch, tip))

    def mining_attempt(self, node: Node, data) -> None:
        epoch, tip = data
        if epoch != node.mine_epoch or node.era.keyblock.hash() != tip:
            return
        keyblock = KeyBlock(
            height=node.era.keyblock.height + 1,
            prev_hash=tip,
            miner=node.id,
            miner_pubkey=self.keypairs[node.id].public,
            pow_nonce=self.rng.randrange(2**62),
            extra_zero_bits=draw_extra_zero_bits(self.rng),
            pow_valid=True,
            timestamp_ms=int(self.sim.now_ms),
        )
        self.keyblocks_mined += 1
        self.keyblock_registry[keyblock.hash()] = keyblock
        parent_window = self.window_registry.get(tip)
        if parent_window is not None:
            self.window_registry[keyblock.hash()] = update_window(parent_window, keyblock)
        if self.adversary.withholds_keyblock(node.id, keyblock.extra_zero_bits):
            node.withheld_keyblocks[keyblock.height] = keyblock
        else:
            self.announce_keyblock(node.id, keyblock)
        self.reschedule_mining(node.id)

    def announce_keyblock(self, miner: str, keyblock: KeyBlock) -> None:
        gossip = self.gossips[miner]
        keyblock_size = 256
        gossip.have[keyblock.hash()] = keyblock
        gossip.originate(keyblock.hash(), keyblock, keyblock_size)
        self.nodes[miner].on_keyblock(keyblock)

    # -- run and audit -------------------------------------------------------

    def run(self) -> "ScenarioResult":
        for miner in self.miners:
            self.reschedule_mining(miner)
        for miner in self.miners:
            self.nodes[miner].start()

        limit_ms = self.config.duration_s * 1000.0
        condition = None
        if self.config.max_microblocks is not None:
            target = self.config.max_microblocks

            def condition():
                return self.committed_total >= target

        trace = self.sim.run_until(time_limit_ms=limit_ms, condition=condition)
        report = self.build_report(trace)
        return ScenarioResult(config=self.config, report=report, trace=trace, runner=self)

    def effective_quorum(self, roster: Roster) -> int:
        override = self.config.era_first_quorum_override
        quorum = roster.quorum()
        return min(quorum, override) if override is not None else quorum

    def _window_aggregate(self, era_hash: bytes) -> bytes | None:
        cached = getattr(self, "_audit_aggregates", None)
        if cached is None:
            cached = self._audit_aggregates = {}
        if era_hash not in cached and era_hash in self.window_registry:
            window = self.window_registry[era_hash]
            cached[era_hash] = groups.aggregate(self.group, (pk for _, pk in window.entries))
        return cached.get(era_hash)

    def audit(self) -> tuple[bool, list[str]]:
        """Re-verify every commit seen anywhere; flag equal-height conflicts."""
        violations: list[str] = []
        records: dict[bytes, CommitRecord] = {}
        for record, _, _ in self.hooks.commits:
            records[record.block.hash()] = record
        for node in self.nodes.values():
            for record in node.micro_records.values():
                records.setdefault(record.block.hash(), record)

        committed_by_height: dict[int, set[bytes]] = {}
        for block_hash, record in records.items():
            window = self.window_registry.get(record.era)
            if window is None or record.signature is None:
                continue
            keys = [pk for _, pk in arrange_slots(window, record.view)]
            roster = Roster.from_window(window)
            try:
                ok = verify_collective(
                    self.group, keys, record.signature,
                    signing_message(COMMIT, record.block.hash()),
                    full_aggregate=self._window_aggregate(record.era),
                )
            except ValueError:
                ok = False
            if not ok:
                continue  # not a real commitment, carries no weight
            if record.signature.num_signers < self.effective_quorum(roster):
                continue
            committed_by_height.setdefault(record.block.height, set()).add(block_hash)

        for height, hashes in sorted(committed_by_height.items()):
            if len(hashes) > 1:
                violations.append(
                    f"height {height}: {len(hashes)} distinct committed blocks"
                )

        # Commit implies a verifiable acceptance proof for the same hash.
        for record, _, _ in self.hooks.commits:
            proof = self.hooks.prepare_proofs.get(record.block.hash())
            if proof is None:
                violations.append(
                    f"height {record.block.height}: commit without acceptance proof"
                )
                continue
            window = self.window_registry.get(record.era)
            if window is None:
                continue
            keys = [pk for _, pk in arrange_slots(window, record.view)]
            try:
                ok = verify_collective(
                    self.group, keys, proof, signing_message(PREPARE, record.block.hash())
                )
            except ValueError:
                ok = False
            if not ok:
                violations.append(
                    f"height {record.block.height}: acceptance proof fails verification"
                )

        # Chain continuity on the longest honest chain.
        best = max(
            (node.micro_chain for node in self.nodes.values()),
            key=len,
            default=[],
        )
        for prev, curr in zip(best, best[1:]):
            if curr.block.prev_hash != prev.block.hash():
                violations.append(
                    f"height {curr.block.height}: committed chain breaks its hash links"
                )
        return (not violations, violations)

    def byzantine_share_peak(self) -> int:
        peak = 0
        for window in self.window_registry.values():
            weight = sum(1 for m, _ in window.entries if m in self.adversary_miners)
            peak = max(peak, weight)
        return peak

    def build_report(self, trace: Trace) -> MetricsReport:
        config = self.config
        safety_ok, violations = self.audit()

        seen: set[bytes] = set()
        commit_rows: list[tuple[int, float, float, bytes]] = []
        for record, first_ms, done_ms in self.hooks.commits:
            if record.block.hash() in seen:
                continue
            seen.add(record.block.hash())
            commit_rows.append((record.block.height, first_ms, done_ms, record.era))
        commit_rows.sort()
        latencies = [(done - first) / 1000.0 for _, first, done, _ in commit_rows]

        genesis_era = None
        for node in self.nodes.values():
            genesis_era = node.micro_chain[0].era if node.micro_chain else genesis_era
        eras_seen = {era for _, _, _, era in commit_rows}
        genesis_hash = list(self.window_registry)[config.window - 1] if self.window_registry else None

        steady = [row for row in commit_rows if len(eras_seen) > 1 and row[3] != genesis_hash]
        if not steady:
            steady = commit_rows
        if len(steady) >= 2:
            span_s = (steady[-1][2] - steady[0][1]) / 1000.0
        else:
            span_s = config.duration_s
        tx_per_block = max(1, config.block_size_bytes // config.tx_size_bytes)
        throughput = len(steady) * tx_per_block / span_s if span_s > 0 else 0.0

        round_message_events = sum(
            1 for r in trace.records
            if r.event.startswith("send:") and r.event.split(":")[1] in (
                "RoundAnnounce", "AggregateUp", "ChallengeDown", "ResponseUp"
            )
        )
        stalled = self.committed_total == 0 and self.hooks.proposal_count > 0
        if commit_rows and self.hooks.proposal_count > len(commit_rows):
            last_commit_ms = max(done for _, _, done, _ in commit_rows)
            stalled = stalled or (
                self.sim.now_ms - last_commit_ms
                > 3.0 * self.consensus_config.view_change_timeout_ms
            )

        final_leaders = {
            miner: node.current_leader() for miner, node in self.nodes.items()
        }
        return MetricsReport(
            scenario=config.name,
            seed=config.seed,
            safety_ok=safety_ok,
            safety_violations=violations,
            committed_blocks=len(commit_rows),
            proposed_blocks=self.hooks.proposal_count,
            commit_latencies_s=latencies,
            mean_commit_latency_s=(sum(latencies) / len(latencies)) if latencies else None,
            throughput_tps=throughput,
            view_changes=len({(era, view) for _, era, view, _ in self.hooks.view_changes}),
            tree_fallbacks=len(self.hooks.tree_fallbacks),
            round_failures=len(self.hooks.round_failures),
            checkpoint_syncs=sum(
                1 for r in trace.records if r.event == "checkpoint-sync"
            ),
            keyblocks_mined=self.keyblocks_mined,
            eras=len(self.hooks.eras_adopted) + 1,
            stalled=stalled,
            messages_per_commit=(round_message_events / len(commit_rows)) if commit_rows else 0.0,
            bytes_per_host=dict(sorted(self.sim.bytes_sent.items())),
            reward_totals=dict(sorted(self.hooks.rewards.items())),
            reward_discarded=self.hooks.reward_discarded,
            duration_s=self.sim.now_ms / 1000.0,
            final_view_leaders=final_leaders,
            byzantine_share_peak=self.byzantine_share_peak(),
        )


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    report: MetricsReport
    trace: Trace
    runner: ScenarioRunner


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    return ScenarioRunner(config).run()


@dataclass
class SweepPoint:
    value: int
    report: MetricsReport | None
    error: str | None


def sweep(config: ScenarioConfig, axis: str, values: list[int]) -> list[SweepPoint]:
    """One scenario per axis value; failures are recorded, not fatal."""
    if axis not in ("hosts", "blocksize"):
        raise ConfigError(f"axis: unknown value {axis!r}")
    if any(v <= 0 for v in values):
        raise ConfigError("values: must be positive")
    if list(values) != sorted(values):
        raise ConfigError("values: must be ascending")
    points = []
    for value in values:
        if axis == "hosts":
            point_config = replace(config, window=value, honest_miners=value,
                                   name=f"{config.name}-hosts{value}")
        else:
            point_config = replace(config, block_size_bytes=value,
                                   name=f"{config.name}-block{value}")
        try:
            result = run_scenario(point_config)
            points.append(SweepPoint(value=value, report=result.report, error=None))
        except Exception as exc:  # noqa: BLE001 - a sweep must survive bad points
            points.append(SweepPoint(value=value, report=None, error=str(exc)))
    return points


def sweep_latency_csv(axis: str, points: list[SweepPoint]) -> str:
    lines = [f"{axis},mean_commit_latency_s,committed_blocks,error"]
    for point in points:
        if point.report is not None:
            latency = point.report.mean_commit_latency_s
            lines.append(
                f"{point.value},{'' if latency is None else f'{latency:.6f}'},"
                f"{point.report.committed_blocks},"
            )
        else:
            lines.append(f"{point.value},,,{point.error}")
    return "\n".join(lines) + "\n"


# -- scripted era-transition trial -------------------------------------------


def run_era_handoff_trial(f: int, era_first_quorum: int | None = None, seed: int = 0) -> dict:
    """Stale-leader era transition against a window of 3f+2 single-share miners.

    The new era's leader and f honest laggards are one committed block
    behind; f colluders sign anything.  With the era-first rule at 2f+2
    the history-skipping proposal dies and checkpoint synchronization
    repairs the leader's view; a 2f+1 override lets the skip commit,
    which the audit then flags.
    """
    w = 3 * f + 2
    leader = "L"
    byz = [f"b{i}" for i in range(f)]
    stale = [f"s{i}" for i in range(f)]
    fresh = [f"g{i}" for i in range(f + 1)]
    miners = [leader] + byz + stale + fresh

    group = groups.get_group("toy")
    rng = random.Random(seed)
    keypairs = {m: groups.keygen(group, rng.randrange(2**63)) for m in miners}
    pubkeys = {m: kp.public for m, kp in keypairs.items()}

    # Genesis: the leader's share is oldest so mining one block recycles it.
    order = [leader] + byz + stale + fresh
    genesis = []
    prev = GENESIS_HASH
    for height, miner in enumerate(order):
        kb = KeyBlock(height=height, prev_hash=prev, miner=miner,
                      miner_pubkey=pubkeys[miner], pow_nonce=height,
                      extra_zero_bits=0, pow_valid=True, timestamp_ms=0)
        genesis.append(kb)
        prev = kb.hash()
    era0 = genesis[-1]
    window0 = None
    running = ShareWindow(size=w)
    for kb in genesis:
        running = update_window(running, kb)
    window0 = running

    def sign_commit(block: MicroBlock, window: ShareWindow, view: int) -> CommitRecord:
        from .cosi import build_tree, run_round

        slots = arrange_slots(window, view)
        keys = [keypairs[m] for m, _ in slots]
        tree = build_tree(range(len(slots)), 2)
        sig = run_round(group, tree, keys, signing_message(COMMIT, block.hash()),
                        rng=random.Random(seed + block.height))
        return CommitRecord(block=block, signature=sig, era=era0.hash(), view=view)

    block_p = MicroBlock(height=0, prev_hash=GENESIS_HASH, keyblock_hash=era0.hash(),
                         transactions=(b"p",), payload_bytes=1)
    block_q = MicroBlock(height=1, prev_hash=block_p.hash(), keyblock_hash=era0.hash(),
                         transactions=(b"q",), payload_bytes=1)
    record_p = sign_commit(block_p, window0, 0)
    record_q = sign_commit(block_q, window0, 0)

    sim = Simulator(links=LinkModel(rtt_ms=10.0, bandwidth_mbps=1000.0), seed=seed)
    adversary = Adversary([AdversaryProfile(behavior="equivocating-leader",
                                            miners=frozenset(byz))])
    consensus_config = ConsensusConfig(
        group_name="toy", branching=2, topology="flat",
        block_size_bytes=64, tx_size_bytes=32, block_reward=0,
        view_change_timeout_ms=600_000.0, ack_timeout_ms=300_000.0,
        level_budget_block_ms=200.0, level_budget_small_ms=100.0,
        max_micro_per_era=3,
        era_first_quorum_override=era_first_quorum,
    )

    class TrialHooks:
        def __init__(self):
            self.commits: list[CommitRecord] = []
            self.prepare_proofs: dict[bytes, CollectiveSignature] = {}
            self.checkpoints = 0

        def proposed(self, *args):
            pass

        def prepared_proof(self, miner, key, block, sig):
            self.prepare_proofs[block.hash()] = sig

        def committed(self, miner, key, record, first_ms):
            self.commits.append(record)

        def round_failed(self, *args):
            pass

        def view_changed(self, *args):
            pass

        def tree_fallback(self, *args):
            pass

        def keyblock_accepted(self, *args):
            pass

        def era_adopted(self, *args):
            pass

        def release_keyblock(self, *args):
            pass

        def node_timer(self, *args):
            pass

    hooks = TrialHooks()
    nodes: dict[str, Node] = {}
    for miner in miners:
        node = Node(miner_id=miner, keypair=keypairs[miner], group=group, sim=sim,
                    config=consensus_config, adversary=adversary, pubkeys=pubkeys,
                    hooks=hooks)
        node.install_genesis(genesis)
        nodes[miner] = node
        sim.register(miner, node.handle)

    for miner in miners:
        node = nodes[miner]
        node._append_record(record_p)
        if miner in fresh:
            node._append_record(record_q)

    # The leader mines the next keyblock; everyone adopts the new era.
    new_kb = KeyBlock(height=w, prev_hash=era0.hash(), miner=leader,
                      miner_pubkey=pubkeys[leader], pow_nonce=999,
                      extra_zero_bits=0, pow_valid=True, timestamp_ms=0)
    for miner in miners:
        nodes[miner].on_keyblock(new_kb)

    sim.run_until(time_limit_ms=3_600_000.0)

    committed_heights: dict[int, set[bytes]] = {0: {block_p.hash()}, 1: {block_q.hash()}}
    for record in hooks.commits:
        committed_heights.setdefault(record.block.height, set()).add(record.block.hash())

    leader_node = nodes[leader]
    return {
        "skip_committed": any(
            h != block_q.hash() for h in committed_heights.get(1, set())
        ),
        "double_commit_heights": [h for h, s in committed_heights.items() if len(s) > 1],
        "new_commits": [(r.block.height, r.block.hash().hex()[:12]) for r in hooks.commits],
        "leader_tip_height": leader_node.tip_height,
        "leader_chain_extends_q": (
            leader_node.tip_height >= 2
            and leader_node.micro_chain[1].block.hash() == block_q.hash()
        ),
        "checkpoint_runs": sum(
            1 for r in sim.trace.records if r.event == "checkpoint-sync"
        ),
    }
