"""Scenario driver: measurement, then one consensus round per epoch.

Every run checks the chain invariants as it goes (safety, liveness, gas,
slashing conservation and the leader-queue seeding rule) and reports any
violation by name.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from ..config import SCHEMA_VERSION, ScenarioConfig
from ..consensus.bus import MessageBus
from ..consensus.chain import GENESIS_HASH, Block, Chain
from ..consensus.da import DAStore
from ..consensus.election import ElectionError, LeaderQueue, refill_queue, replace_head
from ..consensus.proofs import ProofSystem
from ..consensus.roles import (
    EpochContext,
    SkipOutcome,
    ValidatorState,
    delegation,
    handle_exception,
    leader_epoch,
    validator_epoch,
)
from ..identity import KeyRegistry
from ..seeds import rng_for
from ..signal import Label
from .compute import make_pod_fn, make_pof_fn
from .world import World, validator_id

log = logging.getLogger("spacenet.sim")

INVARIANTS = ("safety", "liveness", "gas", "slashing", "queue")
FRAUD_LABELS = (Label.RFRAUD.value, Label.CORPORATE.value)


@dataclass
class RunResult:
    report: dict
    da: DAStore
    chains: dict[str, Chain]
    violations: dict[str, list[str]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())


class Simulation:
    def __init__(self, config: ScenarioConfig, da_path: str | Path | None = None):
        self.config = cfg = config
        self.ec = cfg.epoch_config
        self.da = DAStore(da_path)
        self.registry = KeyRegistry()
        self.world = World(cfg, self.da, self.registry)
        self.proofs = ProofSystem(self.da)
        self.proofs.register("pod", make_pod_fn(cfg))
        self.proofs.register("pof", make_pof_fn(cfg, self.registry))
        self.vids = [validator_id(i) for i in range(cfg.n_validators)]
        for v in self.vids:
            self.registry.create(cfg.seed, v)
        stakes = cfg.consensus.stakes or [cfg.consensus.stake] * cfg.n_validators
        self.vstate = {v: ValidatorState(v, float(stakes[i])) for i, v in enumerate(self.vids)}
        self.chains = {v: Chain() for v in self.vids}
        self.ctx = EpochContext(cfg, self.da, self.proofs, self.registry, self.world.mempool)
        self.bus = MessageBus()
        parts = sorted(self.world.layout.satellites) + sorted(self.world.layout.receivers)
        self.delegates = delegation(parts, self.vids)
        self.scores = {p: {"pod": 0.0, "pof": 0.0} for p in parts}
        self.finalized: dict[int, dict[str, int]] = {}
        self.outcomes: list[SkipOutcome] = []
        self.violations: dict[str, list[str]] = {k: [] for k in INVARIANTS}
        self.queue = LeaderQueue(self.ec.queue_size)
        refill_queue(self.queue, self.weights(), GENESIS_HASH, -1, self.ec.vdf_difficulty, consume=False)
        self.rows: list[dict] = []
        self.corroborated = Counter()

    # -- helpers -----------------------------------------------------------

    def weights(self) -> dict[str, float]:
        rw = self.config.rewards
        return {v: s.election_weight(rw.w_stake, rw.w_pod, rw.w_pof) for v, s in self.vstate.items()}

    def crashed(self, epoch: int) -> set[str]:
        cons = self.config.consensus
        out = set()
        for f in cons.faults:
            if f.kind == "crash" and f.node and (not f.epochs or epoch in f.epochs):
                out.add(f.node)
        if cons.random_crashes:
            rng = rng_for(self.config.seed, "faults", epoch)
            fmax = (len(self.vids) - 1) // 3
            k = int(rng.integers(0, fmax + 1))
            if k:
                out.update(str(v) for v in rng.choice(self.vids, size=k, replace=False))
        return out

    def byzantine(self, node: str, epoch: int) -> str | None:
        for f in self.config.consensus.faults:
            if f.kind != "crash" and f.node == node and (not f.epochs or epoch in f.epochs):
                return f.kind
        return None

    def reference(self, crashed: set[str]) -> Chain:
        for v in self.vids:
            if v not in crashed:
                return self.chains[v]
        return self.chains[self.vids[0]]

    # -- one epoch ---------------------------------------------------------------

    def run_epoch(self, e: int) -> None:
        cfg, ec = self.config, self.ec
        crashed = self.crashed(e)
        online = [v for v in self.vids if v not in crashed]
        canon = self.reference(crashed)
        h_before = canon.height
        t0 = e * ec.epoch_window
        self.bus.now = max(self.bus.now, t0)
        meas = self.world.measure(e, canon.tip_hash, self.bus)
        self.ctx.mempool = self.world.mempool

        skipped: list[str] = []
        exceptions: list[str] = []
        outcomes: list[SkipOutcome] = []
        accepted: list[Block] = []
        final_leader = None
        fallback = None
        for attempt in range(len(self.vids)):
            entry = self.queue.head
            leader = entry.leader
            if entry.seed_epoch > max(entry.epoch - ec.queue_size, -1):
                self.violations["queue"].append(f"epoch {e}: leader seeded from epoch {entry.seed_epoch}")
            t_att = self.bus.now
            proposal = None
            if leader not in crashed:
                proposal = leader_epoch(self.ctx, leader, self.chains[leader], e, t_att, self.byzantine(leader, e), self.finalized)
                delays = rng_for(cfg.seed, "bus", e, attempt, "proposal").integers(1, 3, size=len(self.vids))
                for v, d in zip(self.vids, delays):
                    if v != leader:
                        self.bus.send(leader, v, "proposal", proposal, int(d))
            deadline = t_att + ec.proposal_deadline
            got = {m.recipient: m.payload for m in self.bus.deliver_until(deadline) if m.kind == "proposal"}

            verdicts = {}
            for v in online:
                if v == leader:
                    continue
                verdicts[v] = validator_epoch(self.ctx, self.chains[v], got.get(v), e, leader, t_att, self.finalized)
            if proposal is not None and all(x.accepted for x in verdicts.values()):
                for v in online:
                    for b in proposal.blocks:
                        self.chains[v].append(b)
                accepted = proposal.blocks
                final_leader = leader
                break

            failing = [v for v, x in verdicts.items() if not x.accepted]
            reason = verdicts[failing[0]].reason.value if failing else "Timeout"
            exceptions.append(reason)
            t_x = self.bus.now
            vote_delay = rng_for(cfg.seed, "bus", e, attempt, "votes")
            initiator = failing[0] if failing else None
            arrivals = {}
            for v in failing:
                d = 0 if v == initiator else int(vote_delay.integers(1, cfg.consensus.max_vote_delay + 1)) if cfg.consensus.max_vote_delay else 0
                self.bus.send(v, initiator, "skip-vote", e, d)
            horizon = t_x + max(ec.skip_timer_limit, cfg.consensus.max_vote_delay)
            for m in self.bus.deliver_until(horizon):
                if m.kind == "skip-vote":
                    arrivals[m.sender] = m.deliver_at - t_x
            out = handle_exception(e, self.vstate[leader], reason, arrivals, len(self.vids), ec.skip_timer_limit, cfg.rewards.slash_fraction, h_before, canon.height)
            outcomes.append(out)
            log.info("epoch %d: leader %s exception %s -> %s", e, leader, reason, "skip" if out.skipped else out.fallback)
            if not out.skipped:
                fallback = out.fallback
                break
            skipped.append(leader)
            try:
                replace_head(self.queue, skipped, ec.vdf_difficulty)
            except ElectionError:
                fallback = "empty_block"
                break
        else:
            fallback = "empty_block"

        if not accepted and fallback == "empty_block":
            for v in online:
                c = self.chains[v]
                c.append(Block(c.height + 1, c.tip_hash, e, None, empty=True))

        # crashed replicas catch up when they recover
        ref = self.reference(crashed)
        for v in crashed:
            self.chains[v] = ref.copy()

        pod_loss = 0.0
        confusion: dict[str, Counter] = defaultdict(Counter)
        pof_stats = {"accepted": 0, "rejected": dict(meas.flow_rejections)}
        if accepted:
            last = accepted[-1]
            self._apply_delta(last.delta_s)
            for off in last.proofs_ref:
                rec = self.da.peek(off)
                if rec["kind"] == "pod":
                    self.finalized.setdefault(e, {})[rec["transmitter"]] = off
                    out = rec["output"]
                    pod_loss += out["total_loss"]
                    for rid, r in out["per_receiver"].items():
                        confusion[meas.labels[rid].value][_cell(r)] += 1
                    if last.delta_s["pod"].get(rec["transmitter"], 0.0) > 0:
                        self.corroborated[rec["transmitter"]] += 1
                else:
                    for vd in rec["output"]["verdicts"]:
                        if vd["accepted"]:
                            pof_stats["accepted"] += 1
                        else:
                            pof_stats["rejected"][vd["reason"]] = pof_stats["rejected"].get(vd["reason"], 0) + 1
        self.world.prune_mempool(ref)

        self.outcomes += outcomes
        self._check(e, h_before, ref, accepted)
        self.queue.pop()
        refill_queue(self.queue, self.weights(), ref.tip_hash, e, ec.vdf_difficulty, consume=False)

        self.rows.append(
            {
                "epoch": e,
                "height": ref.height,
                "blocks": ref.height - h_before,
                "leader": final_leader,
                "skips": sum(1 for o in outcomes if o.skipped),
                "slashed": sum(o.slashed for o in outcomes),
                "exceptions": exceptions,
                "fallback": fallback,
                "crashed": sorted(crashed),
                "pod_total_loss": pod_loss,
                "confusion": {k: dict(sorted(v.items())) for k, v in sorted(confusion.items())},
                "pof": {"accepted": pof_stats["accepted"], "committed": meas.flows_committed, "rejected": dict(sorted(pof_stats["rejected"].items()))},
                "mesh": meas.mesh,
            }
        )

    def _apply_delta(self, delta: dict) -> None:
        for part in ("pod", "pof"):
            for p, v in delta[part].items():
                self.scores.setdefault(p, {"pod": 0.0, "pof": 0.0})[part] += v
        per_v: dict[str, list[str]] = defaultdict(list)
        for p, v in self.delegates.items():
            per_v[v].append(p)
        for v, ps in per_v.items():
            st = self.vstate[v]
            st.weight_pod = max(0.0, sum(self.scores[p]["pod"] for p in ps) / len(ps))
            st.weight_pof = max(0.0, sum(self.scores[p]["pof"] for p in ps) / len(ps))

    def _check(self, e: int, h_before: int, ref: Chain, accepted: list[Block]) -> None:
        if ref.height <= h_before:
            self.violations["liveness"].append(f"epoch {e}: height stayed at {h_before}")
        for b in accepted:
            if b.gas > self.ec.gas_limit:
                self.violations["gas"].append(f"block {b.height} uses {b.gas} gas")
        hmin = min(c.height for c in self.chains.values())
        tips = {c.hash_at(hmin) for c in self.chains.values()}
        if len(tips) > 1:
            self.violations["safety"].append(f"epoch {e}: replicas disagree at height {hmin}")
        slashed = sum(s.slashed for s in self.vstate.values())
        recorded = sum(o.slashed for o in self.outcomes)
        if abs(slashed - recorded) > 1e-9:
            self.violations["slashing"].append(f"epoch {e}: slashed {slashed} != recorded {recorded}")

    # -- whole run -------------------------------------------------------------

    def run(self) -> RunResult:
        for e in range(self.config.epochs):
            self.run_epoch(e)
        # final conservation check after the last outcomes were added
        slashed = sum(s.slashed for s in self.vstate.values())
        recorded = sum(o.slashed for o in self.outcomes)
        if abs(slashed - recorded) > 1e-9:
            self.violations["slashing"].append(f"end: slashed {slashed} != recorded {recorded}")
        return RunResult(self.report(), self.da, self.chains, self.violations)

    def report(self) -> dict:
        cfg = self.config
        totals: dict[str, Counter] = defaultdict(Counter)
        for row in self.rows:
            for label, cells in row["confusion"].items():
                totals[label].update(cells)
        ref = self.chains[self.vids[0]]
        roles = {r: cfg.fraud_spec[i].kind.value for r, i in sorted(self.world.layout.roles.items())}
        sats = sorted(self.world.layout.satellites)
        return {
            "v": SCHEMA_VERSION,
            "scenario": cfg.name,
            "seed": cfg.seed,
            "config": cfg.dump(),
            "epochs": self.rows,
            "detection": detection_summary(totals),
            "transmitters": {
                s: {
                    "pod": self.scores[s]["pod"],
                    "pof": self.scores[s]["pof"],
                    "corroborated_epochs": self.corroborated[s],
                    "receivers": len(self.world.layout.receivers_of(s)),
                }
                for s in sats
            },
            "scores": {p: self.scores[p] for p in sorted(self.scores)},
            "roles": roles,
            "validators": [self.vstate[v].to_json() for v in self.vids],
            "outcomes": [o.to_json() for o in self.outcomes],
            "invariants": {k: {"ok": not self.violations[k], "violations": self.violations[k]} for k in INVARIANTS},
            "chain": {"height": ref.height, "tip": ref.tip_hash.hex()},
            "da": {"records": len(self.da), "sha256": self.da.digest()},
            "benchmarks": {"pod": [], "pof": []},
        }


def _cell(r: dict) -> str:
    if r["classification"] == "Valid":
        return "Valid"
    return f"Anomalous/{r['cause']}"


def detection_summary(confusion: dict[str, Counter]) -> dict:
    def anomalous(label: str) -> int:
        return sum(n for cell, n in confusion.get(label, {}).items() if cell.startswith("Anomalous"))

    def count(label: str) -> int:
        return sum(confusion.get(label, {}).values())

    fraud_n = sum(count(lbl) for lbl in FRAUD_LABELS)
    fraud_hit = sum(anomalous(lbl) for lbl in FRAUD_LABELS)
    honest_n = count(Label.HONEST.value)
    obj_n = count(Label.OBJECTIVE.value)
    return {
        "confusion": {k: dict(sorted(v.items())) for k, v in sorted(confusion.items())},
        "recall": fraud_hit / fraud_n if fraud_n else None,
        "false_positive_rate": anomalous(Label.HONEST.value) / honest_n if honest_n else None,
        "objective_flagged": anomalous(Label.OBJECTIVE.value) / obj_n if obj_n else None,
    }


def run_scenario(config: ScenarioConfig, da_path: str | Path | None = None) -> RunResult:
    return Simulation(config, da_path).run()


