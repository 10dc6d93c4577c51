"""Leader and validator epoch procedures, the weight update and the skip protocol.

One epoch: the queue-head leader runs PoD and PoF over the epoch's DA
submissions, stores the proof transcripts, computes the weight update and
packs ``n_epoch_blocks`` blocks (the last one carries the update).
Validators check every part independently; any failure raises an exception
that goes to a skip vote.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..config import ScenarioConfig
from ..identity import KeyRegistry
from .chain import Block, Chain, Tx, TxKind, pack_block, verify_tx
from .da import DAStore
from .proofs import ProofSystem, ProofTranscript


class ExceptionReason(str, enum.Enum):
    TIMEOUT = "Timeout"
    MISSING_PROOF = "MissingProof"
    LATE_PROOF = "LateProof"
    BAD_PROOF = "BadProof"
    BAD_SIGNATURE = "BadSignature"
    BAD_TX = "BadTx"
    GAS = "GasExceeded"
    BAD_WEIGHT = "BadWeight"
    BAD_PARENT = "BadParent"


@dataclass
class ValidatorState:
    node_id: str
    stake: float
    weight_pod: float = 0.0
    weight_pof: float = 0.0
    slashed: float = 0.0
    online: bool = True

    @property
    def weight_pos(self) -> float:
        return self.stake

    def election_weight(self, w_stake: float, w_pod: float, w_pof: float) -> float:
        return max(0.0, w_stake * self.stake + w_pod * self.weight_pod + w_pof * self.weight_pof)

    def to_json(self) -> dict:
        return {
            "node": self.node_id,
            "stake": self.stake,
            "weight_pos": self.weight_pos,
            "weight_pod": self.weight_pod,
            "weight_pof": self.weight_pof,
            "slashed": self.slashed,
            "online": self.online,
        }


# --- skip protocol -------------------------------------------------------------


def skip_threshold_met(votes: int, n: int) -> bool:
    """Strictly more than two thirds of the validator set."""
    return 3 * votes > 2 * n


@dataclass
class SkipOutcome:
    epoch: int
    leader: str
    reason: str
    votes: int
    n_validators: int
    skipped: bool
    slashed: float = 0.0
    fallback: str | None = None

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "leader": self.leader,
            "reason": self.reason,
            "votes": self.votes,
            "n": self.n_validators,
            "skipped": self.skipped,
            "slashed": self.slashed,
            "fallback": self.fallback,
        }


def handle_exception(
    epoch: int,
    leader: ValidatorState,
    reason: str,
    vote_arrivals: Mapping[str, int],
    n_validators: int,
    skip_timer_limit: int,
    slash_fraction: float,
    height_before: int,
    height_now: int,
) -> SkipOutcome:
    """Count skip votes that arrive within the timer; slash and skip, or fall back.

    ``vote_arrivals`` maps voter to the logical time (relative to the timer
    start) its vote arrived. Without enough votes the chain height decides:
    a growing chain means this node fell behind (resync), a stalled one gets
    an empty block.
    """
    votes = sum(1 for t in vote_arrivals.values() if t <= skip_timer_limit)
    if skip_threshold_met(votes, n_validators):
        amount = leader.stake * slash_fraction
        leader.stake -= amount
        leader.slashed += amount
        return SkipOutcome(epoch, leader.node_id, reason, votes, n_validators, True, amount)
    fallback = "resync" if height_now > height_before else "empty_block"
    return SkipOutcome(epoch, leader.node_id, reason, votes, n_validators, False, 0.0, fallback)


# --- weight update ---------------------------------------------------------------


def weight_update(
    pod_outputs: Mapping[str, dict],
    pof_output: dict,
    claims: Mapping[str, dict],
    config: ScenarioConfig,
) -> dict:
    """ΔS per participant, split into its PoD and PoF parts.

    Receivers: +r_pod when Valid, -p_fraud when flagged Fraud, 0 for
    objective impairment. Plus r_pof times their share of accepted bytes.
    Transmitters: +r_pod when the PoD consensus corroborates their claim,
    else -p_fraud; plus r_pof times their share of accepted bytes.
    """
    rw = config.rewards
    pod: dict[str, float] = {}
    for tx in sorted(pod_outputs):
        rep = pod_outputs[tx]
        for rid, r in sorted(rep["per_receiver"].items()):
            if r["classification"] == "Valid":
                pod[rid] = rw.r_pod
            elif r["cause"] == "Fraud":
                pod[rid] = -rw.p_fraud
            else:
                pod[rid] = 0.0
        claim = claims.get(tx)
        cons = rep.get("consensus_alpha", {})
        ok = (
            claim is not None
            and "signal_dbm" in cons
            and abs(cons["signal_dbm"] - claim["signal_dbm"]) <= rw.corroboration_tolerance_db
        )
        pod[tx] = rw.r_pod if ok else -rw.p_fraud

    pof: dict[str, float] = {}
    accepted = [v for v in pof_output.get("verdicts", []) if v["accepted"]]
    total = sum(v["bytes"] for v in accepted)
    if total > 0:
        for v in accepted:
            share = rw.r_pof * v["bytes"] / total
            pof[v["challenger"]] = pof.get(v["challenger"], 0.0) + share
            pof[v["transmitter"]] = pof.get(v["transmitter"], 0.0) + share
    return {"pod": {k: pod[k] for k in sorted(pod)}, "pof": {k: pof[k] for k in sorted(pof)}}


# --- epoch inputs -------------------------------------------------------------


@dataclass
class EpochInputs:
    """DA offsets that an epoch's proofs must cover."""

    alpha: dict[str, int]
    prev: dict[str, tuple[int, int]]
    claims: dict[str, int]
    flows: list[int]
    flow_pod: list[int]

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "prev": {k: list(v) for k, v in self.prev.items()},
            "claims": self.claims,
            "flows": self.flows,
            "flow_pod": self.flow_pod,
        }


def finalized_pod_proofs(chain: Chain, da: DAStore) -> dict[int, dict[str, int]]:
    """epoch -> transmitter -> offset of the finalized PoD proof record."""
    out: dict[int, dict[str, int]] = {}
    for b in chain.blocks:
        for off in b.proofs_ref:
            rec = da.peek(off)
            if rec["kind"] == "pod":
                out.setdefault(rec["epoch"], {})[rec["transmitter"]] = off
    return out


def gather_inputs(da: DAStore, chain: Chain, epoch: int, windows_per_epoch: int, finalized: Mapping[int, Mapping[str, int]] | None = None) -> EpochInputs:
    fin = finalized if finalized is not None else finalized_pod_proofs(chain, da)
    alpha = {da.peek(o)["transmitter"]: o for o in da.find("alpha", epoch=epoch)}
    claims = {da.peek(o)["transmitter"]: o for o in da.find("claim", epoch=epoch)}
    prev = {}
    for tx in alpha:
        p_alpha = da.find("alpha", epoch=epoch - 1, transmitter=tx)
        p_proof = fin.get(epoch - 1, {}).get(tx)
        if p_alpha and p_proof is not None:
            prev[tx] = (p_alpha[0], p_proof)
    lo, hi = epoch * windows_per_epoch, (epoch + 1) * windows_per_epoch
    flows = [o for o in da.find("flow") if lo <= da.peek(o)["committed_at"] < hi]
    need = sorted({da.peek(o)["window"] // windows_per_epoch for o in flows})
    flow_pod = sorted(off for e in need for off in fin.get(e, {}).values())
    return EpochInputs(alpha, prev, claims, flows, flow_pod)


# --- leader ---------------------------------------------------------------------


@dataclass
class Proposal:
    leader: str
    epoch: int
    blocks: list[Block]
    inputs: EpochInputs


@dataclass
class EpochContext:
    config: ScenarioConfig
    da: DAStore
    proofs: ProofSystem
    registry: KeyRegistry
    mempool: list[Tx] = field(default_factory=list)

    @property
    def ec(self):
        return self.config.epoch_config


def store_proof(ctx: EpochContext, epoch: int, kind: str, leader: str, time: int, proof: ProofTranscript, output: dict, transmitter: str | None = None) -> int:
    rec = {"type": "proof", "kind": kind, "epoch": epoch, "leader": leader, "time": time, "transcript": proof.to_json(), "output": output}
    if transmitter is not None:
        rec["transmitter"] = transmitter
    return ctx.da.append(rec)


def compute_proofs(ctx: EpochContext, inputs: EpochInputs, epoch: int) -> tuple[dict[str, tuple[ProofTranscript, dict]], tuple[ProofTranscript, dict]]:
    pods = {}
    for tx in sorted(inputs.alpha):
        offs = [inputs.alpha[tx]] + list(inputs.prev.get(tx, ()))
        pods[tx] = ctx.proofs.prove(f"pod/{epoch}/{tx}", "pod", offs, {"epoch": epoch})
    pof = ctx.proofs.prove(f"pof/{epoch}", "pof", inputs.flows + inputs.flow_pod, {"epoch": epoch, "n_flows": len(inputs.flows)})
    return pods, pof


def expected_delta(ctx: EpochContext, inputs: EpochInputs, pod_outputs: Mapping[str, dict], pof_output: dict) -> dict:
    claims = {tx: ctx.da.peek(o)["alpha"] for tx, o in inputs.claims.items()}
    return weight_update(pod_outputs, pof_output, claims, ctx.config)


def leader_epoch(
    ctx: EpochContext,
    leader_id: str,
    chain: Chain,
    epoch: int,
    now: int,
    fault: str | None = None,
    finalized: Mapping[int, Mapping[str, int]] | None = None,
) -> Proposal:
    """Prove, weigh and pack the leader's blocks for ``epoch``.

    ``fault`` makes the leader misbehave: ``tamper_weight``,
    ``tamper_proof``, ``invalid_tx`` or ``late_proof``.
    """
    ec = ctx.ec
    inputs = gather_inputs(ctx.da, chain, epoch, ec.windows_per_epoch, finalized)
    pods, (pof_proof, pof_out) = compute_proofs(ctx, inputs, epoch)
    t_store = now + ec.proof_deadline_blocks + 1 if fault == "late_proof" else now
    refs = []
    for tx, (proof, out) in pods.items():
        if fault == "tamper_proof":
            proof = ProofTranscript(proof.statement_id, proof.fn_id, proof.inputs, proof.input_commitment, bytes(32), proof.replay_seed)
        refs.append(store_proof(ctx, epoch, "pod", leader_id, t_store, proof, out, tx))
    refs.append(store_proof(ctx, epoch, "pof", leader_id, t_store, pof_proof, pof_out))

    delta = expected_delta(ctx, inputs, {tx: out for tx, (_, out) in pods.items()}, pof_out)
    if fault == "tamper_weight":
        pod_part = dict(delta["pod"])
        pod_part[leader_id] = pod_part.get(leader_id, 0.0) + 1000.0
        delta = {"pod": pod_part, "pof": delta["pof"]}

    ident = ctx.registry.get(leader_id)
    mempool = list(ctx.mempool)
    if fault == "invalid_tx":
        mempool.append(Tx(leader_id, 0, 1, 10**9, TxKind.TRANSFER, b"\x00" * 32))
    blocks = []
    nonces = dict(chain.nonces)
    parent, height = chain.tip_hash, chain.height
    for i in range(ec.n_epoch_blocks):
        txs, _ = pack_block(mempool, ctx.registry, nonces, ec.gas_limit, check=fault != "invalid_tx")
        for t in txs:
            mempool.remove(t)
            nonces[t.sender] = t.nonce + 1
        last = i == ec.n_epoch_blocks - 1
        b = Block(height + 1, parent, epoch, leader_id, txs, delta if last else None, refs if last else [])
        b.sign(ident)
        blocks.append(b)
        parent, height = b.hash, b.height
    return Proposal(leader_id, epoch, blocks, inputs)


# --- validator -------------------------------------------------------------------


@dataclass
class Verdict:
    accepted: bool
    reason: ExceptionReason | None = None
    detail: str = ""


def validator_epoch(
    ctx: EpochContext,
    chain: Chain,
    proposal: Proposal | None,
    epoch: int,
    expected_leader: str,
    attempt_start: int,
    finalized: Mapping[int, Mapping[str, int]] | None = None,
) -> Verdict:
    ec = ctx.ec
    if proposal is None:
        return Verdict(False, ExceptionReason.TIMEOUT, "no proposal before the deadline")
    blocks = proposal.blocks
    if len(blocks) != ec.n_epoch_blocks:
        return Verdict(False, ExceptionReason.BAD_PARENT, f"expected {ec.n_epoch_blocks} blocks")

    parent, height = chain.tip_hash, chain.height
    nonces = dict(chain.nonces)
    for i, b in enumerate(blocks):
        if b.height != height + 1 or b.parent_hash != parent or b.epoch != epoch:
            return Verdict(False, ExceptionReason.BAD_PARENT, f"block {b.height}")
        if b.leader != expected_leader or not ctx.registry.verify(expected_leader, b.hash, b.leader_sig):
            return Verdict(False, ExceptionReason.BAD_SIGNATURE, f"block {b.height}")
        if b.gas > ec.gas_limit:
            return Verdict(False, ExceptionReason.GAS, f"block {b.height} uses {b.gas}")
        for t in b.txs:
            why = verify_tx(t, ctx.registry, nonces)
            if why is not None:
                return Verdict(False, ExceptionReason.BAD_TX, f"{t.tx_id}: {why}")
            nonces[t.sender] = t.nonce + 1
        last = i == len(blocks) - 1
        if not last and (b.delta_s is not None or b.proofs_ref):
            return Verdict(False, ExceptionReason.BAD_WEIGHT, "weight update outside the last block")
        parent, height = b.hash, b.height

    refs = blocks[-1].proofs_ref
    if not refs:
        return Verdict(False, ExceptionReason.MISSING_PROOF)
    inputs = gather_inputs(ctx.da, chain, epoch, ec.windows_per_epoch, finalized)
    pod_outputs: dict[str, dict] = {}
    pof_output = None
    for off in refs:
        try:
            rec = ctx.da.peek(off)
        except IndexError:
            return Verdict(False, ExceptionReason.MISSING_PROOF, f"offset {off}")
        if rec.get("type") != "proof" or rec.get("epoch") != epoch:
            return Verdict(False, ExceptionReason.MISSING_PROOF, f"offset {off} is not a proof for epoch {epoch}")
        if rec["time"] > attempt_start + ec.proof_deadline_blocks:
            return Verdict(False, ExceptionReason.LATE_PROOF, f"proof stored at {rec['time']}")
        proof = ProofTranscript.from_json(rec["transcript"])
        params = {"epoch": epoch} if rec["kind"] == "pod" else {"epoch": epoch, "n_flows": len(inputs.flows)}
        if not ctx.proofs.verify(proof, params):
            return Verdict(False, ExceptionReason.BAD_PROOF, proof.statement_id)
        out = ctx.proofs.output(proof, params)
        if rec["kind"] == "pod":
            tx = rec["transmitter"]
            want = [inputs.alpha.get(tx)] + list(inputs.prev.get(tx, ()))
            if list(proof.inputs) != want:
                return Verdict(False, ExceptionReason.BAD_PROOF, f"pod inputs for {tx}")
            pod_outputs[tx] = out
        else:
            if list(proof.inputs) != inputs.flows + inputs.flow_pod:
                return Verdict(False, ExceptionReason.BAD_PROOF, "pof inputs")
            pof_output = out
    if set(pod_outputs) != set(inputs.alpha) or pof_output is None:
        return Verdict(False, ExceptionReason.MISSING_PROOF, "proof set incomplete")

    want = expected_delta(ctx, inputs, pod_outputs, pof_output)
    if not _same_delta(blocks[-1].delta_s, want):
        return Verdict(False, ExceptionReason.BAD_WEIGHT, "weight update does not follow from the proofs")
    return Verdict(True)


def _same_delta(a, b) -> bool:
    if a is None or set(a) != set(b):
        return False
    for part in b:
        if set(a[part]) != set(b[part]):
            return False
        for k, v in b[part].items():
            if not math.isclose(a[part][k], v, rel_tol=0.0, abs_tol=1e-12):
                return False
    return True


def delegation(participants: Sequence[str], validators: Sequence[str]) -> dict[str, str]:
    """Round-robin delegation of scored participants to validators."""
    vs = sorted(validators)
    return {p: vs[i % len(vs)] for i, p in enumerate(sorted(participants))}
