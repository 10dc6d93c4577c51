"""Flow attestation between a transmitter and a challenger.

Per measurement window both sides build a Merkle tree over their own view of
the packets. The transmitter signs the root, the challenger checks the
signature and that its own tree matches and then counter-signs, and the
transmitter signs the challenger's signature once more. The attestation is
committed a fixed number of windows later, then checked against the PoD
estimate of the challenger's link quality.
"""

from __future__ import annotations

import enum
import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

from scipy.stats import binomtest

from ..identity import Identity, KeyRegistry
from .merkle import MerkleShapeError, MerkleTree, build_merkle, diff_merkle

if TYPE_CHECKING:
    from ..consensus.da import DAStore
    from ..pod.engine import PodReport


class PacketStatus(str, enum.Enum):
    DELIVERED = "Delivered"
    FAILED = "Failed"


@dataclass(frozen=True)
class Packet:
    seq: int
    payload_hash: bytes
    status: PacketStatus = PacketStatus.DELIVERED
    size: int = 0

    @property
    def delivered(self) -> bool:
        return self.status is PacketStatus.DELIVERED

    @classmethod
    def from_payload(cls, seq: int, payload: bytes, delivered: bool = True) -> "Packet":
        status = PacketStatus.DELIVERED if delivered else PacketStatus.FAILED
        return cls(seq, hashlib.sha256(payload).digest(), status, len(payload))


@dataclass
class FlowWindow:
    window_index: int
    transmitter_id: str
    challenger_id: str
    packets: list[Packet]

    def __post_init__(self):
        seqs = sorted(p.seq for p in self.packets)
        if seqs and seqs != list(range(seqs[0], seqs[0] + len(seqs))):
            raise ValueError("packet sequence numbers must be unique and contiguous")

    @property
    def byte_count(self) -> int:
        return sum(p.size for p in self.packets if p.delivered)

    def failed_count(self) -> int:
        return sum(1 for p in self.packets if not p.delivered)

    def omit_failed(self) -> "FlowWindow":
        """The challenger's view with failed packets dropped instead of kept as empty leaves."""
        kept = [p for p in self.packets if p.delivered]
        return FlowWindow(self.window_index, self.transmitter_id, self.challenger_id, [Packet(i, p.payload_hash, p.status, p.size) for i, p in enumerate(kept)])


def _msg(stage: bytes, window: int, body: bytes) -> bytes:
    return b"spacenet/pof/" + stage + window.to_bytes(8, "big") + body


@dataclass
class AttestedFlow:
    window_index: int
    transmitter_id: str
    challenger_id: str
    root: bytes
    sig_chain: tuple[bytes, bytes, bytes]
    byte_count: int
    packet_count: int
    failed_count: int
    committed_at: int | None = None

    def to_record(self) -> dict:
        return {
            "type": "flow",
            "window": self.window_index,
            "transmitter": self.transmitter_id,
            "challenger": self.challenger_id,
            "root": self.root.hex(),
            "sigs": [s.hex() for s in self.sig_chain],
            "bytes": self.byte_count,
            "packets": self.packet_count,
            "failed": self.failed_count,
            "committed_at": self.committed_at,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AttestedFlow":
        return cls(
            rec["window"],
            rec["transmitter"],
            rec["challenger"],
            bytes.fromhex(rec["root"]),
            tuple(bytes.fromhex(s) for s in rec["sigs"]),
            rec["bytes"],
            rec["packets"],
            rec["failed"],
            rec.get("committed_at"),
        )


class DropReason(str, enum.Enum):
    SIG_FAIL = "SigFail"
    TREE_MISMATCH = "TreeMismatch"


@dataclass
class Rejection:
    reason: DropReason
    at: str
    diff: list[int] = field(default_factory=list)

    def __bool__(self) -> bool:
        return False


def _leaf_diff(a: MerkleTree, b: MerkleTree) -> list[int]:
    try:
        return diff_merkle(a, b)[0]
    except MerkleShapeError:
        # an omitted packet shifts every later leaf; report from the first mismatch on
        n = max(len(a), len(b))
        return [i for i in range(n) if i >= min(len(a), len(b)) or a.leaves[i] != b.leaves[i]]


def verify_chain(att: AttestedFlow, registry: KeyRegistry) -> bool:
    s1, sc, s2 = att.sig_chain
    w = att.window_index
    return (
        registry.verify(att.transmitter_id, _msg(b"root", w, att.root), s1)
        and registry.verify(att.challenger_id, _msg(b"counter", w, s1), sc)
        and registry.verify(att.transmitter_id, _msg(b"final", w, sc), s2)
    )


def two_handshake(
    transmitter: Identity,
    challenger: Identity,
    t_view: FlowWindow,
    c_view: FlowWindow,
    registry: KeyRegistry,
) -> AttestedFlow | Rejection:
    """Run the sign / counter-sign / re-sign exchange over one window.

    ``transmitter`` and ``challenger`` sign with their own secrets; each
    side checks the other against ``registry``, so an identity whose secret
    does not match its registered one produces a SigFail.
    """
    w = t_view.window_index
    t_tree = build_merkle(t_view.packets)
    sig_t1 = transmitter.sign(_msg(b"root", w, t_tree.root))

    # challenger side
    if not registry.verify(t_view.transmitter_id, _msg(b"root", w, t_tree.root), sig_t1):
        return Rejection(DropReason.SIG_FAIL, at=c_view.challenger_id)
    c_tree = build_merkle(c_view.packets)
    if c_tree.root != t_tree.root:
        return Rejection(DropReason.TREE_MISMATCH, at=c_view.challenger_id, diff=_leaf_diff(t_tree, c_tree))
    sig_c = challenger.sign(_msg(b"counter", w, sig_t1))

    # transmitter side
    if not registry.verify(t_view.challenger_id, _msg(b"counter", w, sig_t1), sig_c):
        return Rejection(DropReason.SIG_FAIL, at=t_view.transmitter_id)
    sig_t2 = transmitter.sign(_msg(b"final", w, sig_c))
    return AttestedFlow(
        w,
        t_view.transmitter_id,
        t_view.challenger_id,
        t_tree.root,
        (sig_t1, sig_c, sig_t2),
        c_view.byte_count,
        len(c_view.packets),
        c_view.failed_count(),
    )


def schedule_commit(attested: AttestedFlow, current_window: int, delay_d: int = 2) -> bool:
    """True when the attestation may be submitted at ``current_window``."""
    if delay_d < 1:
        raise ValueError("commit delay must be >= 1")
    return current_window >= attested.window_index + delay_d


class CommitQueue:
    """Holds attestations until their delay has elapsed; releases in window order."""

    def __init__(self, delay_d: int = 2):
        if delay_d < 1:
            raise ValueError("commit delay must be >= 1")
        self.delay_d = delay_d
        self._q: deque[AttestedFlow] = deque()

    def __len__(self) -> int:
        return len(self._q)

    def push(self, att: AttestedFlow) -> None:
        if self._q and att.window_index < self._q[-1].window_index:
            raise ValueError("attestations must be queued in window order")
        self._q.append(att)

    def release(self, current_window: int, da: "DAStore | None" = None) -> list[AttestedFlow]:
        out = []
        while self._q and schedule_commit(self._q[0], current_window, self.delay_d):
            att = self._q.popleft()
            att.committed_at = current_window
            if da is not None:
                da.append(att.to_record())
            out.append(att)
        return out


# --- consistency with PoD ------------------------------------------------------


def implied_failure_rate(signal_dbm: float, sensitivity_dbm: float, scale_db: float) -> float:
    z = (sensitivity_dbm - signal_dbm) / scale_db
    # numerically stable logistic
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


class FlowReason(str, enum.Enum):
    OK = "Accepted"
    SIG_FAIL = "SigFail"
    NO_POD_CONTEXT = "NoPodContext"
    INCONSISTENT = "Inconsistent"


@dataclass
class FlowVerdict:
    accepted: bool
    reason: FlowReason
    failed_fraction: float = 0.0
    implied_rate: float | None = None
    p_value: float | None = None

    def __bool__(self) -> bool:
        return self.accepted


def verify_flow(
    attested: AttestedFlow,
    pod_report: "PodReport | None",
    registry: KeyRegistry,
    *,
    sensitivity_dbm: float = -90.0,
    failure_scale_db: float = 2.0,
    confidence: float = 0.999,
) -> FlowVerdict:
    """Accept when the chain verifies and the failed-leaf share is binomially
    plausible under the failure rate implied by PoD's signal estimate."""
    if not verify_chain(attested, registry):
        return FlowVerdict(False, FlowReason.SIG_FAIL)
    if pod_report is None or pod_report.transmitter_id != attested.transmitter_id:
        return FlowVerdict(False, FlowReason.NO_POD_CONTEXT)
    res = pod_report.per_receiver.get(attested.challenger_id)
    alpha = res.alpha_hat if res is not None else pod_report.consensus_alpha
    if "signal_dbm" not in alpha:
        return FlowVerdict(False, FlowReason.NO_POD_CONTEXT)
    n, k = attested.packet_count, attested.failed_count
    frac = k / n if n else 0.0
    p = implied_failure_rate(alpha["signal_dbm"], sensitivity_dbm, failure_scale_db)
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    if n == 0:
        return FlowVerdict(True, FlowReason.OK, frac, p, 1.0)
    if k == min(math.floor((n + 1) * p), n):
        # the mode is the most likely outcome, so the two-sided p-value is exactly 1
        pval = 1.0
    else:
        pval = float(binomtest(k, n, p, alternative="two-sided").pvalue)
    ok = pval >= 1.0 - confidence
    return FlowVerdict(ok, FlowReason.OK if ok else FlowReason.INCONSISTENT, frac, p, pval)


def window_views(
    window_index: int,
    transmitter_id: str,
    challenger_id: str,
    payloads: Sequence[bytes],
    delivered: Iterable[bool],
) -> FlowWindow:
    packets = [Packet.from_payload(i, pl, d) for i, (pl, d) in enumerate(zip(payloads, delivered))]
    return FlowWindow(window_index, transmitter_id, challenger_id, packets)
