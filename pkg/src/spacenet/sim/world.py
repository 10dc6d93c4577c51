"""The simulated network outside consensus: receivers measuring, flows being
attested, satellites meshing and users submitting transactions."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

from .. import pom
from ..config import FraudKind, ScenarioConfig
from ..consensus.bus import MessageBus
from ..consensus.chain import Chain, Tx, TxKind, verify_tx
from ..consensus.da import DAStore
from ..identity import KeyRegistry
from ..pof.flow import CommitQueue, FlowWindow, Packet, PacketStatus, Rejection, implied_failure_rate, two_handshake
from ..seeds import rng_for
from ..signal import Label, Layout, StateSample, build_layout, generate_field, transmitter_claim

N_USERS = 8


def validator_id(i: int) -> str:
    return f"V{i:02d}"


def user_id(i: int) -> str:
    return f"U{i}"


@dataclass
class EpochMeasurement:
    samples: list[StateSample]
    labels: dict[str, Label]
    flow_rejections: Counter = field(default_factory=Counter)
    flows_committed: int = 0
    mesh: dict[str, str] = field(default_factory=dict)


class World:
    def __init__(self, config: ScenarioConfig, da: DAStore, registry: KeyRegistry):
        self.config = config
        self.da = da
        self.registry = registry
        self.layout: Layout = build_layout(config)
        self.commits = CommitQueue(config.epoch_config.commit_delay)
        self.mempool: list[Tx] = []
        self._next_nonce = {user_id(i): 0 for i in range(N_USERS)}
        seed = config.seed
        for sat in self.layout.satellites:
            registry.create(seed, sat)
        for rid in self.layout.receivers:
            registry.create(seed, rid)
        for i in range(N_USERS):
            registry.create(seed, user_id(i))
        self.claims = {sat: transmitter_claim(config, self.layout, sat) for sat in self.layout.satellites}

    # -- behaviour of the parties -------------------------------------------

    def not_delivering(self, epoch: int) -> set[str]:
        return {
            f"S{f.transmitter}"
            for f in self.config.fraud_spec
            if f.kind in (FraudKind.TFRAUD, FraudKind.CORPORATE) and f.active(epoch) and f.transmitter is not None
        }

    def _colluders(self, epoch: int) -> set[str]:
        injections = self.config.fraud_spec
        return {r for r, i in self.layout.roles.items() if injections[i].kind == FraudKind.CORPORATE and injections[i].active(epoch)}

    # -- one epoch of measurement ---------------------------------------------

    def measure(self, epoch: int, block_hash: bytes, bus: MessageBus) -> EpochMeasurement:
        cfg = self.config
        samples = generate_field(cfg, epoch * cfg.geometry.epoch_seconds, self.layout)
        by_tx: dict[str, list[StateSample]] = {}
        for s in samples:
            by_tx.setdefault(s.transmitter_id, []).append(s)
        for sat in sorted(self.layout.satellites):
            group = by_tx.get(sat, [])
            self.da.append({"type": "alpha", "epoch": epoch, "transmitter": sat, "samples": [s.public() for s in group]})
            self.da.append({"type": "claim", "epoch": epoch, "transmitter": sat, "alpha": self.claims[sat]})
        m = EpochMeasurement(samples, {s.receiver_id: s.honesty_label for s in samples})

        wpe = cfg.epoch_config.windows_per_epoch
        for j in range(wpe):
            w = epoch * wpe + j
            self._flows(epoch, w, samples, m)
            m.flows_committed += len(self.commits.release(w, self.da))
        m.mesh = self._mesh(epoch, block_hash, bus)
        self._new_txs(epoch)
        return m

    def _flows(self, epoch: int, window: int, samples: list[StateSample], m: EpochMeasurement) -> None:
        cfg = self.config
        n_pk, size = cfg.flow.packets_per_window, cfg.flow.packet_bytes
        u = rng_for(cfg.seed, "flow", epoch, window).random((len(samples), n_pk))
        dark = self.not_delivering(epoch)
        colluders = self._colluders(epoch)
        for i, s in enumerate(samples):
            tx, rx = s.transmitter_id, s.receiver_id
            p_fail = implied_failure_rate(s.actual_signal_dbm, cfg.link.sensitivity_dbm, cfg.link.failure_scale_db)
            actual = [False] * n_pk if tx in dark else list(u[i] >= p_fail)
            claimed = [True] * n_pk if tx in dark else actual
            seen = claimed if rx in colluders else actual
            hashes = [hashlib.sha256(f"{tx}/{rx}/{window}/{q}".encode()).digest() for q in range(n_pk)]
            t_view = FlowWindow(window, tx, rx, [Packet(q, h, _status(d), size) for q, (h, d) in enumerate(zip(hashes, claimed))])
            c_view = FlowWindow(window, tx, rx, [Packet(q, h, _status(d), size) for q, (h, d) in enumerate(zip(hashes, seen))])
            res = two_handshake(self.registry.get(tx), self.registry.get(rx), t_view, c_view, self.registry)
            if isinstance(res, Rejection):
                m.flow_rejections[res.reason.value] += 1
            else:
                self.commits.push(res)

    def _mesh(self, epoch: int, block_hash: bytes, bus: MessageBus) -> dict[str, str]:
        cfg = self.config
        out = {}
        for sat in sorted(self.layout.satellites):
            parties = [sat, f"{sat}/peer", f"{sat}/ground"]
            rng = rng_for(cfg.seed, "pom", sat, epoch)
            shares = [pom.keygen(rng, p) for p in parties]
            session = pom.run_key_exchange(shares, rng, bus=MessageBus())
            k = session.shared_key
            try:
                proof = pom.mesh_handshake(sat, parties[1], k[sat], block_hash, counterpart_key=k[parties[1]], rng=rng)
            except pom.ProtocolError as err:
                out[sat] = type(err).__name__
                continue
            pom.verifier_vote(proof, parties[2], k[parties[2]])
            status = pom.announce_mesh(proof, parties, self.da, key=k[sat], epoch=epoch, quorum=cfg.consensus.mesh_quorum)
            out[sat] = status.value
        return out

    def _new_txs(self, epoch: int) -> None:
        cfg = self.config.consensus
        rng = rng_for(self.config.seed, "mempool", epoch)
        kinds = list(TxKind)
        for _ in range(cfg.txs_per_epoch):
            u = user_id(int(rng.integers(N_USERS)))
            tx = Tx(u, self._next_nonce[u], int(rng.integers(10, 61)), int(rng.integers(1, 100)), kinds[int(rng.integers(len(kinds)))])
            if rng.random() < cfg.invalid_tx_fraction:
                tx = Tx(tx.sender, tx.nonce, tx.gas, tx.fee, tx.kind, bytes(32))
            else:
                tx = tx.signed(self.registry.get(u))
                self._next_nonce[u] += 1
            self.mempool.append(tx)

    def prune_mempool(self, chain: Chain) -> None:
        """Drop included, stale and badly signed transactions."""
        self.mempool = [
            t
            for t in self.mempool
            if t.nonce >= chain.nonces.get(t.sender, 0) and verify_tx(t, self.registry, {t.sender: t.nonce}) is None
        ]


def _status(delivered) -> PacketStatus:
    return PacketStatus.DELIVERED if delivered else PacketStatus.FAILED

