"""Transactions, blocks and gas-limited packing."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..identity import Identity, KeyRegistry
from .da import canonical_json

GENESIS_HASH = hashlib.sha256(b"spacenet/genesis").digest()


class TxKind(str, enum.Enum):
    ALPHA = "alpha-submit"
    FLOW = "flow-submit"
    TRANSFER = "transfer"


@dataclass(frozen=True)
class Tx:
    sender: str
    nonce: int
    gas: int
    fee: int
    kind: TxKind
    sig: bytes = b""

    def body(self) -> bytes:
        return canonical_json({"from": self.sender, "nonce": self.nonce, "gas": self.gas, "fee": self.fee, "kind": self.kind.value}).encode()

    @property
    def tx_id(self) -> str:
        return hashlib.sha256(self.body()).hexdigest()[:16]

    def signed(self, ident: Identity) -> "Tx":
        return Tx(self.sender, self.nonce, self.gas, self.fee, self.kind, ident.sign(self.body()))

    def to_json(self) -> dict:
        return {"from": self.sender, "nonce": self.nonce, "gas": self.gas, "fee": self.fee, "kind": self.kind.value, "sig": self.sig.hex()}

    @classmethod
    def from_json(cls, d: dict) -> "Tx":
        return cls(d["from"], d["nonce"], d["gas"], d["fee"], TxKind(d["kind"]), bytes.fromhex(d["sig"]))


def verify_tx(tx: Tx, registry: KeyRegistry, nonces: Mapping[str, int]) -> str | None:
    """None when valid, else a short reason."""
    if tx.gas <= 0:
        return "gas"
    if not registry.verify(tx.sender, tx.body(), tx.sig):
        return "signature"
    if tx.nonce != nonces.get(tx.sender, 0):
        return "nonce"
    return None


def pack_block(mempool: Iterable[Tx], registry: KeyRegistry, nonces: Mapping[str, int], gas_limit: int, check: bool = True) -> tuple[list[Tx], list[Tx]]:
    """Choose txs by fee among those executable next; stop at the first one that does not fit.

    Returns (packed, rejected). With ``check`` off the signature gate is
    skipped, which is how a faulty leader slips bad txs in.
    """
    pool = list(mempool)
    state = dict(nonces)
    packed: list[Tx] = []
    rejected: list[Tx] = []
    gas = 0
    while pool:
        ready = [t for t in pool if t.nonce == state.get(t.sender, 0)]
        if not ready:
            break
        tx = max(ready, key=lambda t: (t.fee, -t.nonce, t.tx_id))
        reason = verify_tx(tx, registry, state) if check else None
        if reason is not None:
            pool.remove(tx)
            rejected.append(tx)
            continue
        if gas + tx.gas > gas_limit:
            break
        pool.remove(tx)
        packed.append(tx)
        gas += tx.gas
        state[tx.sender] = tx.nonce + 1
    # anything left with a stale nonce can never execute
    rejected += [t for t in pool if t.nonce < state.get(t.sender, 0)]
    return packed, rejected


@dataclass
class Block:
    height: int
    parent_hash: bytes
    epoch: int
    leader: str | None
    txs: list[Tx] = field(default_factory=list)
    delta_s: dict | None = None
    proofs_ref: list[int] = field(default_factory=list)
    leader_sig: bytes = b""
    empty: bool = False
    _hash: bytes | None = field(default=None, init=False, repr=False, compare=False)

    def header(self) -> dict:
        return {
            "height": self.height,
            "parent": self.parent_hash.hex(),
            "epoch": self.epoch,
            "leader": self.leader,
            "txs": [t.to_json() for t in self.txs],
            "delta_s": self.delta_s,
            "proofs": list(self.proofs_ref),
            "empty": self.empty,
        }

    @property
    def hash(self) -> bytes:
        # blocks are immutable once built; cache the digest of the header
        if self._hash is None:
            self._hash = hashlib.sha256(canonical_json(self.header()).encode()).digest()
        return self._hash

    @property
    def gas(self) -> int:
        return sum(t.gas for t in self.txs)

    def sign(self, ident: Identity) -> "Block":
        self.leader_sig = ident.sign(self.hash)
        return self

    def to_json(self) -> dict:
        d = self.header()
        d["hash"] = self.hash.hex()
        d["sig"] = self.leader_sig.hex()
        return d


@dataclass
class Chain:
    blocks: list[Block] = field(default_factory=list)
    nonces: dict[str, int] = field(default_factory=dict)

    @property
    def height(self) -> int:
        return len(self.blocks)

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].hash if self.blocks else GENESIS_HASH

    def append(self, block: Block) -> None:
        if block.height != self.height + 1 or block.parent_hash != self.tip_hash:
            raise ValueError(f"block {block.height} does not extend the tip at {self.height}")
        self.blocks.append(block)
        for t in block.txs:
            self.nonces[t.sender] = t.nonce + 1

    def copy(self) -> "Chain":
        return Chain(list(self.blocks), dict(self.nonces))

    def hash_at(self, height: int) -> bytes:
        return GENESIS_HASH if height == 0 else self.blocks[height - 1].hash
