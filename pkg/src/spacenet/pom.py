"""Proof of mesh: shared-key agreement among a satellite, its constellation
peer and a ground station, then a keyed handshake bound to a block hash.

Key agreement is simulated. Each party draws a noise share ``e`` and sends
it to every other party encrypted under the recipient's X25519 key
(ephemeral-static ECDH, HKDF, ChaCha20-Poly1305). Everyone then hashes the
sorted multiset of shares to the combined digest ``H`` and derives
``K = HKDF(H)``. Any backend exposing ``combine`` and ``derive`` can replace
:class:`DigestAgreement`.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import hmac
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .consensus.bus import MessageBus
from .consensus.da import DAStore

SHARE_BYTES = 32
KEY_BYTES = 32
_RAW = serialization.Encoding.Raw


class ProtocolError(Exception):
    pass


class ShareDecryptionError(ProtocolError):
    """Ciphertext failed authentication (wrong key or tampered bytes)."""


class HandshakeRejected(ProtocolError):
    pass


class HandshakeTimeout(ProtocolError):
    pass


def _hkdf(material: bytes, info: bytes, length: int = KEY_BYTES) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=None, info=info).derive(material)


def _draw(rng: np.random.Generator | None, n: int) -> bytes:
    return os.urandom(n) if rng is None else rng.bytes(n)


@dataclass
class KeyShare:
    party_id: str
    public_key: bytes
    secret_key: bytes = field(repr=False)
    noise_e: bytes = field(repr=False)

    def public(self) -> dict:
        return {"party": self.party_id, "pk": self.public_key.hex()}


def keygen(rng: np.random.Generator, party_id: str = "") -> KeyShare:
    sk = X25519PrivateKey.from_private_bytes(rng.bytes(32))
    pk = sk.public_key().public_bytes(_RAW, serialization.PublicFormat.Raw)
    sk_raw = sk.private_bytes(_RAW, serialization.PrivateFormat.Raw, serialization.NoEncryption())
    return KeyShare(party_id, pk, sk_raw, rng.bytes(SHARE_BYTES))


def encrypt_share(share: bytes, pk: bytes, rng: np.random.Generator | None = None) -> bytes:
    """Randomized authenticated encryption of ``share`` to the holder of ``pk``.

    Layout: ephemeral public key (32) | nonce (12) | ciphertext+tag.
    """
    eph = X25519PrivateKey.from_private_bytes(_draw(rng, 32))
    eph_pub = eph.public_key().public_bytes(_RAW, serialization.PublicFormat.Raw)
    key = _hkdf(eph.exchange(X25519PublicKey.from_public_bytes(pk)), b"spacenet/pom/share" + eph_pub + pk)
    nonce = _draw(rng, 12)
    return eph_pub + nonce + ChaCha20Poly1305(key).encrypt(nonce, share, eph_pub)


@functools.lru_cache(maxsize=256)
def _load_private(sk: bytes) -> tuple[X25519PrivateKey, bytes]:
    # a party decrypts one share per peer under the same key; parse it once
    priv = X25519PrivateKey.from_private_bytes(sk)
    return priv, priv.public_key().public_bytes(_RAW, serialization.PublicFormat.Raw)


def decrypt(ciphertext: bytes, sk: bytes) -> bytes:
    if len(ciphertext) < 32 + 12 + 16:
        raise ShareDecryptionError("ciphertext too short")
    eph_pub, nonce, body = ciphertext[:32], ciphertext[32:44], ciphertext[44:]
    priv, pk = _load_private(bytes(sk))
    key = _hkdf(priv.exchange(X25519PublicKey.from_public_bytes(eph_pub)), b"spacenet/pom/share" + eph_pub + pk)
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, body, eph_pub)
    except InvalidTag:
        raise ShareDecryptionError("share failed authentication") from None


def combine_digest(shares: Sequence[bytes]) -> bytes:
    """Order-independent hash of the share multiset."""
    if len(shares) < 2:
        raise ProtocolError(f"need at least 2 shares, got {len(shares)}")
    h = hashlib.sha256(b"spacenet/pom/combine")
    for s in sorted(bytes(x) for x in shares):
        h.update(len(s).to_bytes(4, "big") + s)
    return h.digest()


def derive_key(digest: bytes, sk: bytes | None = None) -> bytes:
    # sk is accepted for interface parity with a real threshold-decryption
    # backend; the simulated agreement derives K from H alone
    if len(digest) != 32:
        raise ProtocolError("combined digest must be 32 bytes")
    return _hkdf(digest, b"spacenet/pom/key")


class DigestAgreement:
    """Default key-agreement backend."""

    name = "digest-hkdf"

    def combine(self, shares: Sequence[bytes]) -> bytes:
        return combine_digest(shares)

    def derive(self, digest: bytes, sk: bytes) -> bytes:
        return derive_key(digest, sk)


@dataclass
class TranscriptEntry:
    kind: str
    sender: str
    recipient: str
    time: int
    body: dict

    def to_bytes(self) -> bytes:
        parts = [self.kind, self.sender, self.recipient, str(self.time)]
        parts += [f"{k}={v}" for k, v in sorted(self.body.items())]
        return "|".join(parts).encode()


@dataclass
class MeshSession:
    participants: list[str]
    public_keys: dict[str, bytes]
    # recipient -> sender -> ciphertext
    ciphertexts: dict[str, dict[str, bytes]]
    combined_digest: dict[str, bytes] = field(repr=False, default_factory=dict)
    shared_key: dict[str, bytes] = field(repr=False, default_factory=dict)
    transcript: list[TranscriptEntry] = field(default_factory=list)

    def transcript_bytes(self) -> bytes:
        return b"\n".join(e.to_bytes() for e in self.transcript)

    def agreed(self) -> bool:
        keys = set(self.shared_key.values())
        return len(keys) == 1 and len(self.shared_key) == len(self.participants)


def run_key_exchange(
    shares: Sequence[KeyShare],
    rng: np.random.Generator | None = None,
    backend: DigestAgreement | None = None,
    bus: MessageBus | None = None,
) -> MeshSession:
    """Every party sends its encrypted share to every other party, then derives K."""
    backend = backend or DigestAgreement()
    ids = [s.party_id for s in shares]
    if len(set(ids)) != len(ids):
        raise ProtocolError("duplicate party ids")
    if len(shares) < 2:
        raise ProtocolError("mesh needs at least 2 parties")
    bus = bus or MessageBus()
    by_id = {s.party_id: s for s in shares}
    session = MeshSession(ids, {s.party_id: s.public_key for s in shares}, {p: {} for p in ids})

    for s in shares:
        for p in ids:
            if p != s.party_id:
                bus.send(s.party_id, p, "pk", s.public_key.hex(), delay=0)
                session.transcript.append(TranscriptEntry("pk", s.party_id, p, bus.now, {"pk": s.public_key.hex()}))
    for s in shares:
        for p in ids:
            if p == s.party_id:
                continue
            ct = encrypt_share(s.noise_e, by_id[p].public_key, rng)
            bus.send(s.party_id, p, "share", ct, delay=1)
            session.transcript.append(TranscriptEntry("share", s.party_id, p, bus.now, {"ct": ct.hex()}))
    for m in bus.deliver_until(bus.now + 1):
        if m.kind == "share":
            session.ciphertexts[m.recipient][m.sender] = m.payload

    for p in ids:
        received = session.ciphertexts[p]
        missing = [q for q in ids if q != p and q not in received]
        if missing:
            raise ProtocolError(f"{p} is missing shares from {missing}")
        plain = [by_id[p].noise_e] + [decrypt(received[q], by_id[p].secret_key) for q in sorted(received)]
        digest = backend.combine(plain)
        session.combined_digest[p] = digest
        session.shared_key[p] = backend.derive(digest, by_id[p].secret_key)
    return session


# --- handshake ---------------------------------------------------------------


@dataclass
class MeshProof:
    satellite_id: str
    counterpart_id: str
    block_hash: bytes
    nonce: bytes
    ack_tag: bytes
    verifier_votes: set[str] = field(default_factory=set)

    def to_json(self) -> dict:
        return {
            "satellite": self.satellite_id,
            "counterpart": self.counterpart_id,
            "block_hash": self.block_hash.hex(),
            "nonce": self.nonce.hex(),
            "ack_tag": self.ack_tag.hex(),
            "votes": sorted(self.verifier_votes),
        }


def ack_tag(key: bytes, nonce: bytes, block_hash: bytes) -> bytes:
    return hmac.new(key, b"ACK" + nonce + block_hash, hashlib.sha256).digest()


def verify_mesh_proof(proof: MeshProof, key: bytes, block_hash: bytes | None = None) -> bool:
    bh = proof.block_hash if block_hash is None else block_hash
    if bh != proof.block_hash:
        return False
    return hmac.compare_digest(proof.ack_tag, ack_tag(key, proof.nonce, bh))


def mesh_handshake(
    satellite: str,
    counterpart: str,
    key: bytes,
    block_hash: bytes,
    *,
    counterpart_key: bytes | None = None,
    bus: MessageBus | None = None,
    rng: np.random.Generator | None = None,
    timeout: int = 3,
    max_retries: int = 2,
    replay_tag: bytes | None = None,
    transcript: list[TranscriptEntry] | None = None,
) -> MeshProof:
    """SYN, SYN-ACK, then an ACK tagged under K over the block hash.

    The counterpart holds ``counterpart_key`` (defaults to ``key``) and
    checks the tag. ``replay_tag`` makes the satellite send a stale tag
    instead of computing one, for replay experiments.
    """
    if len(block_hash) != 32:
        raise ProtocolError("block hash must be 32 bytes")
    bus = bus or MessageBus()
    ckey = key if counterpart_key is None else counterpart_key
    log = transcript if transcript is not None else []

    for attempt in range(max_retries + 1):
        syn_nonce = _draw(rng, 16)
        bus.send(satellite, counterpart, "SYN", syn_nonce, delay=1)
        log.append(TranscriptEntry("SYN", satellite, counterpart, bus.now, {"n": syn_nonce.hex(), "try": attempt}))
        syn = bus.receive(counterpart, "SYN", until=bus.now + timeout)
        if syn is None:
            continue
        reply_nonce = _draw(rng, 16)
        bus.send(counterpart, satellite, "SYN-ACK", syn.payload + reply_nonce, delay=1)
        log.append(TranscriptEntry("SYN-ACK", counterpart, satellite, bus.now, {"n": reply_nonce.hex()}))
        synack = bus.receive(satellite, "SYN-ACK", until=syn.deliver_at + timeout)
        if synack is None or synack.payload[:16] != syn_nonce:
            continue
        nonce = synack.payload
        tag = replay_tag if replay_tag is not None else ack_tag(key, nonce, block_hash)
        bus.send(satellite, counterpart, "ACK", (block_hash, tag), delay=1)
        log.append(TranscriptEntry("ACK", satellite, counterpart, bus.now, {"bh": block_hash.hex(), "tag": tag.hex()}))
        ack = bus.receive(counterpart, "ACK", until=bus.now + timeout)
        if ack is None:
            continue
        got_bh, got_tag = ack.payload
        proof = MeshProof(satellite, counterpart, got_bh, nonce, got_tag)
        if not verify_mesh_proof(proof, ckey, block_hash):
            raise HandshakeRejected(f"ACK tag from {satellite} does not verify")
        proof.verifier_votes.add(counterpart)
        return proof
    raise HandshakeTimeout(f"no completed handshake with {counterpart} after {max_retries + 1} attempts")


class AnnounceStatus(str, enum.Enum):
    RECORDED = "Recorded"
    DUPLICATE = "Duplicate"
    PENDING = "Pending"
    REJECTED = "Rejected"


def announce_mesh(
    proof: MeshProof,
    participants: Sequence[str],
    da: DAStore,
    *,
    key: bytes,
    epoch: int,
    quorum: int = 2,
) -> AnnounceStatus:
    """Record on the DA log that a satellite is meshed.

    The proof must verify under ``key`` and carry votes from at least
    ``quorum`` known participants; fewer votes leave it pending.
    """
    if not verify_mesh_proof(proof, key):
        return AnnounceStatus.REJECTED
    votes = {v for v in proof.verifier_votes if v in participants}
    if len(votes) < quorum:
        return AnnounceStatus.PENDING
    bh = proof.block_hash.hex()
    if da.find("mesh", satellite=proof.satellite_id, block_hash=bh):
        return AnnounceStatus.DUPLICATE
    da.append({"type": "mesh", "satellite": proof.satellite_id, "block_hash": bh, "epoch": epoch, "votes": sorted(votes)})
    return AnnounceStatus.RECORDED


def verifier_vote(proof: MeshProof, voter: str, key: bytes) -> bool:
    """A further participant checks the tag and, if it verifies, adds its vote."""
    if verify_mesh_proof(proof, key):
        proof.verifier_votes.add(voter)
        return True
    return False
