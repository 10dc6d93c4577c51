"""Deterministic node identities.

A signature is an HMAC-SHA256 tag under the node's secret. Verification goes
through a :class:`KeyRegistry`, which plays the role of a public-key
directory in this simulation; swapping in a real signature scheme only
touches this module.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass, field

from .seeds import bytes_for

SIG_BYTES = 32


@dataclass(frozen=True)
class Identity:
    node_id: str
    secret: bytes = field(repr=False)

    def sign(self, message: bytes) -> bytes:
        return hmac.digest(self.secret, self.node_id.encode() + b"\x00" + message, "sha256")


class KeyRegistry:
    def __init__(self):
        self._ids: dict[str, Identity] = {}

    def register(self, ident: Identity) -> Identity:
        self._ids[ident.node_id] = ident
        return ident

    def create(self, seed: int, node_id: str) -> Identity:
        return self.register(Identity(node_id, bytes_for(seed, "identity", node_id)))

    def get(self, node_id: str) -> Identity:
        return self._ids[node_id]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._ids

    def verify(self, node_id: str, message: bytes, signature: bytes) -> bool:
        ident = self._ids.get(node_id)
        if ident is None or len(signature) != SIG_BYTES:
            return False
        return hmac.compare_digest(ident.sign(message), signature)
