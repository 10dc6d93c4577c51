"""Iterated-hash delay function.

``vdf_eval`` walks ``difficulty`` rounds of SHA-256. Verification re-walks
the chain; when checkpoints are supplied each segment is checked
independently, so a wrong output is caught at the first bad segment. This
is a stand-in for a real VDF: verification costs as much as evaluation.
"""

from __future__ import annotations

import hashlib

CHECKPOINT_EVERY = 64


def _step(h: bytes) -> bytes:
    return hashlib.sha256(h).digest()


def vdf_eval(seed: bytes, difficulty: int) -> bytes:
    if difficulty < 0:
        raise ValueError("difficulty must be >= 0")
    h = seed
    for _ in range(difficulty):
        h = _step(h)
    return h


def vdf_eval_checkpoints(seed: bytes, difficulty: int, every: int = CHECKPOINT_EVERY) -> tuple[bytes, list[bytes]]:
    if difficulty < 0:
        raise ValueError("difficulty must be >= 0")
    h = seed
    cps = []
    for i in range(1, difficulty + 1):
        h = _step(h)
        if i % every == 0:
            cps.append(h)
    return h, cps


def vdf_verify(seed: bytes, difficulty: int, output: bytes, checkpoints: list[bytes] | None = None, every: int = CHECKPOINT_EVERY) -> bool:
    if difficulty < 0:
        return False
    if not checkpoints:
        return vdf_eval(seed, difficulty) == output
    if len(checkpoints) != difficulty // every:
        return False
    prev = seed
    for cp in checkpoints:
        if vdf_eval(prev, every) != cp:
            return False
        prev = cp
    return vdf_eval(prev, difficulty - every * len(checkpoints)) == output
