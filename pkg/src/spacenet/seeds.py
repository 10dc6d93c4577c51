"""Seed-derivation tree.

Each subsystem draws from its own stream, keyed by a path below the scenario
seed, e.g. ``rng_for(seed, "field", "epoch", 3)``. A stream depends only on
(seed, path), so adding a new consumer never shifts anyone else's draws.

Paths used by the simulator::

    geometry/<satellite>          receiver placement
    field/static                  per-receiver spatial offsets
    field/epoch/<e>               temporal noise and fading draws
    fraud/<i>                     fraud target selection
    flow/<e>/<window>             packet delivery draws
    identity/<node>               node MAC secrets
    pom/<satellite>/<party>       mesh key shares
    mempool/<e>                   transaction generation
    faults/<e>                    random crash draws
    bus/<e>                       message delays
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *path: object) -> int:
    h = hashlib.sha256(seed.to_bytes(8, "big"))
    for part in path:
        h.update(b"/" + str(part).encode())
    return int.from_bytes(h.digest()[:8], "big")


def rng_for(seed: int, *path: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *path))


def bytes_for(seed: int, *path: object, n: int = 32) -> bytes:
    out = b""
    counter = 0
    while len(out) < n:
        out += hashlib.sha256(derive_seed(seed, *path, counter).to_bytes(8, "big") + b"bytes").digest()
        counter += 1
    return out[:n]
