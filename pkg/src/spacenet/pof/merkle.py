"""Merkle trees over packet windows.

Leaves are ``sha256(0x00 | payload_hash)``; an undelivered packet becomes the
empty-marker leaf ``sha256(0x00 | b"EMPTY")``. Internal nodes are
``sha256(0x01 | left | right)``. A level of odd width duplicates its last
node. A single-leaf tree has that leaf as its root. A window with no packets
at all gets its own sentinel leaf, so it can never share a root with a
window whose packets all failed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from operator import attrgetter
from typing import Sequence

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
EMPTY_LEAF = hashlib.sha256(LEAF_PREFIX + b"EMPTY").digest()
EMPTY_WINDOW = hashlib.sha256(b"\x02EMPTY-WINDOW").digest()


class MerkleShapeError(ValueError):
    pass


def leaf_hash(payload_hash: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + payload_hash).digest()


def node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


@dataclass(frozen=True)
class MerkleTree:
    # levels[0] are the leaves, levels[-1] == [root]
    levels: tuple[tuple[bytes, ...], ...]

    @property
    def leaves(self) -> tuple[bytes, ...]:
        return self.levels[0]

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    @property
    def nodes(self) -> tuple[bytes, ...]:
        return tuple(h for lvl in self.levels[1:] for h in lvl)

    def __len__(self) -> int:
        return len(self.levels[0])


def tree_from_leaves(leaves: Sequence[bytes]) -> MerkleTree:
    if not leaves:
        leaves = [EMPTY_WINDOW]
    sha = hashlib.sha256
    levels = [tuple(leaves)]
    while len(levels[-1]) > 1:
        cur = levels[-1]
        if len(cur) % 2:
            cur = cur + (cur[-1],)
        # inlined node_hash; this loop dominates flow attestation cost
        levels.append(tuple([sha(NODE_PREFIX + cur[i] + cur[i + 1]).digest() for i in range(0, len(cur), 2)]))
    return MerkleTree(tuple(levels))


def build_merkle(packets) -> MerkleTree:
    """Tree over packets in sequence order; failed packets use the empty leaf."""
    sha = hashlib.sha256
    leaves = [
        sha(LEAF_PREFIX + p.payload_hash).digest() if p.delivered else EMPTY_LEAF
        for p in sorted(packets, key=attrgetter("seq"))
    ]
    return tree_from_leaves(leaves)


def diff_merkle(a: MerkleTree, b: MerkleTree) -> tuple[list[int], int]:
    """Differing leaf indices and the number of node comparisons made.

    Descends only below differing parents. Comparing a node pair counts
    once; both children of a differing parent are compared.
    """
    if len(a) != len(b) or len(a.levels) != len(b.levels):
        raise MerkleShapeError(f"trees differ in shape: {len(a)} vs {len(b)} leaves")
    top = len(a.levels) - 1
    compared = 1
    if a.root == b.root:
        return [], compared
    frontier = [0]
    for depth in range(top, 0, -1):
        width = len(a.levels[depth - 1])
        nxt = []
        for i in frontier:
            for c in (2 * i, 2 * i + 1):
                if c >= width:
                    # duplicated odd node; its twin was already compared
                    continue
                compared += 1
                if a.levels[depth - 1][c] != b.levels[depth - 1][c]:
                    nxt.append(c)
        frontier = nxt
    return frontier, compared
