"""Weighted leader election and the FIFO leader queue."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .vdf import vdf_eval

WEIGHT_SCALE = 1_000_000


class ElectionError(Exception):
    pass


def election_seed(vdf_output: bytes, block_hash: bytes, round_: int = 0) -> int:
    tag = b"" if round_ == 0 else b"round" + round_.to_bytes(4, "big")
    return int.from_bytes(hashlib.sha256(vdf_output + block_hash + tag).digest(), "big")


def elect_leader(weights: Mapping[str, float], vdf_output: bytes, block_hash: bytes, round_: int = 0, exclude: Iterable[str] = ()) -> str:
    """Pick a node with probability proportional to its weight.

    Weights are scaled to integers so the draw is exact; nodes are taken in
    sorted id order.
    """
    skip = set(exclude)
    ids = sorted(n for n in weights if n not in skip)
    ints = [max(0, round(weights[n] * WEIGHT_SCALE)) for n in ids]
    total = sum(ints)
    if total <= 0:
        raise ElectionError(f"no electable validator: all weights are zero among {ids}")
    r = election_seed(vdf_output, block_hash, round_) % total
    acc = 0
    for n, w in zip(ids, ints):
        acc += w
        if r < acc:
            return n
    raise AssertionError("unreachable")


@dataclass
class QueueEntry:
    epoch: int
    leader: str
    seed_epoch: int
    seed_hash: str
    weights: dict[str, float] = field(repr=False, default_factory=dict)
    round: int = 0

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "leader": self.leader, "seed_epoch": self.seed_epoch, "seed_hash": self.seed_hash, "round": self.round}


class LeaderQueue:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = capacity
        self.entries: list[QueueEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def head(self) -> QueueEntry | None:
        return self.entries[0] if self.entries else None

    def push(self, entry: QueueEntry) -> None:
        if len(self.entries) >= self.capacity:
            raise ValueError("leader queue is full")
        if self.entries and entry.epoch <= self.entries[-1].epoch:
            raise ValueError("queue epochs must strictly increase")
        self.entries.append(entry)

    def pop(self) -> QueueEntry:
        return self.entries.pop(0)

    def snapshot(self) -> list[tuple[int, str]]:
        return [(e.epoch, e.leader) for e in self.entries]


def _elect_entry(epoch: int, weights: Mapping[str, float], seed_epoch: int, seed_hash: bytes, difficulty: int, round_: int = 0, exclude=()) -> QueueEntry:
    out = vdf_eval(seed_hash, difficulty)
    leader = elect_leader(weights, out, seed_hash, round_, exclude)
    return QueueEntry(epoch, leader, seed_epoch, seed_hash.hex(), dict(weights), round_)


def refill_queue(queue: LeaderQueue, weights: Mapping[str, float], block_hash: bytes, seed_epoch: int, difficulty: int, consume: bool = True) -> LeaderQueue:
    """Pop the consumed head (if asked) and elect leaders until the queue is full.

    New entries continue from the last queued epoch (or from 0 on a fresh
    queue) and are all seeded by ``block_hash``, the hash of the block that
    finished ``seed_epoch``.
    """
    if consume and queue.entries:
        queue.pop()
    while len(queue) < queue.capacity:
        nxt = queue.entries[-1].epoch + 1 if queue.entries else seed_epoch + 1
        queue.push(_elect_entry(nxt, weights, seed_epoch, block_hash, difficulty))
    return queue


def replace_head(queue: LeaderQueue, skipped: Iterable[str], difficulty: int) -> QueueEntry:
    """Re-elect the head's slot after a skip, from the same seed and weight
    snapshot, excluding leaders already skipped in this epoch."""
    head = queue.head
    if head is None:
        raise ElectionError("empty leader queue")
    entry = _elect_entry(head.epoch, head.weights, head.seed_epoch, bytes.fromhex(head.seed_hash), difficulty, head.round + 1, skipped)
    queue.entries[0] = entry
    return entry
