"""Logical-time message bus.

Messages are delivered in (delivery_time, send_sequence) order, so a run is
fully determined by the order of ``send`` calls and their delays.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any


@dataclass(order=True)
class Message:
    deliver_at: int
    seq: int
    sender: str = field(compare=False)
    recipient: str = field(compare=False)
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)
    sent_at: int = field(compare=False, default=0)


class MessageBus:
    def __init__(self):
        self.now = 0
        self._queue: list[Message] = []
        self._seq = 0
        self.log: list[Message] = []
        # (sender, recipient, kind) triples that are silently lost
        self.drop: set[tuple[str, str, str]] = set()
        self.drop_once: list[tuple[str, str, str]] = []

    def send(self, sender: str, recipient: str, kind: str, payload=None, delay: int = 1) -> Message | None:
        if delay < 0:
            raise ValueError("delay must be >= 0")
        key = (sender, recipient, kind)
        msg = Message(self.now + delay, self._seq, sender, recipient, kind, payload, self.now)
        self._seq += 1
        self.log.append(msg)
        if key in self.drop:
            return None
        if key in self.drop_once:
            self.drop_once.remove(key)
            return None
        heapq.heappush(self._queue, msg)
        return msg

    def broadcast(self, sender: str, recipients, kind: str, payload=None, delay: int = 1) -> None:
        for r in recipients:
            if r != sender:
                self.send(sender, r, kind, payload, delay)

    def pending(self) -> int:
        return len(self._queue)

    def next_time(self) -> int | None:
        return self._queue[0].deliver_at if self._queue else None

    def deliver_until(self, t: int) -> list[Message]:
        """Pop every message due at or before ``t`` and advance the clock to ``t``."""
        out = []
        while self._queue and self._queue[0].deliver_at <= t:
            out.append(heapq.heappop(self._queue))
        self.now = max(self.now, t)
        return out

    def receive(self, recipient: str, kind: str | None = None, until: int | None = None) -> Message | None:
        """First message for ``recipient`` (optionally of ``kind``) due by ``until``; others stay queued."""
        limit = self.now if until is None else until
        keep = []
        found = None
        while self._queue and self._queue[0].deliver_at <= limit:
            m = heapq.heappop(self._queue)
            if found is None and m.recipient == recipient and (kind is None or m.kind == kind):
                found = m
                break
            keep.append(m)
        for m in keep:
            heapq.heappush(self._queue, m)
        if found is not None:
            self.now = max(self.now, found.deliver_at)
        elif until is not None:
            self.now = max(self.now, until)
        return found
