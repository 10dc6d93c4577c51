"""Append-only data-availability log.

Records are JSON objects with a ``type`` discriminant and a ``v`` schema
field, stored one per line in canonical form (sorted keys, no spaces). A
record's offset is its position in the log, so offsets are stable across
replays and reloads.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Callable, Iterator

DA_SCHEMA_VERSION = 1


class DALoadError(Exception):
    def __init__(self, offset: int, byte_pos: int, reason: str):
        super().__init__(f"corrupt DA record at offset {offset} (byte {byte_pos}): {reason}")
        self.offset = offset
        self.byte_pos = byte_pos


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


class DAStore:
    def __init__(self, path: str | Path | None = None):
        self._records: list[dict] = []
        self._lines: list[str] = []
        self._by_type: dict[str, list[int]] = {}
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.write_text("")

    def __len__(self) -> int:
        return len(self._records)

    def append(self, record: dict) -> int:
        if "type" not in record:
            raise ValueError("DA records need a 'type' field")
        rec = dict(record)
        rec.setdefault("v", DA_SCHEMA_VERSION)
        try:
            line = canonical_json(rec)
        except (TypeError, ValueError) as err:
            raise ValueError(f"record is not serializable: {err}") from err
        offset = len(self._records)
        # store the parsed canonical form so later caller mutation cannot leak in
        self._add(json.loads(line), line)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(line + "\n")
        return offset

    def _add(self, rec: dict, line: str) -> None:
        self._by_type.setdefault(rec["type"], []).append(len(self._records))
        self._records.append(rec)
        self._lines.append(line)

    def get(self, offset: int) -> dict:
        # fresh parse, so callers may mutate the result freely
        return json.loads(self._lines[offset])

    def peek(self, offset: int) -> dict:
        """The stored record itself, without copying; callers must not mutate it."""
        return self._records[offset]

    def _candidates(self, type: str | None) -> list[int]:
        return range(len(self._records)) if type is None else self._by_type.get(type, [])

    def fetch(self, type: str | None = None, where: Callable[[dict], bool] | None = None, **fields) -> list[dict]:
        """Records matching ``type``, every ``field=value`` pair and ``where``, in log order."""
        out = []
        for i in self._candidates(type):
            rec = self._records[i]
            if any(rec.get(k) != v for k, v in fields.items()):
                continue
            if where is not None and not where(rec):
                continue
            out.append(json.loads(self._lines[i]))
        return out

    def find(self, type: str | None = None, **fields) -> list[int]:
        return [i for i in self._candidates(type) if all(self._records[i].get(k) == v for k, v in fields.items())]

    def __iter__(self) -> Iterator[dict]:
        return (json.loads(line) for line in self._lines)

    def dumps(self) -> bytes:
        return "".join(line + "\n" for line in self._lines).encode()

    def digest(self) -> str:
        return hashlib.sha256(self.dumps()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.dumps())

    def _tamper(self, offset: int, record: dict) -> None:
        """Overwrite a record in place; only fault-injection tests use this."""
        line = canonical_json(record)
        old = self._records[offset]["type"]
        if old != record["type"]:
            raise ValueError("tampering may not change a record's type")
        self._records[offset] = json.loads(line)
        self._lines[offset] = line

    @classmethod
    def loads(cls, data: bytes) -> "DAStore":
        store = cls()
        pos = 0
        text = data.decode("utf-8", errors="strict")
        offset = 0
        while pos < len(text):
            end = text.find("\n", pos)
            if end < 0:
                raise DALoadError(offset, pos, "truncated record (no line terminator)")
            line = text[pos:end]
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise DALoadError(offset, pos, err.msg) from None
            if not isinstance(rec, dict) or "type" not in rec:
                raise DALoadError(offset, pos, "record is not an object with a type")
            if canonical_json(rec) != line:
                raise DALoadError(offset, pos, "record is not in canonical form")
            store._add(rec, line)
            pos = end + 1
            offset += 1
        return store

    @classmethod
    def load(cls, path: str | Path) -> "DAStore":
        return cls.loads(Path(path).read_bytes())
