"""Mock proof system with a (prove, verify) contract.

A transcript commits to its inputs (DA records, by offset) and to the
output of a registered deterministic computation. Verification re-reads the
inputs from the DA log, re-executes the computation and compares both
commitments. Re-execution results are memoized by input commitment, so many
validators checking the same transcript pay for one execution.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

from .da import DAStore, canonical_json

ComputeFn = Callable[[list[dict], dict], dict]


def commit(obj) -> bytes:
    return hashlib.sha256(canonical_json(obj).encode()).digest()


@dataclass(frozen=True)
class ProofTranscript:
    statement_id: str
    fn_id: str
    inputs: tuple[int, ...]
    input_commitment: bytes
    output_commitment: bytes
    replay_seed: int = 0

    def to_json(self) -> dict:
        return {
            "statement": self.statement_id,
            "fn": self.fn_id,
            "inputs": list(self.inputs),
            "input_commitment": self.input_commitment.hex(),
            "output_commitment": self.output_commitment.hex(),
            "replay_seed": self.replay_seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ProofTranscript":
        return cls(
            d["statement"],
            d["fn"],
            tuple(d["inputs"]),
            bytes.fromhex(d["input_commitment"]),
            bytes.fromhex(d["output_commitment"]),
            d.get("replay_seed", 0),
        )


class ProofSystem:
    def __init__(self, da: DAStore):
        self.da = da
        self._fns: dict[str, ComputeFn] = {}
        self._memo: dict[tuple[str, bytes, int, str], dict] = {}
        self.executions = 0

    def register(self, fn_id: str, fn: ComputeFn) -> None:
        self._fns[fn_id] = fn

    def _inputs(self, offsets) -> list[dict]:
        return [self.da.get(o) for o in offsets]

    def execute(self, fn_id: str, offsets, params: dict | None = None, replay_seed: int = 0) -> tuple[bytes, dict]:
        params = params or {}
        records = self._inputs(offsets)
        in_c = commit({"records": records, "params": params})
        key = (fn_id, in_c, replay_seed, canonical_json(params))
        if key not in self._memo:
            self.executions += 1
            self._memo[key] = self._fns[fn_id](records, params)
        return in_c, self._memo[key]

    def prove(self, statement_id: str, fn_id: str, offsets, params: dict | None = None, replay_seed: int = 0) -> tuple[ProofTranscript, dict]:
        if fn_id not in self._fns:
            raise KeyError(f"unknown computation {fn_id!r}")
        in_c, out = self.execute(fn_id, offsets, params, replay_seed)
        return ProofTranscript(statement_id, fn_id, tuple(offsets), in_c, commit(out), replay_seed), out

    def verify(self, proof: ProofTranscript, params: dict | None = None) -> bool:
        if proof.fn_id not in self._fns:
            return False
        try:
            in_c, out = self.execute(proof.fn_id, proof.inputs, params, proof.replay_seed)
        except (IndexError, KeyError, ValueError):
            return False
        return in_c == proof.input_commitment and commit(out) == proof.output_commitment

    def output(self, proof: ProofTranscript, params: dict | None = None) -> dict:
        return self.execute(proof.fn_id, proof.inputs, params, proof.replay_seed)[1]


def verify_transcript(proof: ProofTranscript, system: ProofSystem, params: dict | None = None) -> bool:
    return system.verify(proof, params)
