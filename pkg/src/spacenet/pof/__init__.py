"""Proof of flow: Merkle-attested packet windows."""

from .flow import (
    AttestedFlow,
    CommitQueue,
    DropReason,
    FlowReason,
    FlowVerdict,
    FlowWindow,
    Packet,
    PacketStatus,
    Rejection,
    implied_failure_rate,
    schedule_commit,
    two_handshake,
    verify_chain,
    verify_flow,
)
from .merkle import EMPTY_LEAF, EMPTY_WINDOW, MerkleShapeError, MerkleTree, build_merkle, diff_merkle, tree_from_leaves

__all__ = [
    "AttestedFlow",
    "CommitQueue",
    "DropReason",
    "EMPTY_LEAF",
    "EMPTY_WINDOW",
    "FlowReason",
    "FlowVerdict",
    "FlowWindow",
    "MerkleShapeError",
    "MerkleTree",
    "Packet",
    "PacketStatus",
    "Rejection",
    "build_merkle",
    "diff_merkle",
    "implied_failure_rate",
    "schedule_commit",
    "tree_from_leaves",
    "two_handshake",
    "verify_chain",
    "verify_flow",
]
