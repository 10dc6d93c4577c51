"""Timing harness for PoD and PoF.

Only ratios between sizes are meaningful across machines; each timing is
the minimum over several repeats to suppress scheduler noise.
"""

from __future__ import annotations

import gc
import hashlib
import time

import numpy as np

from ..config import parse_config
from ..identity import KeyRegistry
from ..pod.engine import Cause, Classification, PodReport, ReceiverResult, pod_epoch
from ..pof.flow import FlowWindow, Packet, PacketStatus, two_handshake, verify_flow
from ..signal import build_layout, generate_field


def _timed(fn, repeats: int) -> float:
    # same policy as timeit: collector pauses are noise, not work
    best = float("inf")
    enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        for _ in range(repeats):
            t = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t)
    finally:
        if enabled:
            gc.enable()
    return best


def pod_fixture(n_receivers: int, seed: int = 0):
    # one footprint, so more receivers means a denser field
    cfg = parse_config({"seed": seed, "n_receivers": n_receivers, "fraud_spec": [{"kind": "RFraud", "fraction": 0.1}]})
    return generate_field(cfg, 0.0, build_layout(cfg)), cfg.pod_config


def bench_pod(n_receivers: int, repeats: int = 5, seed: int = 0) -> float:
    if n_receivers < 2:
        raise ValueError("need at least 2 receivers")
    samples, pcfg = pod_fixture(n_receivers, seed)
    return _timed(lambda: pod_epoch(samples, None, pcfg), repeats)


def pof_fixture(n_receivers: int, packet_len: int, packets: int = 16, seed: int = 0):
    rng = np.random.default_rng(seed)
    reg = KeyRegistry()
    tx = reg.create(seed, "S0")
    rxs = [reg.create(seed, f"R{i:05d}") for i in range(n_receivers)]
    payloads = [[rng.bytes(packet_len) for _ in range(packets)] for _ in range(n_receivers)]
    report = PodReport(
        "S0",
        0,
        {r.node_id: ReceiverResult({"signal_dbm": -70.0}, 0.0, 0.0, 0.0, Classification.VALID, Cause.NONE, 0.0) for r in rxs},
        {},
        {"signal_dbm": -70.0},
        0.0,
        1,
        True,
    )
    return reg, tx, rxs, payloads, report


def run_pof_batch(reg, tx, rxs, payloads, report, window: int = 0) -> int:
    ok = 0
    for rx, pls in zip(rxs, payloads):
        # each side hashes the payloads it sent or received
        t_view = FlowWindow(window, tx.node_id, rx.node_id, [Packet(i, hashlib.sha256(p).digest(), PacketStatus.DELIVERED, len(p)) for i, p in enumerate(pls)])
        c_view = FlowWindow(window, tx.node_id, rx.node_id, [Packet(i, hashlib.sha256(p).digest(), PacketStatus.DELIVERED, len(p)) for i, p in enumerate(pls)])
        att = two_handshake(tx, rx, t_view, c_view, reg)
        if att and verify_flow(att, report, reg).accepted:
            ok += 1
    return ok


def bench_pof(n_receivers: int, packet_len: int, repeats: int = 3, seed: int = 0) -> float:
    if n_receivers < 2:
        raise ValueError("need at least 2 receivers")
    fx = pof_fixture(n_receivers, packet_len, seed=seed)
    return _timed(lambda: run_pof_batch(*fx), repeats)


def bench_pof_lengths(n_receivers: int, lengths: list[int], repeats: int = 12, seed: int = 0) -> dict[int, float]:
    """Time several packet lengths in interleaved rounds.

    Slow phases of a shared machine then hit every length alike instead of
    whichever one happened to run during them. The order rotates each round.
    """
    if n_receivers < 2:
        raise ValueError("need at least 2 receivers")
    fixtures = {L: pof_fixture(n_receivers, L, seed=seed) for L in lengths}
    best = {L: float("inf") for L in lengths}
    enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        for r in range(repeats):
            for j in range(len(lengths)):
                L = lengths[(r + j) % len(lengths)]
                t = time.perf_counter()
                run_pof_batch(*fixtures[L])
                best[L] = min(best[L], time.perf_counter() - t)
    finally:
        if enabled:
            gc.enable()
    return best


def append_benchmarks(report: dict, pod=(), pof=()) -> dict:
    """Add timing rows to ``report["benchmarks"]``; sizes are N for pod and (N, L) for pof."""
    table = report.setdefault("benchmarks", {"pod": [], "pof": []})
    for n in pod:
        table.setdefault("pod", []).append({"n": n, "seconds": bench_pod(n)})
    for n, L in pof:
        table.setdefault("pof", []).append({"n": n, "l": L, "seconds": bench_pof(n, L)})
    return report
