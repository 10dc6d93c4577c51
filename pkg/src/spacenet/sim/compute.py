"""Deterministic computations the proof system re-executes."""

from __future__ import annotations

from ..config import ScenarioConfig
from ..identity import KeyRegistry
from ..pod.engine import PodReport, next_state, pod_epoch
from ..pof.flow import AttestedFlow, verify_flow
from ..signal import StateSample


def _samples(rec: dict) -> list[StateSample]:
    return [StateSample.from_public(s) for s in rec["samples"]]


def make_pod_fn(config: ScenarioConfig):
    def pod_fn(records: list[dict], params: dict) -> dict:
        alpha = records[0]
        state = None
        if len(records) == 3:
            prev_samples = _samples(records[1])
            prev_report = PodReport.from_json(records[2]["output"])
            state = next_state(prev_report, prev_samples)
        report = pod_epoch(_samples(alpha), state, config.pod_config, params["epoch"])
        if not report.transmitter_id:
            report.transmitter_id = alpha["transmitter"]
        return report.to_json()

    return pod_fn


def make_pof_fn(config: ScenarioConfig, registry: KeyRegistry):
    wpe = config.epoch_config.windows_per_epoch

    def pof_fn(records: list[dict], params: dict) -> dict:
        n = params["n_flows"]
        flows, pods = records[:n], records[n:]
        reports = {(p["epoch"], p["transmitter"]): PodReport.from_json(p["output"]) for p in pods}
        verdicts = []
        for rec in flows:
            att = AttestedFlow.from_record(rec)
            rep = reports.get((att.window_index // wpe, att.transmitter_id))
            v = verify_flow(
                att,
                rep,
                registry,
                sensitivity_dbm=config.link.sensitivity_dbm,
                failure_scale_db=config.link.failure_scale_db,
                confidence=config.flow.confidence,
            )
            verdicts.append(
                {
                    "window": att.window_index,
                    "transmitter": att.transmitter_id,
                    "challenger": att.challenger_id,
                    "accepted": v.accepted,
                    "reason": v.reason.value,
                    "bytes": att.byte_count,
                }
            )
        verdicts.sort(key=lambda v: (v["window"], v["transmitter"], v["challenger"]))
        return {"verdicts": verdicts}

    return pof_fn

