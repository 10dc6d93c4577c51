"""Report serialization.

JSON is the canonical form. CSV flattens the tabular parts (per-epoch
series, confusion matrices, benchmarks) into long format with the columns
``table, epoch, row, column, value``.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..config import SCHEMA_VERSION

CSV_COLUMNS = ("table", "epoch", "row", "column", "value")


class ReportIOError(OSError):
    pass


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1, allow_nan=False) + "\n"


def csv_rows(report: dict) -> list[tuple]:
    rows: list[tuple] = [("schema", "", "", "v", report.get("v", SCHEMA_VERSION))]
    for r in report.get("epochs", []):
        e = r["epoch"]
        for col in ("height", "blocks", "skips", "slashed", "pod_total_loss"):
            rows.append(("epochs", e, "", col, r[col]))
        rows.append(("epochs", e, "", "leader", r["leader"] or ""))
        rows.append(("epochs", e, "", "pof_accepted", r["pof"]["accepted"]))
        for reason, n in r["pof"]["rejected"].items():
            rows.append(("pof_rejected", e, reason, "count", n))
        for label, cells in r["confusion"].items():
            for cell, n in cells.items():
                rows.append(("confusion", e, label, cell, n))
    det = report.get("detection", {})
    for label, cells in det.get("confusion", {}).items():
        for cell, n in cells.items():
            rows.append(("confusion_total", "", label, cell, n))
    for key in ("recall", "false_positive_rate", "objective_flagged"):
        if det.get(key) is not None:
            rows.append(("detection", "", "", key, det[key]))
    for b in report.get("benchmarks", {}).get("pod", []):
        rows.append(("benchmark_pod", "", f"N={b['n']}", "seconds", b["seconds"]))
    for b in report.get("benchmarks", {}).get("pof", []):
        rows.append(("benchmark_pof", "", f"N={b['n']},L={b['l']}", "seconds", b["seconds"]))
    for v in report.get("validators", []):
        for col in ("stake", "weight_pod", "weight_pof", "slashed"):
            rows.append(("validators", "", v["node"], col, v[col]))
    return rows


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in csv_rows(report):
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def emit_report(report: dict, fmt: str, path: str | Path) -> Path:
    if fmt not in ("json", "csv"):
        raise ValueError(f"unknown report format {fmt!r}")
    text = report_json(report) if fmt == "json" else report_csv(report)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as err:
        raise ReportIOError(f"cannot write report to {path}: {err}") from err
    return path


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
