"""Scenario runner, reports and benchmarks."""

from .bench import bench_pod, bench_pof
from .report import emit_report, load_report
from .runner import RunResult, Simulation, run_scenario

__all__ = ["RunResult", "Simulation", "bench_pod", "bench_pof", "emit_report", "load_report", "run_scenario"]
