"""Trace comparison against oracles and other traces."""

from __future__ import annotations

import csv
import fnmatch
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import GridMismatch
from .hub import TRACE_CSV_HEADER

Series = dict[str, tuple[np.ndarray, np.ndarray]]


def load_trace(source: str | Path) -> Series:
    """Parse a trace CSV into per-topic (sim_time, value) arrays.

    Non-numeric values (status/enum topics) are skipped; duplicate rows at the
    same sim time keep the last one (setpoint restamps).
    """
    text = Path(source).read_text(encoding="utf-8") if isinstance(source, (str, Path)) else source
    reader = csv.DictReader(io.StringIO(text))
    expected = TRACE_CSV_HEADER.split(",")
    if reader.fieldnames != expected:
        raise GridMismatch(f"unexpected trace header {reader.fieldnames}")
    acc: dict[str, dict[int, float]] = {}
    for row in reader:
        try:
            value = float(row["value"])
        except ValueError:
            continue
        acc.setdefault(row["topic"], {})[int(row["sim_time_ns"])] = value
    out: Series = {}
    for topic, points in acc.items():
        times = np.array(sorted(points), dtype=np.int64)
        out[topic] = (times, np.array([points[int(t)] for t in times]))
    return out


@dataclass(frozen=True)
class CompareResult:
    metric: str
    tolerance: float
    rms: float
    linf: float
    per_topic: Mapping[str, dict] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return self.rms if self.metric == "rms" else self.linf

    @property
    def passed(self) -> bool:
        return self.value <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "tolerance": self.tolerance,
            "rms": self.rms,
            "linf": self.linf,
            "value": self.value,
            "pass": self.passed,
            "topics": dict(self.per_topic),
        }


def compare(
    trace_a: Series,
    trace_b: Series,
    metric: str = "rms",
    tolerance: float = 0.0,
    topic_glob: str = "*",
) -> CompareResult:
    """Deterministic RMS/L-inf comparison on exactly matching sim-time grids."""
    if metric not in ("rms", "linf"):
        raise ValueError(f"metric must be rms or linf, got {metric!r}")
    topics = sorted(
        {t for t in trace_a if fnmatch.fnmatchcase(t, topic_glob)}
        | {t for t in trace_b if fnmatch.fnmatchcase(t, topic_glob)}
    )
    if not topics:
        raise GridMismatch(f"no topics match {topic_glob!r}")
    per_topic: dict[str, dict] = {}
    squares: list[np.ndarray] = []
    linf = 0.0
    for topic in topics:
        if topic not in trace_a or topic not in trace_b:
            raise GridMismatch(f"topic {topic} missing from one trace")
        ta, va = trace_a[topic]
        tb, vb = trace_b[topic]
        if len(ta) != len(tb) or not np.array_equal(ta, tb):
            raise GridMismatch(f"topic {topic}: sim-time grids differ ({len(ta)} vs {len(tb)} points)")
        diff = va - vb
        topic_rms = float(np.sqrt(np.mean(diff**2))) if diff.size else 0.0
        topic_linf = float(np.max(np.abs(diff))) if diff.size else 0.0
        per_topic[topic] = {"rms": topic_rms, "linf": topic_linf, "points": int(diff.size)}
        squares.append(diff**2)
        linf = max(linf, topic_linf)
    all_sq = np.concatenate(squares)
    rms = float(np.sqrt(np.mean(all_sq))) if all_sq.size else 0.0
    return CompareResult(metric=metric, tolerance=tolerance, rms=rms, linf=linf, per_topic=per_topic)
