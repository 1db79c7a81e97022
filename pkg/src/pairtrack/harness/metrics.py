"""Metric records and their text serialization.

The metrics file is tab-separated, one record per line, with a single
``#``-prefixed header. Columns: step, total, cls, iou, l1, eb, entropy,
mean_iou, success50, success70, usage (comma-joined per-expert counts).
Float formatting is fixed so identical runs produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HEADER = "# step\ttotal\tcls\tiou\tl1\teb\tentropy\tmean_iou\tsuccess50\tsuccess70\tusage\n"


@dataclass
class MetricsRecord:
    step: int
    total: float
    cls: float
    iou: float
    l1: float
    eb: float
    expert_usage: np.ndarray
    entropy: float
    mean_iou: float
    success_at_50: float
    success_at_70: float


def usage_entropy(histogram: np.ndarray) -> float:
    """Natural-log entropy of the expert usage distribution."""
    total = histogram.sum()
    if total <= 0:
        return 0.0
    p = histogram[histogram > 0] / total
    return float(-np.sum(p * np.log(p)))


def _fmt(value: float) -> str:
    return format(float(value), ".12g")


def format_record(r: MetricsRecord) -> str:
    usage = ",".join(str(int(c)) for c in r.expert_usage)
    cells = [str(r.step)] + [
        _fmt(v) for v in (r.total, r.cls, r.iou, r.l1, r.eb, r.entropy,
                          r.mean_iou, r.success_at_50, r.success_at_70)
    ]
    return "\t".join(cells + [usage or "-"]) + "\n"


def write_metrics(records: list[MetricsRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(HEADER)
        for record in records:
            fh.write(format_record(record))
