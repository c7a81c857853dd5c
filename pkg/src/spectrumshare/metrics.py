"""Metrics export: CSV and JSON-lines renderings of a simulation log.

Both formats emit one row per (slot record, UE) with identical values:
numbers are rendered with up to six fractional digits, locale
independent. A record with two UEs therefore becomes two rows.
"""

from __future__ import annotations

import json

from .sim import MetricsLog

CSV_HEADER = (
    "t_ms,slot,barred_count,barred_bitmap,ue_id,dl_bits,ul_bits,"
    "incumbent_truth,detect_latency_ms"
)

FORMATS = ("csv", "jsonl")


def _round6(x: float) -> float:
    r = round(float(x), 6)
    return 0.0 if r == 0 else r  # avoid -0.0


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, int):
        return str(x)
    s = f"{_round6(x):.6f}".rstrip("0").rstrip(".")
    return s or "0"


def _rows(log: MetricsLog):
    for rec in log.records:
        for ue_id in log.ue_ids:
            yield {
                "t_ms": rec.t_ms,
                "slot": rec.slot,
                "barred_count": rec.barred_count,
                "barred_bitmap": rec.barred_bitmap_hex,
                "ue_id": ue_id,
                "dl_bits": rec.dl_bits.get(ue_id, 0.0),
                "ul_bits": rec.ul_bits.get(ue_id, 0.0),
                "incumbent_truth": rec.incumbent_truth,
                "detect_latency_ms": rec.detect_latency_ms,
            }


def export_metrics(log: MetricsLog, format: str = "csv") -> bytes:
    """Render the log; returns the complete byte stream."""
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r} (use one of {FORMATS})")
    lines = []
    if format == "csv":
        lines.append(CSV_HEADER)
        for row in _rows(log):
            lines.append(",".join(_cell(v) for v in row.values()))
    else:
        for row in _rows(log):
            rendered = {
                k: (_round6(v) if isinstance(v, float) else v)
                for k, v in row.items()
            }
            lines.append(json.dumps(rendered, separators=(",", ":")))
    return ("\n".join(lines) + "\n").encode("ascii")
