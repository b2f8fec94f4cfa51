"""Per-seed and aggregate lead-time tables in Markdown and CSV."""

from __future__ import annotations

import csv
import io
from typing import Optional, Sequence

import numpy as np

from .detect import METRICS, lead_time

ABSENT = "---"
METRIC_LABELS = {"ildr": "ILDR", "weight_norm": "Weight Norm", "grokfast": "Grokfast"}


def lead_cell(flag: Optional[int], lead: Optional[int], grok: Optional[int]) -> str:
    """``4800 (+500, 9%)`` when leading, ``5500 (-200)`` when lagging, ``---`` when absent."""
    if flag is None:
        return ABSENT
    if lead is None:
        return str(flag)
    if lead > 0:
        return f"{flag} (+{lead}, {round(100 * lead / grok)}%)"
    if lead == 0:
        return f"{flag} (0)"
    return f"{flag} ({lead})"


def aggregate(values: Sequence[Optional[float]]) -> Optional[tuple[float, float, int]]:
    """Mean and population standard deviation of the present values."""
    vals = np.array([v for v in values if v is not None], dtype=np.float64)
    if len(vals) == 0:
        return None
    return float(vals.mean()), float(vals.std()), len(vals)


def format_pm(agg: Optional[tuple]) -> str:
    if agg is None:
        return ABSENT
    mean, std, _ = agg
    return f"{round(mean)} ± {round(std)}"


def seed_rows(runlogs) -> list[dict]:
    rows = []
    for run in runlogs:
        row = {"seed": run.seed, "grok": run.grok_step, "diverged": run.diverged}
        for m in METRICS:
            row[f"{m}_flag"] = run.flags.get(m)
            row[f"{m}_lead"] = lead_time(run.detector, m)
        rows.append(row)
    return rows


def emit_report(runlogs, csv_path=None) -> str:
    """Markdown summary of ``runlogs``; optionally also write the per-seed CSV.

    Diverged runs are listed but left out of the aggregates.
    """
    if not runlogs:
        raise ValueError("emit_report needs at least one run")
    rows = seed_rows(runlogs)
    header = ["Seed", "Grok"] + [METRIC_LABELS[m] for m in METRICS]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in rows:
        grok = ABSENT if r["grok"] is None else str(r["grok"])
        if r["diverged"]:
            grok += " (diverged)"
        cells = [str(r["seed"]), grok] + [lead_cell(r[f"{m}_flag"], r[f"{m}_lead"], r["grok"]) for m in METRICS]
        lines.append("| " + " | ".join(cells) + " |")
    ok = [r for r in rows if not r["diverged"]]
    summary = "  ".join(f"{METRIC_LABELS[m]}: {format_pm(aggregate([r[f'{m}_lead'] for r in ok]))}"
                        for m in METRICS)
    lines += ["", f"Lead time (mean ± std over runs with both flag and grok): {summary}"]
    n_div = len(rows) - len(ok)
    if n_div:
        lines.append(f"Diverged runs excluded from aggregates: {n_div}")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            fh.write(report_csv(rows))
    return "\n".join(lines) + "\n"


def report_csv(rows: list[dict]) -> str:
    cols = ["seed", "grok", "diverged"] + [f"{m}_{k}" for m in METRICS for k in ("flag", "lead")]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r[c] is None else r[c] for c in cols])
    return buf.getvalue()


def markdown_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row in rows:
        out.append("| " + " | ".join(ABSENT if c is None else str(c) for c in row) + " |")
    return "\n".join(out) + "\n"


def csv_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if c is None else c for c in row])
    return buf.getvalue()
