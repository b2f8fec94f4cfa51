"""Run records and their on-disk form.

A run is stored as ``<stem>.csv`` (one row per checkpoint) plus ``<stem>.json``
(configuration, seed, intervention events, early-stop outcome, timings).
CSV floats carry 6 significant digits, so a parsed log equals the original
with its floats rounded to that precision; re-emitting a parsed log
reproduces the file byte for byte.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .detect import DetectorConfig, DetectorState
from .metrics import MetricSnapshot

CSV_COLUMNS = [
    "step", "train_acc", "val_acc", "ildr", "inter", "intra", "weight_norm",
    "grokfast_norm", "spectral_entropy", "lr", "wd",
    "flag_ildr_step", "flag_wn_step", "flag_gf_step", "grok_step",
]
_FLAG_COLUMNS = {"flag_ildr_step": "ildr", "flag_wn_step": "weight_norm", "flag_gf_step": "grokfast"}


def fmt(x: float) -> str:
    return f"{x:.6g}"


def round6(x: float) -> float:
    return float(fmt(x))


@dataclass
class RunLog:
    config: dict
    seed: int
    snapshots: list = field(default_factory=list)
    detector: DetectorState = field(default_factory=DetectorState)
    interventions: list = field(default_factory=list)
    early_stop_step: Optional[int] = None
    val_at_grace: Optional[float] = None
    diverged: bool = False
    diverged_step: Optional[int] = None
    timings: dict = field(default_factory=dict)

    @property
    def grok_step(self) -> Optional[int]:
        return self.detector.grok_step

    @property
    def flags(self) -> dict:
        return self.detector.flags

    @property
    def final_step(self) -> int:
        return self.snapshots[-1].step if self.snapshots else 0

    def series(self, name: str) -> list:
        return [getattr(s, name) for s in self.snapshots]

    def rounded(self) -> "RunLog":
        """Copy with every float field of the snapshots rounded to 6 significant digits."""
        snaps = [replace(s, **{f.name: round6(getattr(s, f.name))
                               for f in fields(s) if f.name != "step"})
                 for s in self.snapshots]
        det = replace(self.detector, baselines={k: round6(v) for k, v in self.detector.baselines.items()},
                      flags=dict(self.detector.flags))
        return replace(self, snapshots=snaps, detector=det)


def _flag_cell(step: Optional[int], row_step: int) -> str:
    return str(step) if step is not None and step <= row_step else ""


def run_paths(stem) -> tuple[Path, Path]:
    """CSV and JSON paths for a run stem; a trailing ``.csv`` on the stem is accepted."""
    stem = Path(stem)
    if stem.suffix == ".csv":
        stem = stem.with_suffix("")
    return stem.parent / (stem.name + ".csv"), stem.parent / (stem.name + ".json")


def write_run(log: RunLog, stem) -> Path:
    """Write ``stem.csv`` and ``stem.json``; return the CSV path."""
    csv_path, json_path = run_paths(stem)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    flags = log.detector.flags
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in log.snapshots:
            row = [str(s.step)] + [fmt(getattr(s, c)) for c in CSV_COLUMNS[1:11]]
            row += [_flag_cell(flags.get(m), s.step) for m in _FLAG_COLUMNS.values()]
            row.append(_flag_cell(log.detector.grok_step, s.step))
            w.writerow(row)
    meta = {
        "config": log.config,
        "seed": log.seed,
        "detector": asdict(log.detector.config),
        "interventions": log.interventions,
        "early_stop_step": log.early_stop_step,
        "val_at_grace": log.val_at_grace,
        "diverged": log.diverged,
        "diverged_step": log.diverged_step,
        "timings": log.timings,
    }
    json_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return csv_path


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return list(reader)


def read_run(stem) -> RunLog:
    csv_path, meta_path = run_paths(stem)
    rows = read_csv_rows(csv_path)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    snaps = [MetricSnapshot(step=int(r["step"]), **{c: float(r[c]) for c in CSV_COLUMNS[1:11]})
             for r in rows]
    det_cfg = DetectorConfig(**meta["detector"]) if "detector" in meta else DetectorConfig()
    state = DetectorState(det_cfg)
    if rows:
        last = rows[-1]
        for col, metric in _FLAG_COLUMNS.items():
            state.flags[metric] = int(last[col]) if last[col] else None
        state.grok_step = int(last["grok_step"]) if last["grok_step"] else None
        state.last_step = snaps[-1].step
        base = next((s for s in snaps if s.step >= det_cfg.baseline_step), None)
        if base is not None:
            state.baselines = {"ildr": base.ildr, "weight_norm": base.weight_norm,
                               "grokfast": base.grokfast_norm}
    return RunLog(
        config=meta.get("config", {}),
        seed=meta.get("seed", 0),
        snapshots=snaps,
        detector=state,
        interventions=meta.get("interventions", []),
        early_stop_step=meta.get("early_stop_step"),
        val_at_grace=meta.get("val_at_grace"),
        diverged=meta.get("diverged", False),
        diverged_step=meta.get("diverged_step"),
        timings=meta.get("timings", {}),
    )
