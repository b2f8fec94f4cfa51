"""Baseline-relative threshold flags, grok-step detection and lead times."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

METRICS = ("ildr", "weight_norm", "grokfast")


@dataclass(frozen=True)
class DetectorConfig:
    baseline_step: int = 3000
    log_every: int = 100
    ildr_threshold: float = 2.5  # flag when ildr > threshold * baseline
    weightnorm_threshold: float = 0.75  # flag when weight norm < threshold * baseline
    grokfast_threshold: float = 0.50  # flag when EMA magnitude < threshold * baseline
    grok_acc: float = 0.95

    def __post_init__(self):
        if self.log_every < 1 or self.baseline_step % self.log_every:
            raise ValueError("baseline_step must be a multiple of log_every")
        if min(self.ildr_threshold, self.weightnorm_threshold, self.grokfast_threshold) <= 0:
            raise ValueError("thresholds must be positive")


@dataclass
class DetectorState:
    config: DetectorConfig = field(default_factory=DetectorConfig)
    baselines: dict = field(default_factory=dict)
    flags: dict = field(default_factory=lambda: {m: None for m in METRICS})
    grok_step: Optional[int] = None
    last_step: Optional[int] = None

    def update(self, snap) -> list[str]:
        """Consume one checkpoint row; return the events first raised at this step.

        Events are metric names from ``METRICS`` plus ``"grok"``.
        """
        cfg = self.config
        step = int(snap.step)
        if self.last_step is not None and step <= self.last_step:
            raise ValueError(f"snapshot step {step} is not after {self.last_step}")
        if step % cfg.log_every:
            raise ValueError(f"snapshot step {step} is not a multiple of {cfg.log_every}")
        self.last_step = step
        raised = []

        if self.grok_step is None and snap.val_acc > cfg.grok_acc:
            self.grok_step = step
            raised.append("grok")

        if not self.baselines:
            if step >= cfg.baseline_step:
                self.baselines = {
                    "ildr": snap.ildr,
                    "weight_norm": snap.weight_norm,
                    "grokfast": snap.grokfast_norm,
                }
            return raised

        tests = {
            "ildr": snap.ildr > cfg.ildr_threshold * self.baselines["ildr"],
            "weight_norm": snap.weight_norm < cfg.weightnorm_threshold * self.baselines["weight_norm"],
            "grokfast": snap.grokfast_norm < cfg.grokfast_threshold * self.baselines["grokfast"],
        }
        for metric in METRICS:
            if self.flags[metric] is None and tests[metric]:
                self.flags[metric] = step
                raised.append(metric)
        return raised

    def lead_time(self, metric: str) -> Optional[int]:
        return lead_time(self, metric)


def lead_time(state: DetectorState, metric: str) -> Optional[int]:
    """grok step minus flag step; positive when the metric fired first, None if either is missing."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    flag = state.flags.get(metric)
    if flag is None or state.grok_step is None:
        return None
    return state.grok_step - flag


def replay(snapshots, config: DetectorConfig = DetectorConfig()) -> DetectorState:
    state = DetectorState(config)
    for snap in snapshots:
        state.update(snap)
    return state
