"""Grokking detection lab: a small numpy transformer trained on algebraic tasks,
with checkpoint metrics (ILDR, weight norm, gradient EMA, spectral entropy)
and baseline-relative flags that anticipate delayed generalisation."""

from .data import TaskSpec, make_dataset
from .detect import DetectorConfig, DetectorState, lead_time
from .harness import ExperimentConfig, InterventionPolicy, run_training
from .metrics import GrokfastState, ildr, spectral_entropy, weight_norm
from .model import ModelConfig, Transformer
from .optim import AdamW

__version__ = "0.1.0"

__all__ = [
    "AdamW", "DetectorConfig", "DetectorState", "ExperimentConfig", "GrokfastState",
    "InterventionPolicy", "ModelConfig", "TaskSpec", "Transformer", "ildr", "lead_time",
    "make_dataset", "run_training", "spectral_entropy", "weight_norm",
]
