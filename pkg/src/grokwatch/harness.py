"""Training runs and the experiment drivers built on them."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .data import TaskSpec, make_dataset, sample_batch
from .detect import DetectorConfig, DetectorState
from .metrics import GrokfastState, ildr, snapshot_metrics, spectral_entropy, subsample, weight_norm
from .model import ModelConfig, Transformer, representations
from .optim import AdamW
from .runlog import RunLog, read_run, run_paths, write_run

log = logging.getLogger(__name__)

# per-run RNG streams are derived from the experiment seed by these offsets
SPLIT_OFFSET, INIT_OFFSET, TRAIN_OFFSET, METRIC_OFFSET = 0, 10_000, 20_000, 30_000

EARLY_STOP_GRACE = 200
VARIANCE_RATIO_CAP = 1e12


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "mul"
    p: int = 97
    frac: float = 0.3
    d_model: int = 128
    heads: int = 4
    layers: int = 1
    steps: int = 20_000
    log_every: int = 100
    batch_size: int = 512
    lr: float = 1e-3
    wd: float = 1.0
    seeds: tuple = (0,)
    subsample: int = 1500
    init_scheme: str = "torch"
    baseline_step: int = 3000
    grace: Optional[int] = None
    stop_after_grok: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self):
        if self.steps < 0 or self.steps % self.log_every:
            raise ValueError("steps must be a non-negative multiple of log_every")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def detector(self) -> DetectorConfig:
        return DetectorConfig(baseline_step=self.baseline_step, log_every=self.log_every)

    def task_spec(self, seed: int) -> TaskSpec:
        return TaskSpec(self.task, self.p, self.frac, split_seed=seed + SPLIT_OFFSET)

    def model_config(self, dataset, seed: int) -> ModelConfig:
        return ModelConfig(vocab_size=dataset.vocab_size, n_classes=dataset.n_classes,
                           d_model=self.d_model, n_heads=self.heads, n_layers=self.layers,
                           init_seed=seed + INIT_OFFSET, init_scheme=self.init_scheme)

    def run_key(self) -> dict:
        """Fields that influence a run's trajectory (seed list and output path excluded)."""
        d = asdict(self)
        d.pop("seeds")
        d.pop("out")
        return d


MODES = {
    "accelerate_lr": (5.0, 1.0),
    "accelerate_wd": (1.0, 3.0),
    "accelerate_both": (5.0, 3.0),
    "suppress_lr": (0.1, 1.0),
    "suppress_wd": (1.0, 0.1),
}


@dataclass(frozen=True)
class InterventionPolicy:
    mode: str
    lr_scale: float
    wd_scale: float
    revert_after: int = 500

    @classmethod
    def from_mode(cls, mode: str, revert_after: int = 500) -> "InterventionPolicy":
        if mode not in MODES:
            raise ValueError(f"unknown intervention mode {mode!r}; choose from {sorted(MODES)}")
        lr_scale, wd_scale = MODES[mode]
        return cls(mode, lr_scale, wd_scale, revert_after)

    def __post_init__(self):
        if self.lr_scale <= 0 or self.wd_scale < 0 or self.revert_after < 1:
            raise ValueError("invalid intervention policy")


def run_training(config: ExperimentConfig, seed: int,
                 policy: Optional[InterventionPolicy] = None) -> RunLog:
    """Train one model and record a metric snapshot every ``log_every`` steps.

    Each step: sample batch, forward, cross-entropy, backward, passive EMA
    update, optimizer step. Stops at ``steps``, at ``grace`` steps after the
    ILDR flag when early stopping is configured, or ``stop_after_grok`` steps
    after grokking when that is set.
    """
    dataset = make_dataset(config.task_spec(seed))
    model = Transformer(config.model_config(dataset, seed))
    opt = AdamW(model.params, lr=config.lr, weight_decay=config.wd)
    grokfast = GrokfastState()
    train_rng = np.random.default_rng(seed + TRAIN_OFFSET)
    eval_idx = subsample(dataset.test_idx, config.subsample, seed + METRIC_OFFSET)

    run = RunLog(config=json.loads(json.dumps(asdict(config))), seed=seed, detector=DetectorState(config.detector))
    pending_revert: Optional[dict] = None
    train_time = metric_time = 0.0

    for step in range(1, config.steps + 1):
        t0 = time.perf_counter()
        tokens, labels = sample_batch(dataset, "train", config.batch_size, train_rng)
        logits, _ = model.forward(tokens)
        loss = T.cross_entropy(logits, labels)
        if not math.isfinite(float(loss.data)):
            run.diverged, run.diverged_step = True, step
            log.warning("seed %d diverged at step %d", seed, step)
            break
        model.zero_grad()
        loss.backward()
        grokfast.update({n: p.grad for n, p in model.params.items()})
        opt.step()
        train_time += time.perf_counter() - t0

        if pending_revert is not None and step == pending_revert["revert_step"]:
            opt.set_hyperparams(lr=pending_revert["lr_before"], wd=pending_revert["wd_before"])
            pending_revert = None

        if step % config.log_every:
            continue
        t0 = time.perf_counter()
        snap = snapshot_metrics(model, dataset, eval_idx, grokfast, step, opt.lr, opt.weight_decay)
        metric_time += time.perf_counter() - t0
        run.snapshots.append(snap)
        events = run.detector.update(snap)
        log.info("seed %d step %d train %.3f val %.3f ildr %.4g wn %.4g gf %.4g %s", seed, step,
                 snap.train_acc, snap.val_acc, snap.ildr, snap.weight_norm, snap.grokfast_norm,
                 " ".join(events))

        if policy is not None and "ildr" in events and not run.interventions:
            event = {
                "mode": policy.mode,
                "trigger_step": step,
                "lr_before": opt.lr,
                "wd_before": opt.weight_decay,
                "lr_after": opt.lr * policy.lr_scale,
                "wd_after": opt.weight_decay * policy.wd_scale,
                "revert_step": step + policy.revert_after,
            }
            opt.set_hyperparams(lr=event["lr_after"], wd=event["wd_after"])
            run.interventions.append(event)
            pending_revert = event

        flag = run.detector.flags["ildr"]
        if config.grace is not None and flag is not None and step >= flag + config.grace:
            run.early_stop_step = step
            run.val_at_grace = snap.val_acc
            break
        grok = run.detector.grok_step
        if config.stop_after_grok is not None and grok is not None and step >= grok + config.stop_after_grok:
            break

    if policy is not None and not run.interventions:
        log.info("seed %d: ILDR flag never fired, run completed without intervention", seed)
    run.timings = {"train_seconds": train_time, "metric_seconds": metric_time}
    return run


def run_intervention(config: ExperimentConfig, policy: InterventionPolicy, seed: int) -> RunLog:
    return run_training(config, seed, policy)


def _cache_stem(cache_dir, config: ExperimentConfig, seed: int, policy) -> Path:
    key = {"config": config.run_key(), "seed": seed, "policy": asdict(policy) if policy else None}
    digest = hashlib.sha1(json.dumps(key, sort_keys=True).encode()).hexdigest()[:12]
    tag = policy.mode if policy else "base"
    frac = f"{config.frac:g}".replace(".", "p")
    return Path(cache_dir) / f"{config.task}_p{config.p}_f{frac}_s{seed}_{tag}_{digest}"


def cached_run(config: ExperimentConfig, seed: int, policy: Optional[InterventionPolicy] = None,
               cache_dir=None) -> RunLog:
    """``run_training`` with results persisted under ``cache_dir`` keyed by configuration.

    A cached log is re-read from disk, so its floats carry CSV precision.
    """
    if cache_dir is None:
        return run_training(config, seed, policy)
    stem = _cache_stem(cache_dir, config, seed, policy)
    if run_paths(stem)[0].exists() and run_paths(stem)[1].exists():
        return read_run(stem)
    run = run_training(config, seed, policy)
    write_run(run, stem)
    return read_run(stem)


# ---------------------------------------------------------------------------
# experiment drivers


@dataclass
class EarlyStopRow:
    seed: int
    grok: Optional[int]
    flag: Optional[int]
    stop_step: Optional[int]
    steps_saved: Optional[int]
    saved_pct: Optional[float]
    val_at_grace: Optional[float]
    weight_norm_flag: Optional[int]
    grokfast_flag: Optional[int]
    excluded: str = ""


def run_early_stopping(config: ExperimentConfig, seeds: Sequence[int], grace: int = EARLY_STOP_GRACE,
                       cache_dir=None) -> dict:
    """Stop each seed ``grace`` steps after its ILDR flag and compare with a paired full run.

    ``steps_saved`` is the full run's grok step minus the step training stopped
    at; it counts steps whether or not the stopped model had generalised.
    """
    full_cfg = replace(config, grace=None)
    stop_cfg = replace(config, grace=grace, stop_after_grok=None)
    rows = []
    for seed in seeds:
        full = cached_run(full_cfg, seed, cache_dir=cache_dir)
        stopped = cached_run(stop_cfg, seed, cache_dir=cache_dir)
        row = EarlyStopRow(seed, full.grok_step, stopped.flags["ildr"], stopped.early_stop_step,
                           None, None, stopped.val_at_grace,
                           full.flags["weight_norm"], full.flags["grokfast"])
        if stopped.early_stop_step is None:
            row.excluded = "no ILDR flag"
        elif full.grok_step is None:
            row.excluded = "paired run did not grok"
        else:
            row.steps_saved = full.grok_step - stopped.early_stop_step
            row.saved_pct = 100.0 * row.steps_saved / full.grok_step
        rows.append(row)
    kept = [r.saved_pct for r in rows if r.saved_pct is not None]
    return {
        "rows": rows,
        "mean_saved_pct": float(np.mean(kept)) if kept else None,
        "excluded": [r.seed for r in rows if r.excluded],
    }


@dataclass(frozen=True)
class OscillationStats:
    cv_pre: float
    cv_post: float
    variance_ratio: float
    n_pre: int
    n_post: int


def _cv(x: np.ndarray) -> float:
    m = x.mean()
    return float(100.0 * x.std() / m) if m else float("inf")


def oscillation_stats(runlog_or_series, grok_step: Optional[int] = None) -> OscillationStats:
    """Compare the ILDR series before and after the grok step.

    pre: checkpoints with step < grok_step; post: step >= grok_step.
    CV = population std / mean in percent; variance_ratio = var_pre / var_post,
    capped at ``VARIANCE_RATIO_CAP`` when the post-grok series is constant.
    Accepts a RunLog or a sequence of ``(step, ildr)`` pairs.
    """
    if isinstance(runlog_or_series, RunLog):
        pairs = [(s.step, s.ildr) for s in runlog_or_series.snapshots]
        grok_step = grok_step if grok_step is not None else runlog_or_series.grok_step
    else:
        pairs = list(runlog_or_series)
    if grok_step is None:
        raise ValueError("run did not grok; oscillation statistics need a grok step")
    pre = np.array([v for s, v in pairs if s < grok_step], dtype=np.float64)
    post = np.array([v for s, v in pairs if s >= grok_step], dtype=np.float64)
    if len(pre) < 2 or len(post) < 2:
        raise ValueError("need at least two checkpoints on each side of the grok step")
    var_pre, var_post = pre.var(), post.var()
    if var_post == 0:
        ratio = VARIANCE_RATIO_CAP if var_pre > 0 else 1.0
    else:
        ratio = min(var_pre / var_post, VARIANCE_RATIO_CAP)
    return OscillationStats(_cv(pre), _cv(post), float(ratio), len(pre), len(post))


# ---------------------------------------------------------------------------
# timing


def _time_ms(fn, repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


@dataclass
class BenchResult:
    train_step_ms: float
    weight_norm_ms: float
    spectral_entropy_ms: float
    ildr_ms: dict  # N -> forward pass over N held-out rows plus ILDR
    ildr_metric_ms: dict  # N -> ILDR arithmetic alone on precomputed representations
    overhead_pct: dict  # log_every -> amortised ILDR overhead at reference_n
    reference_n: int


def bench_overhead(config: ExperimentConfig = ExperimentConfig(), sample_sizes=(100, 250, 500, 750, 1000, 1500, 2000),
                   log_frequencies=(50, 100, 200, 500, 1000), repeats: int = 40, warmup: int = 5,
                   reference_n: int = 1000, seed: int = 0) -> BenchResult:
    """Wall-clock cost of a training step and of each checkpoint metric.

    Overhead at a logging interval k is (ILDR time / k) / step time * 100,
    using the ILDR time at ``reference_n`` samples.
    """
    dataset = make_dataset(config.task_spec(seed))
    model = Transformer(config.model_config(dataset, seed))
    opt = AdamW(model.params, lr=config.lr, weight_decay=config.wd)
    grokfast = GrokfastState()
    rng = np.random.default_rng(seed + TRAIN_OFFSET)

    def train_step():
        tokens, labels = sample_batch(dataset, "train", config.batch_size, rng)
        logits, _ = model.forward(tokens)
        loss = T.cross_entropy(logits, labels)
        model.zero_grad()
        loss.backward()
        grokfast.update({n: p.grad for n, p in model.params.items()})
        opt.step()

    step_ms = _time_ms(train_step, repeats, warmup)
    wn_ms = _time_ms(lambda: weight_norm(model.params), repeats, warmup)
    se_ms = _time_ms(lambda: spectral_entropy(model.params), repeats, warmup)

    sizes = sorted(set(sample_sizes) | {reference_n})
    ildr_ms, metric_ms = {}, {}
    for n in sizes:
        idx = subsample(dataset.test_idx, n, seed + METRIC_OFFSET)
        tokens, labels = dataset.sequences[idx], dataset.labels[idx]
        ildr_ms[n] = _time_ms(lambda: ildr(representations(model, tokens), labels), repeats, warmup)
        phi = representations(model, tokens)
        metric_ms[n] = _time_ms(lambda: ildr(phi, labels), repeats, warmup)
    overhead = {k: amortised_overhead(ildr_ms[reference_n], k, step_ms) for k in log_frequencies}
    return BenchResult(step_ms, wn_ms, se_ms,
                       {n: ildr_ms[n] for n in sample_sizes},
                       {n: metric_ms[n] for n in sample_sizes}, overhead, reference_n)


def amortised_overhead(metric_ms: float, log_every: int, step_ms: float) -> float:
    return 100.0 * (metric_ms / log_every) / step_ms
