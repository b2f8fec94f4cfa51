"""Desk-scale training runs used by the acceptance suite.

Runs are cached on disk (CSV + JSON per run) keyed by their configuration, so
the suite re-reads finished runs instead of retraining. Populate the cache
ahead of time with::

    python tests/acceptance_plan.py

The cache location defaults to ``acceptance_runs/`` at the repository root and
can be moved with ``GROKWATCH_ACCEPTANCE_CACHE``.
"""

from __future__ import annotations

import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from grokwatch.harness import ExperimentConfig, InterventionPolicy, cached_run, run_early_stopping

CACHE = Path(os.environ.get("GROKWATCH_ACCEPTANCE_CACHE",
                            Path(__file__).resolve().parent.parent / "acceptance_runs"))

SEEDS = (0, 1, 2)
PAIRED_SEEDS = (0, 1)

# mod-97 multiplication, f = 0.3, one layer, d = 128, 20k step budget; runs end
# 3000 steps after grokking, which leaves room for the weight-norm flag
BASE = ExperimentConfig(steps=20_000, stop_after_grok=3000)
OSCILLATION = ExperimentConfig(steps=30_000)
FRAC_LOW = replace(BASE, frac=0.2)
FRAC_HIGH = replace(BASE, frac=0.5)


def base_run(seed):
    return cached_run(BASE, seed, cache_dir=CACHE)


def intervention_run(mode, seed):
    return cached_run(BASE, seed, InterventionPolicy.from_mode(mode), cache_dir=CACHE)


def early_stopping():
    return run_early_stopping(BASE, SEEDS, grace=200, cache_dir=CACHE)


def oscillation_run():
    return cached_run(OSCILLATION, 0, cache_dir=CACHE)


def frac_run(frac):
    cfg = {0.2: FRAC_LOW, 0.3: BASE, 0.5: FRAC_HIGH}[frac]
    return cached_run(cfg, 0, cache_dir=CACHE)


def prewarm():
    jobs = [lambda s=s: base_run(s) for s in SEEDS]
    jobs += [early_stopping, lambda: frac_run(0.5), lambda: frac_run(0.2)]
    jobs += [lambda m=m, s=s: intervention_run(m, s)
             for m in ("accelerate_both", "suppress_wd") for s in PAIRED_SEEDS]
    jobs.append(oscillation_run)
    for job in jobs:
        job()


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stdout)
    prewarm()
