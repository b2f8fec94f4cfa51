from dataclasses import replace

import numpy as np
import pytest

from grokwatch import tensor as T
from grokwatch.harness import (
    VARIANCE_RATIO_CAP,
    ExperimentConfig,
    InterventionPolicy,
    amortised_overhead,
    bench_overhead,
    cached_run,
    oscillation_stats,
    run_early_stopping,
    run_intervention,
    run_training,
)
from grokwatch.runlog import CSV_COLUMNS, read_csv_rows, read_run, write_run

# small enough to train in a few seconds; seed 0 raises its ILDR flag at step 600
TINY = ExperimentConfig(p=11, frac=0.5, d_model=32, heads=2, steps=800, log_every=20, batch_size=64,
                        subsample=200, baseline_step=40, lr=1e-2)


@pytest.fixture(scope="module")
def tiny_run():
    return run_training(TINY, 0)


def test_snapshot_cadence(tiny_run):
    steps = [s.step for s in tiny_run.snapshots]
    assert steps == list(range(20, 801, 20))
    assert tiny_run.flags["ildr"] == 600
    assert tiny_run.timings["train_seconds"] > 0


def test_zero_step_run():
    run = run_training(replace(TINY, steps=0), 0)
    assert run.snapshots == [] and run.grok_step is None
    assert all(v is None for v in run.flags.values())


def test_runs_are_deterministic(tiny_run):
    again = run_training(replace(TINY, steps=200), 0)
    assert again.snapshots == tiny_run.snapshots[:10]


def test_seed_streams_are_independent():
    a = TINY.task_spec(0), TINY.model_config(type("D", (), {"vocab_size": 12, "n_classes": 11}), 0)
    b = TINY.task_spec(1), TINY.model_config(type("D", (), {"vocab_size": 12, "n_classes": 11}), 1)
    assert a[0].split_seed != b[0].split_seed and a[1].init_seed != b[1].init_seed
    assert a[0].split_seed != a[1].init_seed


def test_intervention_paired_prefix_and_exact_revert(tiny_run):
    policy = InterventionPolicy.from_mode("accelerate_both", revert_after=100)
    run = run_intervention(TINY, policy, 0)
    (event,) = run.interventions
    assert event["trigger_step"] == 600 and event["revert_step"] == 700
    assert event["lr_after"] == pytest.approx(5 * TINY.lr) and event["wd_after"] == pytest.approx(3 * TINY.wd)
    # identical up to and including the trigger checkpoint
    n = 600 // TINY.log_every
    assert run.snapshots[:n] == tiny_run.snapshots[:n]
    by_step = {s.step: s for s in run.snapshots}
    for step in (620, 680):
        assert by_step[step].lr == 5 * TINY.lr and by_step[step].wd == 3 * TINY.wd
    for step in (700, 800):
        assert by_step[step].lr == TINY.lr and by_step[step].wd == TINY.wd


def test_intervention_without_trigger_runs_unmodified():
    cfg = replace(TINY, steps=200)
    run = run_intervention(cfg, InterventionPolicy.from_mode("suppress_wd"), 0)
    assert run.interventions == []
    assert run.snapshots == run_training(cfg, 0).snapshots


def test_policy_modes():
    assert InterventionPolicy.from_mode("suppress_lr").lr_scale == 0.1
    assert InterventionPolicy.from_mode("accelerate_wd").wd_scale == 3.0
    with pytest.raises(ValueError):
        InterventionPolicy.from_mode("sideways")


def test_early_stop_at_flag_plus_grace():
    run = run_training(replace(TINY, grace=60), 0)
    assert run.early_stop_step == 660 and run.final_step == 660
    assert run.val_at_grace == run.snapshots[-1].val_acc


def test_early_stopping_summary(tmp_path):
    out = run_early_stopping(TINY, [0, 1], grace=60, cache_dir=tmp_path)
    row0, row1 = out["rows"]
    assert row0.stop_step == 660 and row0.flag == 600
    # neither tiny run groks, so both seeds are excluded and reported
    assert row0.excluded and row1.excluded
    assert out["excluded"] == [0, 1] and out["mean_saved_pct"] is None


def test_diverged_run_is_marked(monkeypatch):
    real = T.cross_entropy
    calls = {"n": 0}

    def flaky(logits, labels):
        calls["n"] += 1
        loss = real(logits, labels)
        if calls["n"] == 30:
            loss.data = np.array(np.nan)
        return loss

    monkeypatch.setattr(T, "cross_entropy", flaky)
    run = run_training(replace(TINY, steps=100), 0)
    assert run.diverged and run.diverged_step == 30
    assert [s.step for s in run.snapshots] == [20]


def test_cached_run_round_trip(tmp_path):
    cfg = replace(TINY, steps=100)
    first = cached_run(cfg, 0, cache_dir=tmp_path)
    files = sorted(p.name for p in tmp_path.iterdir())
    assert len(files) == 2
    second = cached_run(cfg, 0, cache_dir=tmp_path)
    assert first.snapshots == second.snapshots
    assert first.snapshots == run_training(cfg, 0).rounded().snapshots


def test_runlog_csv_round_trip(tiny_run, tmp_path):
    csv_path = write_run(tiny_run, tmp_path / "run")
    rows = read_csv_rows(csv_path)
    assert list(rows[0]) == CSV_COLUMNS and len(rows) == 40
    assert rows[28]["flag_ildr_step"] == "" and rows[29]["flag_ildr_step"] == "600"
    back = read_run(tmp_path / "run")
    expected = tiny_run.rounded()
    assert back.snapshots == expected.snapshots
    assert back.detector == expected.detector
    assert back.config == tiny_run.config and back.seed == 0
    write_run(back, tmp_path / "again")
    assert (tmp_path / "again.csv").read_bytes() == csv_path.read_bytes()


def test_read_rejects_wrong_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("step,val\n100,0.5\n")
    with pytest.raises(ValueError):
        read_csv_rows(path)


def test_oscillation_examples():
    pre = [(s, v) for s, v in zip(range(100, 600, 100), [1.0, 3.0, 1.0, 3.0, 2.0])]
    post_const = [(s, 5.0) for s in range(600, 1000, 100)]
    stats = oscillation_stats(pre + post_const, grok_step=600)
    assert stats.cv_post == 0.0 and stats.variance_ratio == VARIANCE_RATIO_CAP
    assert (stats.n_pre, stats.n_post) == (5, 4)
    values = [1.0, 3.0, 1.0, 3.0]
    same = [(100 * (i + 1), v) for i, v in enumerate(values + values)]
    stats = oscillation_stats(same, grok_step=500)
    assert stats.variance_ratio == 1.0 and stats.cv_pre == stats.cv_post == pytest.approx(50.0)


def test_oscillation_errors():
    with pytest.raises(ValueError):
        oscillation_stats([(100, 1.0), (200, 2.0), (300, 1.0)], grok_step=200)
    with pytest.raises(ValueError):
        oscillation_stats([(100, 1.0), (200, 2.0)], grok_step=None)


def test_amortised_overhead_scaling():
    assert amortised_overhead(82.0, 100, 3.31) == pytest.approx(24.77, abs=0.01)
    assert amortised_overhead(82.0, 200, 3.31) == pytest.approx(amortised_overhead(82.0, 100, 3.31) / 2)
    assert amortised_overhead(82.0, 10**12, 3.31) < 1e-8


def test_bench_overhead_small():
    res = bench_overhead(replace(TINY, batch_size=32), sample_sizes=(50, 100), log_frequencies=(50, 100, 200),
                         repeats=3, warmup=1, reference_n=100)
    assert set(res.ildr_ms) == {50, 100} and set(res.ildr_metric_ms) == {50, 100}
    assert res.train_step_ms > 0 and res.spectral_entropy_ms > 0 and res.weight_norm_ms > 0
    o = res.overhead_pct
    assert o[50] > o[100] > o[200]
    assert o[100] == pytest.approx(2 * o[200])


def test_cache_keys_distinguish_fractions_and_seeds(tmp_path):
    cfg = replace(TINY, steps=40)
    for frac in (0.3, 0.5):
        for seed in (0, 1):
            cached_run(replace(cfg, frac=frac), seed, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("*.csv"))) == 4
    assert len(list(tmp_path.glob("*.json"))) == 4


def test_dotted_stem_keeps_its_name(tiny_run, tmp_path):
    write_run(tiny_run, tmp_path / "run_f0.3")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["run_f0.3.csv", "run_f0.3.json"]
    assert read_run(tmp_path / "run_f0.3").snapshots == tiny_run.rounded().snapshots
