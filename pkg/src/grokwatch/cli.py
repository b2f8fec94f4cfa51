"""Command-line entry point: ``grokwatch {train,intervene,early-stop,oscillate,bench,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .harness import (
    MODES,
    ExperimentConfig,
    InterventionPolicy,
    bench_overhead,
    cached_run,
    oscillation_stats,
    run_early_stopping,
)
from .report import csv_table, emit_report, markdown_table
from .runlog import read_run, write_run

# CLI flag -> ExperimentConfig field
FLAG_FIELDS = {
    "task": "task", "p": "p", "frac": "frac", "seeds": "seeds", "steps": "steps",
    "d_model": "d_model", "heads": "heads", "layers": "layers", "log_every": "log_every",
    "batch_size": "batch_size", "lr": "lr", "wd": "wd", "subsample": "subsample",
    "baseline_step": "baseline_step", "stop_after_grok": "stop_after_grok", "out": "out",
}


def parse_config_file(path) -> dict:
    """Read flat ``key = value`` lines; keys use CLI flag spelling (``d-model`` or ``d_model``)."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key == "seed":
            key = "seeds"
        if key not in FLAG_FIELDS and key not in ("mode", "cache"):
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = val
    return values


def _coerce(name: str, raw):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if name == "seeds":
        if isinstance(raw, (list, tuple)):
            return tuple(int(s) for s in raw)
        return tuple(int(s) for s in str(raw).replace(",", " ").split())
    t = str(types.get(name, "str"))
    if raw is None or (isinstance(raw, str) and raw.lower() == "none"):
        return None
    if "int" in t:
        return int(raw)
    if "float" in t:
        return float(raw)
    return str(raw)


def build_config(args) -> ExperimentConfig:
    settings = parse_config_file(args.config) if getattr(args, "config", None) else {}
    for flag in FLAG_FIELDS:
        val = getattr(args, flag, None)
        if val is not None:
            settings[flag] = val
    if "steps" not in settings and settings.get("task") == "s5":
        settings["steps"] = 40_000
    if settings.get("task") == "s5":
        settings.setdefault("layers", 2)
        settings.setdefault("d_model", 256)
    for key in ("mode", "cache"):
        if key in settings and getattr(args, key, None) is None:
            setattr(args, key, settings[key])
    kwargs = {FLAG_FIELDS[k]: _coerce(FLAG_FIELDS[k], v) for k, v in settings.items() if k in FLAG_FIELDS}
    return ExperimentConfig(**kwargs)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stem(cfg: ExperimentConfig, seed: int, tag: str) -> Path:
    return _out_dir(cfg) / f"{cfg.task}_p{cfg.p}_f{cfg.frac}_seed{seed}_{tag}"


def cmd_train(args) -> int:
    cfg = build_config(args)
    runs = []
    for seed in cfg.seeds:
        run = cached_run(cfg, seed, cache_dir=args.cache)
        path = write_run(run, _stem(cfg, seed, "train"))
        print(f"wrote {path}", file=sys.stderr)
        runs.append(run)
    print(emit_report(runs, csv_path=_out_dir(cfg) / "report.csv"), end="")
    return 0


def cmd_intervene(args) -> int:
    cfg = build_config(args)
    if not args.mode:
        raise SystemExit("--mode is required for intervene")
    policy = InterventionPolicy.from_mode(args.mode)
    header = ["config", "seed", "grok", "intervene", "lr_change", "wd_change", "lead"]
    rows = []
    for seed in cfg.seeds:
        base = cached_run(cfg, seed, cache_dir=args.cache)
        run = cached_run(cfg, seed, policy, cache_dir=args.cache)
        write_run(base, _stem(cfg, seed, "baseline"))
        write_run(run, _stem(cfg, seed, policy.mode))
        ev = run.interventions[0] if run.interventions else None
        lead = (base.grok_step - run.grok_step) if base.grok_step and run.grok_step else None
        rows.append(["baseline", seed, base.grok_step, None, None, None, None])
        rows.append([policy.mode, seed, run.grok_step,
                     ev["trigger_step"] if ev else "no-trigger",
                     f"{ev['lr_before']:g}->{ev['lr_after']:g}" if ev else None,
                     f"{ev['wd_before']:g}->{ev['wd_after']:g}" if ev else None, lead])
    (_out_dir(cfg) / f"intervene_{policy.mode}.csv").write_text(csv_table(header, rows))
    print(markdown_table(header, rows), end="")
    return 0


def cmd_early_stop(args) -> int:
    cfg = build_config(args)
    res = run_early_stopping(cfg, cfg.seeds, cache_dir=args.cache)
    header = ["seed", "grok", "ildr_flag", "stop_step", "steps_saved", "saved_pct",
              "val_grace_pct", "weight_norm_flag", "grokfast_flag", "excluded"]
    rows = [[r.seed, r.grok, r.flag, r.stop_step, r.steps_saved,
             None if r.saved_pct is None else f"{r.saved_pct:.1f}",
             None if r.val_at_grace is None else f"{100 * r.val_at_grace:.1f}",
             r.weight_norm_flag, r.grokfast_flag, r.excluded or None] for r in res["rows"]]
    (_out_dir(cfg) / "early_stop.csv").write_text(csv_table(header, rows))
    print(markdown_table(header, rows), end="")
    mean = res["mean_saved_pct"]
    print(f"\nMean steps saved: {'---' if mean is None else f'{mean:.1f}%'}")
    return 0


def cmd_oscillate(args) -> int:
    if args.steps is None and not args.config:
        args.steps = 30_000
    cfg = build_config(args)
    header = ["seed", "grok", "cv_pre_pct", "cv_post_pct", "variance_ratio"]
    rows = []
    for seed in cfg.seeds:
        run = cached_run(cfg, seed, cache_dir=args.cache)
        write_run(run, _stem(cfg, seed, "oscillate"))
        if run.grok_step is None:
            rows.append([seed, None, None, None, None])
            continue
        st = oscillation_stats(run)
        rows.append([seed, run.grok_step, f"{st.cv_pre:.1f}", f"{st.cv_post:.1f}", f"{st.variance_ratio:.4g}"])
    (_out_dir(cfg) / "oscillation.csv").write_text(csv_table(header, rows))
    print(markdown_table(header, rows), end="")
    return 0


def cmd_bench(args) -> int:
    cfg = build_config(args)
    res = bench_overhead(cfg, repeats=args.repeats, seed=cfg.seeds[0])
    top = [["Train step", f"{res.train_step_ms:.2f}", "100.0"]]
    for label, ms in (("Weight norm", res.weight_norm_ms), ("Spectral entropy", res.spectral_entropy_ms),
                      (f"ILDR (N={res.reference_n})", res.ildr_ms.get(res.reference_n, float("nan")))):
        top.append([label, f"{ms:.2f}", f"{100 * ms / res.train_step_ms:.1f}"])
    sizes = [[n, f"{res.ildr_ms[n]:.2f}", f"{res.ildr_metric_ms[n]:.3f}"] for n in res.ildr_ms]
    freq = [[k, f"{v:.2f}"] for k, v in res.overhead_pct.items()]
    out = _out_dir(cfg)
    (out / "bench_methods.csv").write_text(csv_table(["method", "ms", "pct_of_step"], top))
    (out / "bench_sizes.csv").write_text(csv_table(["n", "ildr_ms", "ildr_metric_only_ms"], sizes))
    (out / "bench_overhead.csv").write_text(csv_table(["log_every", "overhead_pct"], freq))
    print(markdown_table(["method", "ms", "% of train step"], top))
    print(markdown_table(["n", "ILDR ms (forward + metric)", "metric only ms"], sizes))
    print(markdown_table(["log_every", "overhead %"], freq), end="")
    return 0


def cmd_report(args) -> int:
    paths = []
    for p in args.runs:
        p = Path(p)
        paths += sorted(p.glob("*.csv")) if p.is_dir() else [p]
    runs = []
    for p in paths:
        try:
            runs.append(read_run(p))
        except ValueError:
            continue  # not a run CSV (e.g. a report table)
    if not runs:
        raise SystemExit("no run CSVs found")
    print(emit_report(runs, csv_path=args.out), end="")
    return 0


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value file; command-line flags override it")
    p.add_argument("--task", choices=["add", "mul", "div", "s5"])
    p.add_argument("--p", type=int)
    p.add_argument("--frac", type=float)
    p.add_argument("--seed", "--seeds", dest="seeds", type=int, nargs="+")
    p.add_argument("--steps", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--wd", type=float)
    p.add_argument("--subsample", type=int)
    p.add_argument("--baseline-step", dest="baseline_step", type=int)
    p.add_argument("--stop-after-grok", dest="stop_after_grok", type=int)
    p.add_argument("--out", help="output directory for run CSVs and tables")
    p.add_argument("--cache", help="reuse runs stored in this directory")
    p.add_argument("-v", "--verbose", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grokwatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("train", cmd_train, "train seeds and report flag lead times"),
        ("intervene", cmd_intervene, "ILDR-triggered optimizer intervention vs paired baseline"),
        ("early-stop", cmd_early_stop, "stop at ILDR flag + 200 steps and count steps saved"),
        ("oscillate", cmd_oscillate, "pre/post-grok ILDR variability on a long run"),
        ("bench", cmd_bench, "time training step and metric evaluations"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        p.set_defaults(func=fn)
        if name == "intervene":
            p.add_argument("--mode", choices=sorted(MODES))
        if name == "bench":
            p.add_argument("--repeats", type=int, default=40)
    p = sub.add_parser("report", help="summarise existing run CSVs")
    p.add_argument("runs", nargs="+", help="run CSV files or directories")
    p.add_argument("--out", help="write the per-seed summary CSV here")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
