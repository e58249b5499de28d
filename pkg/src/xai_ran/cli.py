"""Command-line front door.

Subcommands: gen-trace, train, run, evaluate, compare, latency-table,
report. Every run writes a config.json with the effective values so any
artifact is reproducible from that file plus this package version.
``report`` additionally renders the figures behind the fidelity and
latency tables.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, plots
from .errors import XaiRanError
from .explain import BaselineSpec, Method, explain
from .fidelity import NeighborhoodConfig, featurewise_fidelity, temporal_fidelity
from .latency import (
    Budget,
    benchmark_method,
    fit_model_params,
    latency_table,
)
from .model import (
    TrainConfig,
    forward_norm,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .pipeline import PipelineOptions, run_pipeline
from .stats import paired_delta, summarize
from .trace import BurstConfig, generate_trace, read_trace_csv, window_iter, write_trace_csv


def _default_seed(fallback: int) -> int:
    env = os.environ.get("XAI_RAN_SEED")
    return int(env) if env else fallback


def _write_config(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "version": __version__}
    payload.update({k: v for k, v in sorted(vars(args).items())
                    if k != "func" and not k.startswith("_")})
    with open(out_dir / "config.json", "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _load_trace(args):
    if getattr(args, "trace", None):
        return read_trace_csv(args.trace)
    cfg = BurstConfig(seed=_default_seed(42))
    return generate_trace(cfg)


def _load_model(args):
    if getattr(args, "checkpoint", None):
        return load_checkpoint(args.checkpoint)
    raise XaiRanError("no --checkpoint given; run `train` first")


def _add_trace_flags(p):
    p.add_argument("--period", type=int, default=20)
    p.add_argument("--duty", type=float, default=0.5)
    p.add_argument("--th-high", type=float, default=100.0)
    p.add_argument("--th-low", type=float, default=10.0)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--length", type=int, default=2000)


def cmd_gen_trace(args) -> int:
    cfg = BurstConfig(period=args.period, duty=args.duty, th_high=args.th_high,
                      th_low=args.th_low, noise_std=args.noise_std,
                      length=args.length, seed=args.seed)
    trace = generate_trace(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out)
    with open(str(out) + ".config.json", "w", newline="\n") as fh:
        json.dump({"command": "gen-trace", **cfg.__dict__}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(trace)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    trace = _load_trace(args)
    out_dir = Path(args.out_dir)
    _write_config(out_dir, "train", args)
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, seed=args.seed,
                      train_frac=args.train_frac, hidden=args.hidden)
    params, norm, report = train(trace, w=args.w, horizon=args.horizon, config=cfg)
    save_checkpoint(out_dir / "model.ckpt", params, norm)
    with open(out_dir / "training.json", "w", newline="\n") as fh:
        json.dump({
            "n_train": report.n_train, "n_val": report.n_val,
            "final_train_mse": report.train_mse[-1],
            "final_val_mse": report.val_mse[-1],
            "val_rmse_mbps": report.val_rmse_mbps, "val_r2": report.val_r2,
            "train_mse": report.train_mse, "val_mse": report.val_mse,
        }, fh, indent=2)
        fh.write("\n")
    print(f"trained on {report.n_train} windows; "
          f"val RMSE {report.val_rmse_mbps:.2f} Mbps, val R2 {report.val_r2:.3f}")
    print(f"checkpoint: {out_dir / 'model.ckpt'}")
    return 0


def cmd_run(args) -> int:
    trace = _load_trace(args)
    params, norm = _load_model(args)
    out_dir = Path(args.out_dir)
    _write_config(out_dir, "run", args)
    opts = PipelineOptions(
        method=Method.parse(args.method), k=args.k, m=args.m, seed=args.seed,
        budget=Budget(args.budget_ms * 1e-3),
        online_fidelity=args.online_fidelity, threaded=args.threaded,
        max_cycles=args.cycles,
    )
    log = run_pipeline(trace, params, norm, opts)
    log.write_jsonl(out_dir / "pipeline.jsonl", canonical=args.canonical)
    print(json.dumps(log.summary()))
    return 0


def _completeness_gap(params, norm, window, attribution) -> float:
    x = norm.normalize(window.to_matrix())
    b = BaselineSpec().resolve(x, norm)
    f_x, _ = forward_norm(params, x, norm.target_std, norm.target_mean)
    f_b, _ = forward_norm(params, b, norm.target_std, norm.target_mean)
    span = abs(f_x - f_b)
    gap = abs(float(attribution.e.sum()) - (f_x - f_b))
    return gap / span if span > 1e-12 else gap


def _series_csv(path, method: str, reports, gaps=None) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["window", "method", "r2", "phi", "k_used", "r2_raw"]
        if gaps is not None:
            header.append("completeness_gap")
        writer.writerow(header)
        for i, r in enumerate(reports):
            row = [r.window_index, method, f"{r.r2.reported:.9g}",
                   "" if r.phi is None else f"{r.phi:.9g}",
                   "" if r.k_used is None else r.k_used,
                   f"{r.r2.raw:.9g}"]
            if gaps is not None:
                row.append(f"{gaps[i]:.9g}")
            writer.writerow(row)


def _evaluate_method(trace, params, norm, method: Method, args, out_dir: Path):
    cfg = NeighborhoodConfig(n_samples=args.n_samples,
                             perturb_std=args.perturb_std, seed=args.seed)
    tf = temporal_fidelity(trace, params, norm, method, cfg,
                           k=args.k, m=args.m, max_windows=args.max_windows)
    gaps = None
    if method in (Method.IG, Method.HYBRID):
        gaps = []
        for idx, (window, _t) in enumerate(window_iter(trace)):
            if args.max_windows is not None and idx >= args.max_windows:
                break
            att = explain(method, params, window, norm, k=args.k, seed=args.seed ^ idx)
            gaps.append(_completeness_gap(params, norm, window, att))
    _series_csv(out_dir / f"fidelity_{method.value}.csv", method.value, tf.series, gaps)
    summary = summarize([r.r2.reported for r in tf.series if not r.r2.degenerate],
                        excluded_count=tf.excluded)
    if gaps:
        summary["median_completeness_gap"] = float(np.median(gaps))
    return tf, summary


def cmd_evaluate(args) -> int:
    trace = _load_trace(args)
    params, norm = _load_model(args)
    out_dir = Path(args.out_dir)
    _write_config(out_dir, "evaluate", args)
    method = Method.parse(args.method)
    tf, summary = _evaluate_method(trace, params, norm, method, args, out_dir)
    with open(out_dir / f"summary_{method.value}.json", "w", newline="\n") as fh:
        json.dump({"method": method.value, "k": args.k, "m": args.m, **summary},
                  fh, indent=2)
        fh.write("\n")
    print(f"{method.value}: mean R2 {summary['mean']:.4f} "
          f"(sigma {summary['std']:.4f}, n {summary['count']})")
    return 0


TABLE1_HEADER = (
    "| Comparison | Median dR2_loc | 95% CI | Win rate |\n|---|---|---|---|"
)
REFERENCE_TABLE1 = (
    "Reference (testbed) values: Ours-SHAP +0.41 [+0.39, +0.43] 99%; "
    "Ours-Attention +0.17 [+0.15, +0.19] 93%."
)


def _compare(trace, params, norm, args, out_dir: Path):
    methods = [Method.parse(m.strip()) for m in args.methods.split(",")]
    series = {}
    for method in methods:
        tf, _summary = _evaluate_method(trace, params, norm, method, args, out_dir)
        series[method] = tf
    lines = [TABLE1_HEADER]
    comparisons = {}
    if Method.HYBRID in series:
        ours = [r.r2.reported for r in series[Method.HYBRID].series]
        for other, label in ((Method.SHAP, "Ours - SHAP"),
                             (Method.ATTENTION, "Ours - Attention")):
            if other not in series:
                continue
            pc = paired_delta(ours, [r.r2.reported for r in series[other].series],
                              block_len=args.block_len,
                              n_resamples=args.resamples, seed=args.seed)
            comparisons[label] = pc
            lines.append(pc.markdown_row(label))
    lines.append("")
    lines.append(REFERENCE_TABLE1)
    table = "\n".join(lines)
    with open(out_dir / "table1.md", "w", newline="\n") as fh:
        fh.write(table + "\n")
    with open(out_dir / "compare.json", "w", newline="\n") as fh:
        json.dump({label: pc.__dict__ for label, pc in comparisons.items()},
                  fh, indent=2)
        fh.write("\n")
    return series, comparisons, table


def cmd_compare(args) -> int:
    trace = _load_trace(args)
    params, norm = _load_model(args)
    out_dir = Path(args.out_dir)
    _write_config(out_dir, "compare", args)
    _series, _comparisons, table = _compare(trace, params, norm, args, out_dir)
    print(table)
    return 0


def _latency(trace, params, norm, args, out_dir: Path):
    windows = [w for w, _ in window_iter(trace)][:256]
    budget = Budget(args.budget_ms * 1e-3)
    by_method = {}
    all_records = []
    for method in (Method.NONE, Method.SHAP, Method.ATTENTION, Method.HYBRID):
        recs = benchmark_method(params, norm, windows, method, k=args.k, m=args.m,
                                budget=budget, cycles=args.cycles,
                                warmup=args.warmup, seed=args.seed)
        by_method[method] = recs
        all_records.extend(recs)
    table = latency_table(by_method, budget)
    with open(out_dir / "table2.md", "w", newline="\n") as fh:
        fh.write(table + "\n")
    with open(out_dir / "latency.csv", "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "cycle", "t_inf", "t_xai", "t_comm",
                         "t_total", "within_budget", "n_forward_evals"])
        for r in all_records:
            writer.writerow([r.method.value, r.cycle, f"{r.t_inf:.9g}",
                             f"{r.t_xai:.9g}", f"{r.t_comm:.9g}",
                             f"{r.t_total:.9g}", int(r.within_budget),
                             r.n_forward_evals])
    fitted = fit_model_params(all_records)
    with open(out_dir / "latency_model.json", "w", newline="\n") as fh:
        json.dump({
            "t_inf": fitted.t_inf, "t_comm": fitted.t_comm,
            "alpha_attn": fitted.alpha_attn, "beta_ig": fitted.beta_ig,
            "gamma_k": fitted.gamma(args.k), "p_shap": fitted.p_shap,
            "residuals": fitted.residuals,
        }, fh, indent=2)
        fh.write("\n")
    return by_method, table


def cmd_latency_table(args) -> int:
    trace = _load_trace(args)
    params, norm = _load_model(args)
    out_dir = Path(args.out_dir)
    _write_config(out_dir, "latency-table", args)
    _by_method, table = _latency(trace, params, norm, args, out_dir)
    print(table)
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out_dir)
    config_path = out_dir / "config.json"
    if config_path.exists() and not args.force:
        prior = json.loads(config_path.read_text())
        if prior.get("seed") not in (None, args.seed):
            raise XaiRanError(
                f"{out_dir} holds a run with trace seed {prior.get('seed')}, "
                f"not {args.seed}; pass --force to overwrite")
    _write_config(out_dir, "report", args)

    trace = generate_trace(BurstConfig(seed=args.seed))
    write_trace_csv(trace, out_dir / "trace.csv")
    if args.checkpoint:
        params, norm = load_checkpoint(args.checkpoint)
    else:
        params, norm, _rep = train(trace, config=TrainConfig(seed=args.train_seed))
    save_checkpoint(out_dir / "model.ckpt", params, norm)

    series, _comparisons, table1 = _compare(trace, params, norm, args, out_dir)
    by_method, table2 = _latency(trace, params, norm, args, out_dir)

    # Feature-wise fidelity, averaged over a sample of windows.
    windows = [w for w, _ in window_iter(trace)]
    sample = windows[:: max(1, len(windows) // 50)]
    per_method: dict[str, dict[str, float]] = {}
    for method in series:
        acc: dict[str, list[float]] = {}
        for idx, window in enumerate(sample):
            att = explain(method, params, window, norm,
                          k=args.k, m=args.m, seed=args.seed ^ idx)
            fw = featurewise_fidelity(params, window, norm, att,
                                      NeighborhoodConfig(seed=args.seed ^ idx))
            for name, r2 in fw.items():
                acc.setdefault(name, []).append(r2.reported)
        per_method[method.value] = {n: float(np.mean(v)) for n, v in acc.items()}
    with open(out_dir / "featurewise.json", "w", newline="\n") as fh:
        json.dump(per_method, fh, indent=2)
        fh.write("\n")

    plots.render_featurewise(per_method, out_dir / "fig_featurewise.png")
    plots.render_timewise(
        {m.value: [(r.window_index, r.r2.reported) for r in tf.series]
         for m, tf in series.items()},
        out_dir / "fig_timewise.png")
    rows = []
    from .latency import TABLE_ROWS
    for method, label in TABLE_ROWS:
        recs = by_method.get(method)
        if recs:
            rows.append((label, float(np.mean([r.t_inf for r in recs])) * 1e3,
                         float(np.mean([r.t_xai for r in recs])) * 1e3,
                         float(np.mean([r.t_comm for r in recs])) * 1e3))
    plots.render_latency(rows, out_dir / "fig_latency.png", budget_ms=args.budget_ms)
    plots.render_trace(np.array([s.th for s in trace]), out_dir / "fig_trace.png")

    print(table1)
    print()
    print(table2)
    print(f"\nreport artifacts in {out_dir}")
    return 0


def _add_eval_flags(p, seed_default=0):
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--n-samples", type=int, default=64)
    p.add_argument("--perturb-std", type=float, default=0.25)
    p.add_argument("--max-windows", type=int, default=None)
    p.add_argument("--seed", type=int, default=_default_seed(seed_default))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xai-ran", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="generate a periodic-burst KPM trace CSV")
    _add_trace_flags(p)
    p.add_argument("--seed", type=int, default=_default_seed(42))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("train", help="train the predictor offline")
    p.add_argument("--trace", help="trace CSV (default: generated default trace)")
    p.add_argument("--w", type=int, default=5)
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=_default_seed(0))
    p.add_argument("--out-dir", default="run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run the predictor/explainer pipeline")
    p.add_argument("--trace")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", default="hybrid")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--budget-ms", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=_default_seed(0))
    p.add_argument("--cycles", type=int, default=None)
    p.add_argument("--threaded", action="store_true")
    p.add_argument("--online-fidelity", action="store_true")
    p.add_argument("--canonical", action="store_true",
                   help="omit timing fields from the JSON-lines log")
    p.add_argument("--out-dir", default="run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="sliding-window fidelity for one method")
    p.add_argument("--trace")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", default="hybrid")
    _add_eval_flags(p)
    p.add_argument("--out-dir", default="run")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="paired fidelity comparison across methods")
    p.add_argument("--trace")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--methods", default="hybrid,shap,attention")
    _add_eval_flags(p)
    p.add_argument("--block-len", type=int, default=10)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--out-dir", default="run")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("latency-table", help="per-method latency benchmark")
    p.add_argument("--trace")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--budget-ms", type=float, default=10.0)
    p.add_argument("--cycles", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--seed", type=int, default=_default_seed(0))
    p.add_argument("--out-dir", default="run")
    p.set_defaults(func=cmd_latency_table)

    p = sub.add_parser("report", help="end-to-end tables, series CSVs, and figures")
    p.add_argument("--checkpoint", help="reuse a trained checkpoint")
    p.add_argument("--methods", default="hybrid,shap,attention")
    _add_eval_flags(p, seed_default=42)
    p.add_argument("--train-seed", type=int, default=0)
    p.add_argument("--block-len", type=int, default=10)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--budget-ms", type=float, default=10.0)
    p.add_argument("--cycles", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--force", action="store_true")
    p.add_argument("--out-dir", default="report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except XaiRanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
