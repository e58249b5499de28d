"""Latency decomposition: analytic overhead model, wall-clock
measurement, budget verdicts, and per-method benchmark tables.

Each inference cycle decomposes as t_total = t_inf + t_xai + t_comm.
The analytic model predicts t_xai per method: attention costs a fixed
fraction alpha of one inference; IG costs beta per integration step
(gamma = k * beta summarizes the total as a fraction of one inference);
SHAP costs its forward-evaluation count divided by the effective
parallelism. GPU utilization is out of scope here: the compute proxy is
the forward-evaluation count plus CPU wall-clock.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, MeasurementError, SizeError
from .explain import BaselineSpec, Method, explain
from .model import ModelParams, Normalizer, forward

DEFAULT_BUDGET_S = 0.010
DEFAULT_CELLS = 25          # W * n forward evals per SHAP permutation


@dataclass
class LatencyModelParams:
    """Calibrated constants of the analytic overhead model."""

    t_inf: float                      # seconds, mean single-inference time
    t_comm: float = 0.2e-3
    alpha_attn: float = 0.1
    beta_ig: float = 0.1              # per-IG-step fraction of t_inf
    p_shap: float | None = 1.0        # effective parallelism divisor; None = unfitted
    d_passes_factor: int = DEFAULT_CELLS
    residuals: dict = field(default_factory=dict)

    def gamma(self, k: int) -> float:
        """Total IG overhead as a fraction of one inference."""
        return k * self.beta_ig

    def validate(self) -> None:
        for name in ("t_inf", "t_comm", "alpha_attn", "beta_ig"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")


@dataclass
class LatencyRecord:
    method: Method
    cycle: int
    t_inf: float
    t_xai: float
    t_comm: float
    t_total: float
    within_budget: bool = True
    k_or_m: int | None = None
    n_forward_evals: int = 0


@dataclass(frozen=True)
class Budget:
    limit: float = DEFAULT_BUDGET_S   # seconds

    def __post_init__(self):
        if self.limit <= 0:
            raise ConfigurationError(f"budget limit must be > 0, got {self.limit}")


@dataclass(frozen=True)
class Verdict:
    ok: bool
    exceeded_by: float = 0.0          # seconds, 0 when ok

    def __str__(self) -> str:
        return "OK" if self.ok else f"EXCEEDED(+{self.exceeded_by * 1e3:.2f} ms)"


def predict_overhead(method: Method, k_or_m: int, params: LatencyModelParams) -> float:
    """Predicted t_xai in seconds for one explanation."""
    params.validate()
    if method is Method.NONE:
        return 0.0
    if method is Method.ATTENTION:
        return params.alpha_attn * params.t_inf
    if method in (Method.IG, Method.HYBRID):
        return k_or_m * params.beta_ig * params.t_inf
    if method is Method.SHAP:
        p = params.p_shap if params.p_shap else 1.0
        return (k_or_m * params.d_passes_factor / p) * params.t_inf
    raise ConfigurationError(f"unknown method {method!r}")


@dataclass(frozen=True)
class CycleTimings:
    """Monotonic clock samples (seconds) around each pipeline stage."""

    inf_start: float
    inf_end: float
    xai_start: float
    xai_end: float
    comm_start: float
    comm_end: float


def measure_cycle(
    timings: CycleTimings, method: Method = Method.NONE, cycle: int = 0,
    budget: Budget | None = None, k_or_m: int | None = None,
    n_forward_evals: int = 0,
) -> LatencyRecord:
    """Build a LatencyRecord from stage clock samples; the sum identity
    t_total = t_inf + t_xai + t_comm holds by construction."""
    pairs = [(timings.inf_start, timings.inf_end),
             (timings.xai_start, timings.xai_end),
             (timings.comm_start, timings.comm_end)]
    if any(end < start for start, end in pairs):
        raise MeasurementError(f"non-monotonic clock samples in cycle {cycle}")
    t_inf = timings.inf_end - timings.inf_start
    t_xai = timings.xai_end - timings.xai_start
    t_comm = timings.comm_end - timings.comm_start
    record = LatencyRecord(
        method=method, cycle=cycle, t_inf=t_inf, t_xai=t_xai, t_comm=t_comm,
        t_total=t_inf + t_xai + t_comm, k_or_m=k_or_m,
        n_forward_evals=n_forward_evals,
    )
    if budget is not None:
        record.within_budget = check_budget(record, budget).ok
    return record


def check_budget(record: LatencyRecord, budget: Budget) -> Verdict:
    """OK iff t_total <= limit (inclusive boundary)."""
    if record.t_total <= budget.limit:
        return Verdict(ok=True)
    return Verdict(ok=False, exceeded_by=record.t_total - budget.limit)


def fit_model_params(records: Sequence[LatencyRecord], min_per_method: int = 30) -> LatencyModelParams:
    """Calibrate the overhead model to measured records.

    t_inf is the median inference time of the NONE records; alpha, beta,
    and p_shap come from least squares of measured t_xai against the
    per-method model forms. Residual RMS per method is reported.
    """
    by_method: dict[Method, list[LatencyRecord]] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    none_recs = by_method.get(Method.NONE, [])
    if len(none_recs) < min_per_method:
        raise SizeError(
            f"need >= {min_per_method} NONE records for t_inf, got {len(none_recs)}")
    t_inf = float(np.median([r.t_inf for r in none_recs]))
    t_comm = float(np.median([r.t_comm for r in records]))
    fitted = LatencyModelParams(t_inf=t_inf, t_comm=t_comm, p_shap=None)

    def lstsq_ratio(recs, design):
        y = np.array([r.t_xai for r in recs])
        x = np.array(design)
        coef = float(x @ y / (x @ x))
        rms = float(np.sqrt(np.mean((y - coef * x) ** 2)))
        return coef, rms

    attn = by_method.get(Method.ATTENTION, [])
    if len(attn) >= min_per_method:
        coef, rms = lstsq_ratio(attn, [r.t_inf for r in attn])
        fitted.alpha_attn = coef
        fitted.residuals["attention_rms"] = rms

    ig = by_method.get(Method.IG, []) + by_method.get(Method.HYBRID, [])
    if len(ig) >= min_per_method:
        coef, rms = lstsq_ratio(ig, [(r.k_or_m or 0) * r.t_inf for r in ig])
        fitted.beta_ig = coef
        fitted.residuals["ig_rms"] = rms

    shap = by_method.get(Method.SHAP, [])
    if len(shap) >= min_per_method:
        coef, rms = lstsq_ratio(
            shap, [(r.k_or_m or 0) * fitted.d_passes_factor * r.t_inf for r in shap])
        fitted.p_shap = 1.0 / coef if coef > 0 else None
        fitted.residuals["shap_rms"] = rms
    return fitted


def benchmark_method(
    params: ModelParams, norm: Normalizer, windows: Sequence, method: Method,
    k: int = 5, m: int = 16, baseline: BaselineSpec = BaselineSpec(),
    budget: Budget = Budget(), cycles: int = 100, warmup: int = 10,
    seed: int = 0, comm: Callable[[], None] | None = None,
) -> list[LatencyRecord]:
    """Measure ``cycles`` inference+explanation cycles after ``warmup``
    discarded ones, cycling through the supplied windows."""
    records: list[LatencyRecord] = []
    for cycle in range(warmup + cycles):
        window = windows[cycle % len(windows)]
        t0 = time.perf_counter()
        _, cache = forward(params, window, norm)
        t1 = time.perf_counter()
        n_evals = 0
        k_or_m = None
        if method is not Method.NONE:
            att = explain(method, params, window, norm, baseline,
                          k=k, m=m, seed=seed ^ cycle)
            n_evals = att.meta.get("n_forward_evals", 0)
            k_or_m = att.meta.get("k", att.meta.get("m"))
        t2 = time.perf_counter()
        if comm is not None:
            comm()
        t3 = time.perf_counter()
        if cycle < warmup:
            continue
        record = measure_cycle(
            CycleTimings(t0, t1, t1, t2, t2, t3),
            method=method, cycle=cycle - warmup, budget=budget,
            k_or_m=k_or_m, n_forward_evals=n_evals,
        )
        records.append(record)
    return records


TABLE_ROWS = (
    (Method.NONE, "Non-XAI (baseline)"),
    (Method.SHAP, "SHAP m=16"),
    (Method.ATTENTION, "Attention only"),
    (Method.HYBRID, "Ours (Attention + IG, k=5)"),
)


def latency_table(records_by_method: dict[Method, list[LatencyRecord]],
                  budget: Budget = Budget()) -> str:
    """Markdown table of per-method mean latency (the per-cycle records
    behind it stay available for CSV emission)."""
    lines = [
        "| Model | T_inf (ms) | T_xai (ms) | T_total (ms) | Forward evals | Budget |",
        "|---|---|---|---|---|---|",
    ]
    for method, label in TABLE_ROWS:
        recs = records_by_method.get(method)
        if not recs:
            continue
        t_inf = np.mean([r.t_inf for r in recs]) * 1e3
        t_xai = np.mean([r.t_xai for r in recs]) * 1e3
        t_total = np.mean([r.t_total for r in recs]) * 1e3
        evals = int(np.mean([r.n_forward_evals for r in recs]))
        mean_rec = replace(recs[0], t_total=t_total / 1e3)
        verdict = check_budget(mean_rec, budget)
        lines.append(f"| {label} | {t_inf:.3f} | {t_xai:.3f} | {t_total:.3f} "
                     f"| {evals} | {verdict} |")
    shap_recs = records_by_method.get(Method.SHAP)
    if shap_recs and np.mean([r.t_total for r in shap_recs]) <= budget.limit:
        lines.append("")
        lines.append(
            "Note: serial SHAP fits the budget on this machine (the model is "
            "small); only the per-method latency ordering is asserted here.")
    return "\n".join(lines)
