import time

import numpy as np
import pytest

from xai_ran.errors import ConfigurationError, MeasurementError, SizeError
from xai_ran.explain import Method
from xai_ran.latency import (
    Budget,
    CycleTimings,
    LatencyModelParams,
    LatencyRecord,
    benchmark_method,
    check_budget,
    fit_model_params,
    latency_table,
    measure_cycle,
    predict_overhead,
)
from xai_ran.trace import window_iter


def record(t_total, method=Method.NONE, **kw):
    return LatencyRecord(method=method, cycle=0, t_inf=t_total, t_xai=0.0,
                         t_comm=0.0, t_total=t_total, **kw)


class TestPredictOverhead:
    # Reference point: with a 5.2 ms inference and the default model
    # constants, attention overhead is 0.52 ms and IG(k=5) is 2.6 ms.
    MODEL = LatencyModelParams(t_inf=5.2e-3)

    def test_attention_fraction(self):
        t = predict_overhead(Method.ATTENTION, 0, self.MODEL)
        assert t == pytest.approx(0.52e-3, abs=1e-12)
        assert t == pytest.approx(0.6e-3, rel=0.20)

    def test_ig_k5(self):
        t = predict_overhead(Method.IG, 5, self.MODEL)
        assert t == pytest.approx(2.6e-3, abs=1e-12)
        assert t == pytest.approx(2.8e-3, rel=0.20)
        assert self.MODEL.gamma(5) == pytest.approx(0.5)

    def test_hybrid_matches_ig(self):
        assert predict_overhead(Method.HYBRID, 5, self.MODEL) \
            == predict_overhead(Method.IG, 5, self.MODEL)

    def test_none_is_free(self):
        assert predict_overhead(Method.NONE, 99, self.MODEL) == 0.0

    def test_zero_steps_zero_overhead(self):
        assert predict_overhead(Method.IG, 0, self.MODEL) == 0.0

    def test_monotone_in_k_and_m(self):
        for method in (Method.IG, Method.SHAP):
            ts = [predict_overhead(method, k, self.MODEL) for k in range(1, 20)]
            assert all(lo < hi for lo, hi in zip(ts, ts[1:]))

    def test_shap_parallelism_divides(self):
        serial = predict_overhead(Method.SHAP, 16, self.MODEL)
        par = LatencyModelParams(t_inf=5.2e-3, p_shap=8.0)
        assert predict_overhead(Method.SHAP, 16, par) == pytest.approx(serial / 8)

    def test_negative_constant_rejected(self):
        with pytest.raises(ConfigurationError):
            predict_overhead(Method.IG, 5, LatencyModelParams(t_inf=-1.0))


class TestMeasureCycle:
    def test_sum_identity(self):
        rec = measure_cycle(CycleTimings(0.0, 1.0, 1.0, 2.5, 2.5, 2.7))
        assert rec.t_total == pytest.approx(rec.t_inf + rec.t_xai + rec.t_comm)
        assert (rec.t_inf, rec.t_xai, rec.t_comm) == (1.0, 1.5, pytest.approx(0.2))

    def test_sleep_stub_harness(self):
        # Stage sleeps of 1 / 2 / 0.2 ms should be recovered to within
        # 0.5 ms at the median over repeated cycles.
        recs = []
        for cycle in range(100):
            t0 = time.perf_counter(); time.sleep(0.001)
            t1 = time.perf_counter(); time.sleep(0.002)
            t2 = time.perf_counter(); time.sleep(0.0002)
            t3 = time.perf_counter()
            recs.append(measure_cycle(CycleTimings(t0, t1, t1, t2, t2, t3),
                                      cycle=cycle))
        assert np.median([r.t_inf for r in recs]) == pytest.approx(0.001, abs=5e-4)
        assert np.median([r.t_xai for r in recs]) == pytest.approx(0.002, abs=5e-4)
        assert np.median([r.t_comm for r in recs]) == pytest.approx(0.0002, abs=5e-4)

    def test_non_monotonic_clock_rejected(self):
        with pytest.raises(MeasurementError, match="cycle 7"):
            measure_cycle(CycleTimings(1.0, 0.5, 0.5, 0.6, 0.6, 0.7), cycle=7)

    def test_budget_flag_set(self):
        rec = measure_cycle(CycleTimings(0.0, 0.02, 0.02, 0.02, 0.02, 0.02),
                            budget=Budget(0.010))
        assert not rec.within_budget


class TestBudget:
    def test_boundary_inclusive(self):
        assert check_budget(record(0.010), Budget(0.010)).ok

    def test_under(self):
        v = check_budget(record(0.0081), Budget(0.010))
        assert v.ok
        assert str(v) == "OK"

    def test_over(self):
        v = check_budget(record(0.0204), Budget(0.010))
        assert not v.ok
        assert v.exceeded_by == pytest.approx(0.0104)
        assert str(v) == "EXCEEDED(+10.40 ms)"

    def test_invalid_limit(self):
        with pytest.raises(ConfigurationError):
            Budget(0.0)


def synthetic_records(model, n=50, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    recs = []
    for method, k_or_m in ((Method.NONE, None), (Method.ATTENTION, None),
                           (Method.IG, 5), (Method.SHAP, 16)):
        for cycle in range(n):
            t_inf = model.t_inf * (1 + noise * rng.normal())
            t_xai = predict_overhead(method, k_or_m or 0, model)
            t_xai *= (1 + noise * rng.normal()) if t_xai else 1.0
            recs.append(LatencyRecord(
                method=method, cycle=cycle, t_inf=t_inf, t_xai=t_xai,
                t_comm=model.t_comm, t_total=t_inf + t_xai + model.t_comm,
                k_or_m=k_or_m))
    return recs


class TestFit:
    TRUE = LatencyModelParams(t_inf=5e-3, alpha_attn=0.12, beta_ig=0.09,
                              p_shap=2.0)

    def test_exact_recovery(self):
        fitted = fit_model_params(synthetic_records(self.TRUE))
        assert fitted.t_inf == pytest.approx(self.TRUE.t_inf, abs=1e-6)
        assert fitted.alpha_attn == pytest.approx(0.12, abs=1e-6)
        assert fitted.beta_ig == pytest.approx(0.09, abs=1e-6)
        assert fitted.p_shap == pytest.approx(2.0, abs=1e-6)

    def test_noisy_recovery_within_15pct(self):
        fitted = fit_model_params(synthetic_records(self.TRUE, n=200, noise=0.10))
        assert fitted.alpha_attn == pytest.approx(0.12, rel=0.15)
        assert fitted.beta_ig == pytest.approx(0.09, rel=0.15)
        assert fitted.p_shap == pytest.approx(2.0, rel=0.15)
        assert fitted.residuals["ig_rms"] > 0.0

    def test_missing_shap_leaves_p_unfitted(self):
        recs = [r for r in synthetic_records(self.TRUE) if r.method is not Method.SHAP]
        assert fit_model_params(recs).p_shap is None

    def test_requires_baseline_records(self):
        recs = [r for r in synthetic_records(self.TRUE) if r.method is not Method.NONE]
        with pytest.raises(SizeError):
            fit_model_params(recs)


@pytest.fixture(scope="module")
def records_by_method(trained, default_trace):
    params, norm, _ = trained
    windows = [w for w, _ in window_iter(default_trace)][:20]
    return {
        method: benchmark_method(params, norm, windows, method,
                                 cycles=30, warmup=3)
        for method in (Method.NONE, Method.ATTENTION, Method.HYBRID, Method.SHAP)
    }


class TestBenchmarkAndTable:
    def test_record_counts_and_eval_counts(self, records_by_method):
        assert all(len(v) == 30 for v in records_by_method.values())
        assert records_by_method[Method.NONE][0].n_forward_evals == 0
        assert records_by_method[Method.HYBRID][0].n_forward_evals == 6
        assert records_by_method[Method.SHAP][0].n_forward_evals == 16 * 25 + 1

    def test_ordering(self, records_by_method):
        means = {m: np.mean([r.t_total for r in v])
                 for m, v in records_by_method.items()}
        assert means[Method.NONE] < means[Method.HYBRID] < means[Method.SHAP]
        assert means[Method.ATTENTION] < means[Method.SHAP]

    def test_table_rows(self, records_by_method):
        table = latency_table(records_by_method)
        for label in ("Non-XAI (baseline)", "SHAP m=16", "Attention only",
                      "Ours (Attention + IG, k=5)"):
            assert label in table
        assert table.count("|") >= 6 * 7
