import numpy as np
import pytest

from xai_ran.errors import DegenerateError, SizeError
from xai_ran.explain import (
    Attribution,
    BaselineSpec,
    Method,
    explain_ig,
)
from xai_ran.fidelity import (
    NeighborhoodConfig,
    featurewise_fidelity,
    local_r2,
    surrogate_from_attribution,
    temporal_fidelity,
    topk_fidelity,
)
from xai_ran.model import Normalizer, forward_norm, linear_test_model
from xai_ran.trace import BurstConfig, generate_trace, window_iter



def zero_attribution(shape=(5, 5)):
    return Attribution(e=np.zeros(shape), method=Method.IG)


class TestSurrogate:
    def test_interpolates_anchor(self, trained, default_trace):
        params, norm, _ = trained
        window = next(window_iter(default_trace))[0]
        x = norm.normalize(window.to_matrix())
        b = BaselineSpec().resolve(x, norm)
        f_x, _ = forward_norm(params, x, norm.target_std, norm.target_mean)
        att = explain_ig(params, window, norm, k=5)
        g = surrogate_from_attribution(att, x, b, f_x)
        assert g.predict(x) == pytest.approx(f_x, abs=1e-9)

    def test_linear_model_recovers_coefficients(self):
        weights = np.array([1.0, -2.0, 0.5])
        params = linear_test_model(weights)
        norm = Normalizer.identity(3)
        x = np.array([[1.2, -0.4, 0.9]])
        att = explain_ig(params, x, norm, k=3)
        f_x, _ = forward_norm(params, x)
        g = surrogate_from_attribution(att, x, np.zeros_like(x), f_x)
        assert g.w[0] == pytest.approx(weights, abs=1e-9)

    def test_zero_attribution_is_constant(self):
        x = np.ones((2, 2))
        g = surrogate_from_attribution(zero_attribution((2, 2)), x,
                                       np.zeros_like(x), 7.0)
        assert np.all(g.w == 0.0)
        assert g.predict(np.random.default_rng(0).normal(size=(4, 2, 2))) \
            == pytest.approx([7.0] * 4)

    def test_near_baseline_cells_get_zero_weight(self):
        x = np.array([[1.0, 1e-9]])
        e = Attribution(e=np.array([[2.0, 5.0]]), method=Method.IG)
        g = surrogate_from_attribution(e, x, np.zeros_like(x), 3.0)
        assert g.w[0, 1] == 0.0


class TestLocalR2:
    def test_linear_model_perfect(self):
        weights = np.array([1.0, -2.0, 0.5])
        params = linear_test_model(weights)
        norm = Normalizer.identity(3)
        x = np.array([[1.2, -0.4, 0.9]])
        att = explain_ig(params, x, norm, k=3)
        r2 = local_r2(params, x, norm, att)
        assert r2.raw == pytest.approx(1.0, abs=1e-9)

    def test_zero_attribution_not_better_than_mean(self, trained, default_trace):
        params, norm, _ = trained
        for idx, (window, _t) in enumerate(window_iter(default_trace)):
            if idx >= 100:
                break
            r2 = local_r2(params, window, norm, zero_attribution(),
                          NeighborhoodConfig(seed=idx))
            assert r2.raw <= 0.1

    def test_determinism(self, trained, default_trace):
        params, norm, _ = trained
        window = next(window_iter(default_trace))[0]
        att = explain_ig(params, window, norm, k=5)
        cfg = NeighborhoodConfig(seed=11)
        assert local_r2(params, window, norm, att, cfg).raw \
            == local_r2(params, window, norm, att, cfg).raw

    def test_reported_floor(self):
        # A wildly wrong attribution on a steep model drives raw R^2 far
        # below the reporting floor.
        params = linear_test_model(np.array([100.0]))
        norm = Normalizer.identity(1)
        x = np.array([[1.0]])
        bad = Attribution(e=np.array([[-500.0]]), method=Method.IG)
        r2 = local_r2(params, x, norm, bad)
        assert r2.raw < -10.0
        assert r2.reported == -10.0

    def test_constant_model_degenerate_as_perfect(self):
        params = linear_test_model(np.array([0.0]), bias=5.0)
        norm = Normalizer.identity(1)
        r2 = local_r2(params, np.array([[1.0]]), norm, zero_attribution((1, 1)))
        assert r2.raw == 1.0
        assert not r2.degenerate

    def test_scaling_attribution_changes_r2(self, trained, default_trace):
        params, norm, _ = trained
        window = next(window_iter(default_trace))[0]
        att = explain_ig(params, window, norm, k=5)
        scaled = Attribution(e=att.e * 3.0, method=att.method)
        cfg = NeighborhoodConfig(seed=5)
        assert local_r2(params, window, norm, att, cfg).raw \
            != local_r2(params, window, norm, scaled, cfg).raw


class TestTopK:
    def test_keep_all_phi_is_one(self, trained, default_trace):
        params, norm, _ = trained
        window = next(window_iter(default_trace))[0]
        att = explain_ig(params, window, norm, k=5)
        phi, k_used = topk_fidelity(params, window, norm, att, mass=1.0)
        assert k_used == 25
        assert phi == pytest.approx(1.0, abs=1e-12)

    def test_phi_arithmetic(self):
        # y_full = 100, y_topk = 90 -> Phi = 0.9, checked via a linear
        # model where masking one cell moves the output by exactly 10.
        params = linear_test_model(np.array([90.0, 10.0]), bias=0.0)
        norm = Normalizer.identity(2)
        x = np.array([[1.0, 1.0]])
        att = Attribution(e=np.array([[90.0, 10.0]]), method=Method.IG)
        phi, k_used = topk_fidelity(params, x, norm, att, mass=0.8)
        assert k_used == 1          # 90 of 100 total mass
        assert phi == pytest.approx(0.9, abs=1e-12)

    def test_ranking_scale_invariant(self, trained, default_trace):
        params, norm, _ = trained
        window = next(window_iter(default_trace))[0]
        att = explain_ig(params, window, norm, k=5)
        scaled = Attribution(e=att.e * 17.0, method=att.method)
        assert topk_fidelity(params, window, norm, att) \
            == topk_fidelity(params, window, norm, scaled)

    def test_degenerate_denominator(self):
        params = linear_test_model(np.array([1.0]), bias=0.0)
        norm = Normalizer.identity(1)
        att = Attribution(e=np.array([[0.0]]), method=Method.IG)
        with pytest.raises(DegenerateError):
            topk_fidelity(params, np.array([[0.0]]), norm, att)


class TestFeaturewise:
    def test_linear_model_all_features_perfect(self):
        weights = np.array([1.0, -2.0, 0.5, 3.0, -1.5])
        params = linear_test_model(weights)
        norm = Normalizer.identity(5)
        x = np.array([[1.2, -0.4, 0.9, 0.1, -2.0]])
        att = explain_ig(params, x, norm, k=3)
        scores = featurewise_fidelity(params, x, norm, att)
        assert len(scores) == 5
        for name, r2 in scores.items():
            assert r2.raw == pytest.approx(1.0, abs=1e-9), name

    def test_missing_feature_scores_poorly(self, trained, default_trace):
        params, norm, _ = trained
        window = next(window_iter(default_trace))[0]
        att = explain_ig(params, window, norm, k=5)
        # Zero out the attribution of the throughput column, which the
        # model demonstrably depends on.
        crippled = att.e.copy()
        crippled[:, 0] = 0.0
        scores = featurewise_fidelity(
            params, window, norm, Attribution(e=crippled, method=Method.IG))
        assert scores["th"].raw <= 0.1

    def test_determinism(self, trained, default_trace):
        params, norm, _ = trained
        window = next(window_iter(default_trace))[0]
        att = explain_ig(params, window, norm, k=5)
        s1 = featurewise_fidelity(params, window, norm, att)
        s2 = featurewise_fidelity(params, window, norm, att)
        assert all(s1[k].raw == s2[k].raw for k in s1)


class TestTemporal:
    def test_series_and_sigma(self, trained, default_trace):
        params, norm, _ = trained
        tf = temporal_fidelity(default_trace[:120], params, norm, Method.IG,
                               with_phi=False)
        assert len(tf.series) == 120 - 5 - 1 + 1
        vals = tf.r2_values()
        assert tf.mean == pytest.approx(vals.mean())
        assert tf.std == pytest.approx(vals.std())      # population sigma
        assert tf.std >= 0.0

    def test_too_short_trace(self, trained):
        params, norm, _ = trained
        with pytest.raises(SizeError):
            temporal_fidelity(generate_trace(BurstConfig(length=5)),
                              params, norm, Method.IG)
