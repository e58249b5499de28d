"""Fidelity metrics for attributions.

An attribution is turned into a linear surrogate anchored at the
explained input; fidelity is then measured as the local R^2 of that
surrogate over a perturbation neighborhood, as the top-k prediction
retention score Phi, per feature, and as a sliding-window time series.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateError, SizeError
from .explain import Attribution, BaselineSpec, Method, explain
from .model import ModelParams, Normalizer, _forward_batch, as_matrix, forward_norm
from .trace import DEFAULT_W, FEATURE_NAMES, KpmSample, window_iter

EPS_SLOPE = 1e-6       # |x - b| below this gets a zero surrogate weight
EPS_VAR = 1e-12        # variance below this counts as degenerate
EPS_DENOM = 1e-9       # |y_full| guard for Phi
R2_FLOOR = -10.0       # reporting floor; raw value is kept alongside


@dataclass(frozen=True)
class NeighborhoodConfig:
    """Perturbation neighborhood for local R^2."""

    n_samples: int = 64
    perturb_std: float = 0.25   # normalized units
    seed: int = 0

    def validate(self) -> None:
        if self.n_samples < 2:
            raise ConfigurationError(f"n_samples must be >= 2, got {self.n_samples}")
        if self.perturb_std <= 0:
            raise ConfigurationError(f"perturb_std must be > 0, got {self.perturb_std}")


@dataclass
class LinearSurrogate:
    """g(x) = w0 + sum w[t,i] * x[t,i], anchored so g(x_anchor) = f(x_anchor)."""

    w: np.ndarray    # (W, n)
    w0: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        """x: (W, n) or (B, W, n); returns scalar or (B,)."""
        if x.ndim == 2:
            return self.w0 + float((self.w * x).sum())
        return self.w0 + np.einsum("wn,bwn->b", self.w, x)


@dataclass
class LocalR2:
    raw: float
    reported: float       # floored at R2_FLOOR
    degenerate: bool = False


@dataclass
class FidelityReport:
    window_index: int
    method: str
    r2: LocalR2
    phi: float | None = None
    k_used: int | None = None
    per_feature_r2: dict[str, float] = field(default_factory=dict)


@dataclass
class TemporalFidelity:
    method: str
    series: list[FidelityReport]
    mean: float
    std: float            # population std of reported R^2
    excluded: int         # degenerate windows left out of mean/std

    def r2_values(self, raw: bool = False) -> np.ndarray:
        return np.array([r.r2.raw if raw else r.r2.reported
                         for r in self.series if not r.r2.degenerate])


def surrogate_from_attribution(
    e: Attribution | np.ndarray, x: np.ndarray, b: np.ndarray, f_x: float
) -> LinearSurrogate:
    """Slopes e/(x - b) where the gap is resolvable, zero otherwise; the
    intercept makes the surrogate interpolate f at the anchor."""
    mat = e.e if isinstance(e, Attribution) else np.asarray(e)
    gap = x - b
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(np.abs(gap) > EPS_SLOPE, mat / gap, 0.0)
    w0 = f_x - float((w * x).sum())
    return LinearSurrogate(w=w, w0=w0)


def _r2(f_vals: np.ndarray, g_vals: np.ndarray) -> LocalR2:
    f_bar = f_vals.mean()
    ss_res = float(((f_vals - g_vals) ** 2).sum())
    ss_tot = float(((f_vals - f_bar) ** 2).sum())
    if ss_tot < EPS_VAR:
        if ss_res <= EPS_VAR:
            return LocalR2(raw=1.0, reported=1.0)
        return LocalR2(raw=float("-inf"), reported=R2_FLOOR, degenerate=True)
    raw = 1.0 - ss_res / ss_tot
    return LocalR2(raw=raw, reported=max(raw, R2_FLOOR))


def local_r2(
    params: ModelParams, window, norm: Normalizer, e: Attribution,
    cfg: NeighborhoodConfig = NeighborhoodConfig(),
    baseline: BaselineSpec = BaselineSpec(),
) -> LocalR2:
    """Local R^2 of the attribution surrogate over a Gaussian
    perturbation neighborhood of the explained input."""
    cfg.validate()
    x = norm.normalize(as_matrix(window))
    b = baseline.resolve(x, norm)
    f_x, _ = forward_norm(params, x, out_scale=norm.target_std, out_shift=norm.target_mean)
    g = surrogate_from_attribution(e, x, b, f_x)

    rng = np.random.default_rng(cfg.seed)
    pts = x + rng.normal(0.0, cfg.perturb_std, size=(cfg.n_samples, *x.shape))
    y_norm, *_ = _forward_batch(params, pts)
    f_vals = y_norm * norm.target_std + norm.target_mean
    g_vals = g.predict(pts)
    return _r2(f_vals, g_vals)


def topk_fidelity(
    params: ModelParams, window, norm: Normalizer, e: Attribution,
    mass: float = 0.8, baseline: BaselineSpec = BaselineSpec(),
) -> tuple[float, int]:
    """Top-k prediction retention.

    k_used is the smallest k whose cells cover ``mass`` of the total
    absolute attribution; Phi = 1 - |y_full - y_topk| / |y_full| with the
    non-kept cells replaced by the baseline.
    """
    x = norm.normalize(as_matrix(window))
    b = baseline.resolve(x, norm)
    y_full, _ = forward_norm(params, x, out_scale=norm.target_std, out_shift=norm.target_mean)
    if abs(y_full) < EPS_DENOM:
        raise DegenerateError(f"|y_full| = {abs(y_full):.3g} Mbps, Phi undefined")

    mat = e.e if isinstance(e, Attribution) else np.asarray(e)
    flat = np.abs(mat).ravel()
    order = np.argsort(-flat, kind="stable")
    total = flat.sum()
    if total <= 0.0:
        k_used = flat.size       # no ranking information: keep everything
    else:
        cum = np.cumsum(flat[order])
        k_used = int(np.searchsorted(cum, mass * total - 1e-12) + 1)
    kept = order[:k_used]

    masked = b.copy()
    masked.ravel()[kept] = x.ravel()[kept]
    y_topk, _ = forward_norm(params, masked, out_scale=norm.target_std,
                             out_shift=norm.target_mean)
    phi = 1.0 - abs(y_full - y_topk) / abs(y_full)
    return phi, k_used


def featurewise_fidelity(
    params: ModelParams, window, norm: Normalizer, e: Attribution,
    cfg: NeighborhoodConfig = NeighborhoodConfig(),
    baseline: BaselineSpec = BaselineSpec(),
    feature_names: tuple = FEATURE_NAMES,
) -> dict[str, LocalR2]:
    """Per-feature local R^2: perturb one feature column at a time and
    score the surrogate restricted to that column's weights plus an
    interpolating intercept."""
    cfg.validate()
    x = norm.normalize(as_matrix(window))
    b = baseline.resolve(x, norm)
    f_x, _ = forward_norm(params, x, out_scale=norm.target_std, out_shift=norm.target_mean)
    g = surrogate_from_attribution(e, x, b, f_x)

    out: dict[str, LocalR2] = {}
    for i, name in enumerate(feature_names[: x.shape[1]]):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i]))
        pts = np.tile(x, (cfg.n_samples, 1, 1))
        pts[:, :, i] += rng.normal(0.0, cfg.perturb_std, size=(cfg.n_samples, x.shape[0]))
        y_norm, *_ = _forward_batch(params, pts)
        f_vals = y_norm * norm.target_std + norm.target_mean
        # Column-restricted surrogate: only feature i's slopes vary.
        g_vals = f_x + (g.w[:, i] * (pts[:, :, i] - x[:, i])).sum(axis=1)
        out[name] = _r2(f_vals, g_vals)
    return out


def temporal_fidelity(
    trace: list[KpmSample], params: ModelParams, norm: Normalizer,
    method: Method, cfg: NeighborhoodConfig = NeighborhoodConfig(),
    baseline: BaselineSpec = BaselineSpec(),
    w: int | None = None, horizon: int = 1,
    k: int = 5, m: int = 16, max_windows: int | None = None,
    with_phi: bool = True,
) -> TemporalFidelity:
    """One explanation + local R^2 (and optionally Phi) per sliding
    prediction window. Per-window seeds are derived from cfg.seed and
    the window index so parallel evaluation order cannot matter."""
    if w is None:
        w = DEFAULT_W
    reports: list[FidelityReport] = []
    for idx, (window, _target) in enumerate(window_iter(trace, w=w, horizon=horizon)):
        if max_windows is not None and idx >= max_windows:
            break
        seed = cfg.seed ^ idx
        att = explain(method, params, window, norm, baseline, k=k, m=m, seed=seed)
        r2 = local_r2(params, window, norm, att,
                      NeighborhoodConfig(cfg.n_samples, cfg.perturb_std, seed), baseline)
        report = FidelityReport(window_index=idx, method=method.value, r2=r2)
        if with_phi:
            try:
                report.phi, report.k_used = topk_fidelity(
                    params, window, norm, att, baseline=baseline)
            except DegenerateError:
                pass
        reports.append(report)
    if not reports:
        raise SizeError("trace yields no prediction windows")

    vals = np.array([r.r2.reported for r in reports if not r.r2.degenerate])
    excluded = len(reports) - len(vals)
    if len(vals) == 0:
        raise SizeError("every window was degenerate")
    return TemporalFidelity(
        method=method.value, series=reports,
        mean=float(vals.mean()), std=float(vals.std()), excluded=excluded,
    )
