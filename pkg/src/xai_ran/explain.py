"""Attribution methods for single predictions.

Four production methods (intrinsic attention, integrated gradients,
Monte-Carlo permutation SHAP, and the attention+IG hybrid) plus an
exact-Shapley enumeration oracle for verification. Every method emits an
Attribution: a (W, n) matrix of per-(timestep, feature) contributions to
the prediction, tagged with method and provenance metadata.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, ContractViolation, SizeError
from .model import (
    ForwardCache,
    ModelParams,
    Normalizer,
    _forward_batch,
    _input_grads_batch,
    as_matrix,
    forward_norm,
)

EXACT_SHAPLEY_MAX_CELLS = 16


class Method(Enum):
    NONE = "none"          # baseline: prediction only, no explanation
    ATTENTION = "attention"
    IG = "ig"
    SHAP = "shap"
    HYBRID = "hybrid"      # attention + IG, the proposed method

    @classmethod
    def parse(cls, name: str) -> "Method":
        try:
            return cls(name.lower())
        except ValueError:
            raise ConfigurationError(f"unknown method {name!r}") from None


class BaselineKind(Enum):
    NORMALIZED_ZERO = "normalized_zero"   # per-feature training mean
    RAW_ZERO = "raw_zero"                 # literal zero in raw units
    CUSTOM = "custom"


@dataclass(frozen=True)
class BaselineSpec:
    kind: BaselineKind = BaselineKind.NORMALIZED_ZERO
    matrix: np.ndarray | None = None      # normalized space, CUSTOM only

    def resolve(self, x: np.ndarray, norm: Normalizer) -> np.ndarray:
        """Baseline matrix in normalized space, same shape as x."""
        if self.kind is BaselineKind.NORMALIZED_ZERO:
            return np.zeros_like(x)
        if self.kind is BaselineKind.RAW_ZERO:
            row = norm.normalize(np.zeros(x.shape[1]))
            return np.tile(row, (x.shape[0], 1))
        if self.matrix is None or self.matrix.shape != x.shape:
            raise ContractViolation(
                f"custom baseline shape {None if self.matrix is None else self.matrix.shape}"
                f" != input shape {x.shape}")
        return self.matrix

    @property
    def label(self) -> str:
        return self.kind.value


@dataclass
class Attribution:
    """Per-(timestep, feature) importance scores for one prediction."""

    e: np.ndarray          # (W, n)
    method: Method
    meta: dict = field(default_factory=dict)

    def row_sums(self) -> np.ndarray:
        return self.e.sum(axis=1)

    def to_json(self) -> str:
        return json.dumps({
            "method": self.method.value,
            "k_or_m": self.meta.get("k", self.meta.get("m")),
            "seed": self.meta.get("seed"),
            "baseline": self.meta.get("baseline"),
            "wallclock_ns": self.meta.get("wallclock_ns"),
            "n_forward_evals": self.meta.get("n_forward_evals"),
            "shape": list(self.e.shape),
            "e": [float(v) for v in self.e.ravel()],
            "attention": ([float(v) for v in self.meta["attention"]]
                          if "attention" in self.meta else None),
        })

    @classmethod
    def from_json(cls, text: str) -> "Attribution":
        obj = json.loads(text)
        w, n = obj["shape"]
        meta = {"baseline": obj.get("baseline"), "seed": obj.get("seed"),
                "wallclock_ns": obj.get("wallclock_ns"),
                "n_forward_evals": obj.get("n_forward_evals")}
        if obj.get("attention") is not None:
            meta["attention"] = np.array(obj["attention"])
        method = Method(obj["method"])
        key = "m" if method is Method.SHAP else "k"
        if obj.get("k_or_m") is not None:
            meta[key] = obj["k_or_m"]
        return cls(e=np.array(obj["e"]).reshape(w, n), method=method, meta=meta)


def explain_attention(cache: ForwardCache) -> Attribution:
    """Lift the attention profile to a (W, n) attribution.

    Each timestep's weight a_t is spread uniformly over the n features so
    row sums recover a_t exactly; attention carries no per-feature
    information and the uniform spread encodes that.
    """
    t0 = time.perf_counter_ns()
    w, n = cache.x.shape
    e = np.tile(cache.a[:, None] / n, (1, n))
    meta = {"wallclock_ns": time.perf_counter_ns() - t0,
            "n_forward_evals": 0, "attention": cache.a.copy()}
    return Attribution(e=e, method=Method.ATTENTION, meta=meta)


def _prepare(params, window, norm, baseline):
    x = norm.normalize(as_matrix(window))
    b = baseline.resolve(x, norm)
    return x, b


def explain_ig(
    params: ModelParams, window, norm: Normalizer,
    baseline: BaselineSpec = BaselineSpec(), k: int = 5,
) -> Attribution:
    """Integrated gradients with a k-step midpoint Riemann rule.

    e[t, i] = (x - b)[t, i] * mean_j dy/dx at b + ((j - 0.5)/k)(x - b).
    Exact for linear models at any k; satisfies completeness as k grows.
    """
    if k < 1:
        raise ConfigurationError(f"ig steps k must be >= 1, got {k}")
    t0 = time.perf_counter_ns()
    x, b = _prepare(params, window, norm, baseline)
    alphas = (np.arange(k) + 0.5) / k
    points = b + alphas[:, None, None] * (x - b)
    grads = _input_grads_batch(params, points) * norm.target_std
    e = (x - b) * grads.mean(axis=0)
    meta = {"k": k, "baseline": baseline.label,
            "wallclock_ns": time.perf_counter_ns() - t0,
            "n_forward_evals": k}
    return Attribution(e=e, method=Method.IG, meta=meta)


def _batch_predict(params, points, norm):
    y_norm, *_ = _forward_batch(params, points)
    return y_norm * norm.target_std + norm.target_mean


def explain_shap(
    params: ModelParams, window, norm: Normalizer,
    baseline: BaselineSpec = BaselineSpec(), m: int = 16, seed: int = 0,
) -> Attribution:
    """Monte-Carlo permutation Shapley over the W*n scalar cells.

    For each of m random permutations, walk the permutation replacing
    baseline cells with true cells and credit each cell the marginal
    change in the prediction; the attribution is the average credit.
    Costs m*d + 1 distinct forward evaluations (the all-baseline one is
    shared).
    """
    if m < 1:
        raise ConfigurationError(f"shap samples m must be >= 1, got {m}")
    t0 = time.perf_counter_ns()
    x, b = _prepare(params, window, norm, baseline)
    w, n = x.shape
    d = w * n
    flat_x, flat_b = x.ravel(), b.ravel()
    rng = np.random.default_rng(seed)

    credits = np.zeros(d)
    y_base = float(_batch_predict(params, b[None], norm)[0])
    for _ in range(m):
        perm = rng.permutation(d)
        # Cumulative reveal: point j has the first j+1 cells of the
        # permutation at their true values.
        reveal = np.tile(flat_b, (d, 1))
        for j in range(d):
            reveal[j:, perm[j]] = flat_x[perm[j]]
        ys = _batch_predict(params, reveal.reshape(d, w, n), norm)
        prev = np.concatenate(([y_base], ys[:-1]))
        credits[perm] += ys - prev
    e = (credits / m).reshape(w, n)
    meta = {"m": m, "seed": seed, "baseline": baseline.label,
            "wallclock_ns": time.perf_counter_ns() - t0,
            "n_forward_evals": m * d + 1}
    return Attribution(e=e, method=Method.SHAP, meta=meta)


def shapley_exact(
    params: ModelParams, window, norm: Normalizer,
    baseline: BaselineSpec = BaselineSpec(),
) -> Attribution:
    """Exact Shapley values by full subset enumeration (test oracle).

    Refuses more than 16 cells (2^d model evaluations). Satisfies
    efficiency: attributions sum to f(x) - f(b) up to float error.
    """
    x, b = _prepare(params, window, norm, baseline)
    w, n = x.shape
    d = w * n
    if d > EXACT_SHAPLEY_MAX_CELLS:
        raise SizeError(f"exact Shapley limited to {EXACT_SHAPLEY_MAX_CELLS} cells, got {d}")
    flat_x, flat_b = x.ravel(), b.ravel()

    # Evaluate every subset once, indexed by bitmask.
    points = np.empty((1 << d, w * n))
    for mask in range(1 << d):
        row = flat_b.copy()
        for i in range(d):
            if mask >> i & 1:
                row[i] = flat_x[i]
        points[mask] = row
    values = _batch_predict(params, points.reshape(-1, w, n), norm)

    fact = [math.factorial(i) for i in range(d + 1)]
    e = np.zeros(d)
    for i in range(d):
        for mask in range(1 << d):
            if mask >> i & 1:
                continue
            size = bin(mask).count("1")
            weight = fact[size] * fact[d - size - 1] / fact[d]
            e[i] += weight * (values[mask | (1 << i)] - values[mask])
    meta = {"baseline": baseline.label, "n_forward_evals": 1 << d}
    return Attribution(e=e.reshape(w, n), method=Method.SHAP, meta=meta)


def explain_hybrid(
    params: ModelParams, window, norm: Normalizer,
    baseline: BaselineSpec = BaselineSpec(), k: int = 5,
) -> Attribution:
    """The proposed attention+IG method.

    The attribution matrix is the k-step IG result; the attention profile
    from the single shared forward pass rides along as temporal metadata.
    Sharing that pass (rather than running attention and IG separately)
    is where the method's latency advantage comes from.
    """
    if k < 1:
        raise ConfigurationError(f"ig steps k must be >= 1, got {k}")
    t0 = time.perf_counter_ns()
    x, b = _prepare(params, window, norm, baseline)
    _, cache = forward_norm(params, x, out_scale=norm.target_std,
                            out_shift=norm.target_mean)
    alphas = (np.arange(k) + 0.5) / k
    points = b + alphas[:, None, None] * (x - b)
    grads = _input_grads_batch(params, points) * norm.target_std
    e = (x - b) * grads.mean(axis=0)
    meta = {"k": k, "baseline": baseline.label,
            "wallclock_ns": time.perf_counter_ns() - t0,
            "n_forward_evals": k + 1, "attention": cache.a.copy()}
    return Attribution(e=e, method=Method.HYBRID, meta=meta)


def explain(
    method: Method, params: ModelParams, window, norm: Normalizer,
    baseline: BaselineSpec = BaselineSpec(), k: int = 5, m: int = 16, seed: int = 0,
) -> Attribution:
    """Dispatch to the configured attribution method."""
    if method is Method.ATTENTION:
        x = norm.normalize(as_matrix(window))
        _, cache = forward_norm(params, x, out_scale=norm.target_std,
                                out_shift=norm.target_mean)
        return explain_attention(cache)
    if method is Method.IG:
        return explain_ig(params, window, norm, baseline, k=k)
    if method is Method.SHAP:
        return explain_shap(params, window, norm, baseline, m=m, seed=seed)
    if method is Method.HYBRID:
        return explain_hybrid(params, window, norm, baseline, k=k)
    raise ConfigurationError(f"method {method} produces no attribution")
