"""Attention-based throughput predictor with exact analytic gradients.

Architecture: per-timestep linear embedding -> tanh -> additive attention
(softmax over timesteps) -> linear head. Small enough that forward,
backward, and input gradients are hand-derived, which keeps integrated
gradients free of any autodiff dependency.

All model math runs in normalized feature space; predictions are
de-normalized to Mbps with the throughput statistics of the training
split. The batched helpers share one code path with the public
single-window API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    ContractViolation,
    SizeError,
    TrainingDivergenceError,
)
from .trace import DEFAULT_W, N_FEATURES, TH, KpmSample, KpmWindow, window_iter

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Normalizer:
    """Per-feature z-score statistics from the training split."""

    mean: np.ndarray   # (n,)
    std: np.ndarray    # (n,), constant features fall back to 1

    @classmethod
    def fit(cls, rows: np.ndarray) -> "Normalizer":
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        std = np.where(std > 0.0, std, 1.0)
        return cls(mean=mean, std=std)

    @classmethod
    def identity(cls, n: int = N_FEATURES) -> "Normalizer":
        return cls(mean=np.zeros(n), std=np.ones(n))

    @property
    def target_mean(self) -> float:
        return float(self.mean[TH])

    @property
    def target_std(self) -> float:
        return float(self.std[TH])

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean) / self.std


@dataclass
class ModelParams:
    """Weights of the predictor. ``activation`` is "tanh" normally;
    "identity" builds the linear test model used by the oracles."""

    embed_w: np.ndarray   # (h, n)
    embed_b: np.ndarray   # (h,)
    attn_v: np.ndarray    # (h,)
    out_w: np.ndarray     # (h,)
    out_b: float
    activation: str = "tanh"

    @property
    def hidden(self) -> int:
        return self.embed_w.shape[0]

    @property
    def n_features(self) -> int:
        return self.embed_w.shape[1]

    @classmethod
    def init(cls, n: int = N_FEATURES, h: int = 16, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)

        def uniform(shape, fan_in):
            bound = 0.5 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(
            embed_w=uniform((h, n), n),
            embed_b=uniform((h,), n),
            attn_v=uniform((h,), h),
            out_w=uniform((h,), h),
            out_b=0.0,
        )

    def copy(self) -> "ModelParams":
        return ModelParams(
            embed_w=self.embed_w.copy(), embed_b=self.embed_b.copy(),
            attn_v=self.attn_v.copy(), out_w=self.out_w.copy(),
            out_b=self.out_b, activation=self.activation,
        )

    def check(self) -> None:
        h, n = self.embed_w.shape
        for name, arr, shape in (
            ("embed_b", self.embed_b, (h,)),
            ("attn_v", self.attn_v, (h,)),
            ("out_w", self.out_w, (h,)),
        ):
            if arr.shape != shape:
                raise ContractViolation(f"{name} has shape {arr.shape}, expected {shape}")
        if self.activation not in ("tanh", "identity"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")


@dataclass
class ParamGrads:
    embed_w: np.ndarray
    embed_b: np.ndarray
    attn_v: np.ndarray
    out_w: np.ndarray
    out_b: float


@dataclass
class ForwardCache:
    """Intermediate values from one forward pass, in normalized space.

    ``out_scale``/``out_shift`` carry the de-normalization applied to the
    prediction so backward can report gradients in output (Mbps) units.
    """

    x: np.ndarray          # (W, n) normalized input
    u: np.ndarray          # (W, h) activations
    s: np.ndarray          # (W,) attention logits
    a: np.ndarray          # (W,) attention weights, simplex
    c: np.ndarray          # (h,) context
    y_norm: float
    y: float
    out_scale: float = 1.0
    out_shift: float = 0.0


def _activate(params: ModelParams, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if params.activation == "tanh" else z


def _activate_grad(params: ModelParams, u: np.ndarray) -> np.ndarray:
    return 1.0 - u * u if params.activation == "tanh" else np.ones_like(u)


def _softmax(s: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _forward_batch(params: ModelParams, x: np.ndarray):
    """Batched forward over normalized inputs x of shape (B, W, n).

    Returns (y_norm (B,), u (B,W,h), s (B,W), a (B,W), c (B,h)).
    """
    z = x @ params.embed_w.T + params.embed_b
    u = _activate(params, z)
    s = u @ params.attn_v
    a = _softmax(s, axis=1)
    c = np.einsum("bw,bwh->bh", a, u)
    y_norm = c @ params.out_w + params.out_b
    return y_norm, u, s, a, c


def _input_grads_batch(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """d y_norm / d x for a batch of normalized inputs, shape (B, W, n)."""
    y_norm, u, s, a, c = _forward_batch(params, x)
    q = u @ params.out_w                               # (B, W)
    yc = np.einsum("bw,bw->b", a, q)                   # == c . out_w
    ds = a * (q - yc[:, None])                         # through softmax
    gu = a[..., None] * params.out_w + ds[..., None] * params.attn_v
    gz = gu * _activate_grad(params, u)
    return gz @ params.embed_w


def as_matrix(window) -> np.ndarray:
    """Accept a KpmWindow or a raw (W, n) array."""
    if isinstance(window, KpmWindow):
        return window.to_matrix()
    arr = np.asarray(window, dtype=float)
    if arr.ndim != 2:
        raise ContractViolation(f"window must be 2-D, got shape {arr.shape}")
    return arr


def forward(params: ModelParams, window, norm: Normalizer) -> tuple[float, ForwardCache]:
    """Predict throughput (Mbps) for one window and cache intermediates."""
    params.check()
    raw = as_matrix(window)
    if raw.shape[1] != params.n_features:
        raise ContractViolation(
            f"window has {raw.shape[1]} features, model expects {params.n_features}")
    x = norm.normalize(raw)
    return forward_norm(params, x, out_scale=norm.target_std, out_shift=norm.target_mean)


def forward_norm(
    params: ModelParams, x: np.ndarray, out_scale: float = 1.0, out_shift: float = 0.0
) -> tuple[float, ForwardCache]:
    """Forward pass on an already-normalized (W, n) input."""
    y_norm, u, s, a, c = _forward_batch(params, x[None])
    yn = float(y_norm[0])
    y = yn * out_scale + out_shift
    cache = ForwardCache(x=x, u=u[0], s=s[0], a=a[0], c=c[0],
                         y_norm=yn, y=y, out_scale=out_scale, out_shift=out_shift)
    return y, cache


def backward(params: ModelParams, cache: ForwardCache) -> tuple[np.ndarray, ParamGrads]:
    """Exact gradients of the de-normalized prediction.

    Returns (input_grads, param_grads): input_grads[t, i] = dy/dx[t, i]
    on the normalized input, chain rule through the attention softmax
    included.
    """
    if cache.u.shape != (cache.x.shape[0], params.hidden):
        raise ContractViolation("cache does not match params (stale cache?)")
    u, a = cache.u, cache.a
    q = u @ params.out_w
    yc = float(a @ q)
    ds = a * (q - yc)
    gu = a[:, None] * params.out_w + ds[:, None] * params.attn_v
    gz = gu * _activate_grad(params, u)
    scale = cache.out_scale
    input_grads = (gz @ params.embed_w) * scale
    grads = ParamGrads(
        embed_w=(gz.T @ cache.x) * scale,
        embed_b=gz.sum(axis=0) * scale,
        attn_v=(ds @ u) * scale,
        out_w=cache.c * scale,
        out_b=scale,
    )
    return input_grads, grads


def forward_masked(
    params: ModelParams, window, norm: Normalizer,
    keep: set | Sequence[tuple[int, int]], baseline: np.ndarray,
) -> float:
    """Forward with every (t, i) cell outside ``keep`` replaced by the
    baseline (normalized space)."""
    raw = as_matrix(window)
    x = norm.normalize(raw)
    if baseline.shape != x.shape:
        raise ContractViolation(
            f"baseline shape {baseline.shape} != input shape {x.shape}")
    masked = baseline.copy()
    for t, i in keep:
        if not (0 <= t < x.shape[0] and 0 <= i < x.shape[1]):
            raise ContractViolation(f"keep index ({t}, {i}) out of range for {x.shape}")
        masked[t, i] = x[t, i]
    y, _ = forward_norm(params, masked,
                        out_scale=norm.target_std, out_shift=norm.target_mean)
    return y


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    epochs: int = 200
    seed: int = 0
    train_frac: float = 0.8
    hidden: int = 16
    momentum: float = 0.9


@dataclass
class TrainReport:
    train_mse: list[float] = field(default_factory=list)  # normalized units
    val_mse: list[float] = field(default_factory=list)
    val_rmse_mbps: float = 0.0
    val_r2: float = 0.0
    n_train: int = 0
    n_val: int = 0


def _windows_to_arrays(trace, w, horizon):
    xs, ys = [], []
    for window, target in window_iter(trace, w=w, horizon=horizon):
        xs.append(window.to_matrix())
        ys.append(target)
    if not xs:
        raise SizeError(f"trace of length {len(trace)} yields no windows (w={w}, horizon={horizon})")
    return np.stack(xs), np.array(ys)


def train(
    trace: Sequence[KpmSample], w: int = DEFAULT_W, horizon: int = 1,
    config: TrainConfig = TrainConfig(),
) -> tuple[ModelParams, Normalizer, TrainReport]:
    """Offline training: full-batch gradient descent with momentum on the
    MSE of normalized next-step throughput. Chronological 80/20 split;
    deterministic for a fixed seed."""
    raw_x, raw_y = _windows_to_arrays(trace, w, horizon)
    n_total = len(raw_x)
    n_train = max(1, int(round(config.train_frac * n_total)))
    if n_train >= n_total:
        n_train = n_total - 1
    if n_train < 1:
        raise SizeError(f"{n_total} windows is not enough for a train/validation split")

    norm = Normalizer.fit(raw_x[:n_train].reshape(-1, raw_x.shape[-1]))
    x = norm.normalize(raw_x)
    y = (raw_y - norm.target_mean) / norm.target_std
    x_tr, y_tr = x[:n_train], y[:n_train]
    x_va, y_va = x[n_train:], y[n_train:]

    params = ModelParams.init(n=raw_x.shape[-1], h=config.hidden, seed=config.seed)
    vel = ParamGrads(
        embed_w=np.zeros_like(params.embed_w), embed_b=np.zeros_like(params.embed_b),
        attn_v=np.zeros_like(params.attn_v), out_w=np.zeros_like(params.out_w), out_b=0.0,
    )
    report = TrainReport(n_train=n_train, n_val=n_total - n_train)

    for epoch in range(config.epochs):
        y_norm, u, s, a, c = _forward_batch(params, x_tr)
        resid = y_norm - y_tr
        loss = float(np.mean(resid ** 2))
        if not np.isfinite(loss):
            raise TrainingDivergenceError(
                f"non-finite loss at epoch {epoch} (lr={config.lr})")

        go = 2.0 * resid / n_train                      # dL/dy_norm per sample
        q = u @ params.out_w
        yc = np.einsum("bw,bw->b", a, q)
        ds = (a * (q - yc[:, None])) * go[:, None]
        gu = (a * go[:, None])[..., None] * params.out_w + ds[..., None] * params.attn_v
        gz = gu * _activate_grad(params, u)

        g = ParamGrads(
            embed_w=np.einsum("bwh,bwn->hn", gz, x_tr),
            embed_b=gz.sum(axis=(0, 1)),
            attn_v=np.einsum("bw,bwh->h", ds, u),
            out_w=go @ c,
            out_b=float(go.sum()),
        )
        mu, lr = config.momentum, config.lr
        vel.embed_w = mu * vel.embed_w - lr * g.embed_w
        vel.embed_b = mu * vel.embed_b - lr * g.embed_b
        vel.attn_v = mu * vel.attn_v - lr * g.attn_v
        vel.out_w = mu * vel.out_w - lr * g.out_w
        vel.out_b = mu * vel.out_b - lr * g.out_b
        params.embed_w = params.embed_w + vel.embed_w
        params.embed_b = params.embed_b + vel.embed_b
        params.attn_v = params.attn_v + vel.attn_v
        params.out_w = params.out_w + vel.out_w
        params.out_b = params.out_b + vel.out_b

        report.train_mse.append(loss)
        val_pred, *_ = _forward_batch(params, x_va)
        report.val_mse.append(float(np.mean((val_pred - y_va) ** 2)))

    val_pred, *_ = _forward_batch(params, x_va)
    resid_mbps = (val_pred - y_va) * norm.target_std
    report.val_rmse_mbps = float(np.sqrt(np.mean(resid_mbps ** 2)))
    var = float(np.var(y_va))
    report.val_r2 = 1.0 - report.val_mse[-1] / var if var > 0 else 1.0
    return params, norm, report


def save_checkpoint(path, params: ModelParams, norm: Normalizer) -> None:
    """Versioned plain-text key/value checkpoint, 17 significant digits."""

    def fmt(arr):
        return " ".join(f"{v:.17g}" for v in np.asarray(arr).ravel())

    h, n = params.embed_w.shape
    lines = [
        f"version {CHECKPOINT_VERSION}",
        f"hidden {h}",
        f"features {n}",
        f"activation {params.activation}",
        f"embed_w {fmt(params.embed_w)}",
        f"embed_b {fmt(params.embed_b)}",
        f"attn_v {fmt(params.attn_v)}",
        f"out_w {fmt(params.out_w)}",
        f"out_b {params.out_b:.17g}",
        f"norm_mean {fmt(norm.mean)}",
        f"norm_std {fmt(norm.std)}",
    ]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[ModelParams, Normalizer]:
    kv = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    with fh:
        for line in fh:
            key, _, rest = line.rstrip("\n").partition(" ")
            kv[key] = rest
    if int(kv.get("version", -1)) != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {kv.get('version')!r}")
    h, n = int(kv["hidden"]), int(kv["features"])

    def arr(key, shape):
        return np.array(kv[key].split(), dtype=float).reshape(shape)

    params = ModelParams(
        embed_w=arr("embed_w", (h, n)), embed_b=arr("embed_b", (h,)),
        attn_v=arr("attn_v", (h,)), out_w=arr("out_w", (h,)),
        out_b=float(kv["out_b"]), activation=kv["activation"],
    )
    norm = Normalizer(mean=arr("norm_mean", (n,)), std=arr("norm_std", (n,)))
    return params, norm


def linear_test_model(weights: np.ndarray, bias: float = 0.0) -> ModelParams:
    """A model that is exactly linear: single timestep, identity
    activation, one hidden unit per input weight row.

    ``weights`` has shape (n,); the resulting predictor computes
    y = weights . x + bias on a (1, n) window.
    """
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0]
    return ModelParams(
        embed_w=weights[None, :],       # h=1
        embed_b=np.zeros(1),
        attn_v=np.zeros(1),
        out_w=np.ones(1),
        out_b=bias,
        activation="identity",
    )
