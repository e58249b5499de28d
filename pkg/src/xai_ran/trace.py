"""Synthetic periodic-burst KPM traces and CSV ingest/emit.

One sample per timestep carries the five KPM features (throughput, BLER,
MCS, reference power, SINR). Throughput follows a square-wave burst
pattern; the remaining features are derived from it so the explainers
face a known causal structure: SINR tracks throughput, BLER is
anti-correlated with SINR, MCS is monotone in SINR, and reference power
is a slow bounded random walk.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, TraceParseError, TraceValidationError

FEATURE_NAMES = ("th", "bler", "mcs", "rp", "sinr")
N_FEATURES = len(FEATURE_NAMES)
TH, BLER, MCS, RP, SINR = range(N_FEATURES)

DEFAULT_W = 5

# Coupling constants (see module docstring): SINR swings +-A_SINR/2 dB
# around SINR_BASE across the burst range; RP walks inside [RP_LO, RP_HI].
SINR_BASE = 15.0
A_SINR = 10.0
BLER_SCALE = 0.5
RP_LO, RP_HI = -110.0, -70.0
RP_START = -90.0
RP_RANGE = RP_HI - RP_LO


@dataclass(frozen=True)
class KpmSample:
    """One timestep of KPM features."""

    t: int
    th: float      # DL throughput, Mbps
    bler: float    # block error rate, [0, 1]
    mcs: int       # modulation and coding scheme index, 0..28
    rp: float      # reference signal power, dBm
    sinr: float    # signal-to-interference-plus-noise ratio, dB

    def validate(self, line: int | None = None) -> None:
        where = f", line {line}" if line is not None else ""
        if not self.th >= 0.0:
            raise TraceValidationError(f"th out of range{where}: {self.th}")
        if not 0.0 <= self.bler <= 1.0:
            raise TraceValidationError(f"bler out of range{where}: {self.bler}")
        if not 0 <= self.mcs <= 28:
            raise TraceValidationError(f"mcs out of range{where}: {self.mcs}")

    def features(self) -> np.ndarray:
        return np.array([self.th, self.bler, float(self.mcs), self.rp, self.sinr])


@dataclass(frozen=True)
class KpmWindow:
    """A length-W history of consecutive samples fed to the predictor."""

    samples: tuple[KpmSample, ...]

    def __post_init__(self):
        ts = [s.t for s in self.samples]
        if any(b - a != 1 for a, b in zip(ts, ts[1:])):
            raise TraceValidationError(f"window timesteps not consecutive: {ts}")

    @property
    def w(self) -> int:
        return len(self.samples)

    def to_matrix(self) -> np.ndarray:
        """Raw (W, 5) feature matrix, column order FEATURE_NAMES."""
        return np.stack([s.features() for s in self.samples])


@dataclass(frozen=True)
class BurstConfig:
    """Parameters of the periodic-burst traffic generator."""

    period: int = 20
    duty: float = 0.5
    th_high: float = 100.0
    th_low: float = 10.0
    noise_std: float = 0.05   # fraction of each feature's range
    length: int = 2000
    seed: int = 42

    def validate(self) -> None:
        if self.period < 2:
            raise ConfigurationError(f"period must be >= 2, got {self.period}")
        if not 0.0 < self.duty < 1.0:
            raise ConfigurationError(f"duty must be in (0, 1), got {self.duty}")
        if not self.th_high > self.th_low >= 0.0:
            raise ConfigurationError(
                f"need th_high > th_low >= 0, got th_high={self.th_high} th_low={self.th_low}"
            )
        if self.noise_std < 0.0:
            raise ConfigurationError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.length < 1:
            raise ConfigurationError(f"length must be >= 1, got {self.length}")


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def generate_trace(config: BurstConfig) -> list[KpmSample]:
    """Generate a deterministic periodic-burst trace.

    Throughput is a square wave (high for the first ``duty`` fraction of
    each period) plus Gaussian noise scaled by the burst range. Derived
    features follow the coupling rules in the module docstring; all
    values are clamped to their invariant ranges.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    th_range = config.th_high - config.th_low
    th_mid = 0.5 * (config.th_high + config.th_low)
    high_steps = config.duty * config.period

    trace: list[KpmSample] = []
    rp = RP_START
    for t in range(config.length):
        base = config.th_high if (t % config.period) < high_steps else config.th_low
        # One draw per feature per step, in fixed order, so the stream is
        # reproducible independent of the noise level.
        n_th, n_sinr, n_bler, n_rp = rng.standard_normal(4)
        th = max(0.0, base + config.noise_std * th_range * n_th)
        sinr = SINR_BASE + A_SINR * (th - th_mid) / th_range + config.noise_std * A_SINR * n_sinr
        bler = min(1.0, max(0.0, BLER_SCALE * _sigmoid(-(sinr - 10.0) / 3.0)
                            + config.noise_std * BLER_SCALE * n_bler))
        mcs = int(min(28, max(0, round(sinr))))
        rp = min(RP_HI, max(RP_LO, rp + config.noise_std * RP_RANGE * n_rp))
        trace.append(KpmSample(t=t, th=th, bler=bler, mcs=mcs, rp=rp, sinr=sinr))
    return trace


def window_iter(
    trace: Sequence[KpmSample], w: int = DEFAULT_W, horizon: int = 1
) -> Iterator[tuple[KpmWindow, float]]:
    """Yield (history window, future throughput target) pairs.

    Pair j covers samples j..j+w-1 and targets the throughput at
    j+w-1+horizon. A trace shorter than w+horizon yields nothing.
    """
    if horizon < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
    for j in range(len(trace) - w - horizon + 1):
        window = KpmWindow(tuple(trace[j:j + w]))
        yield window, trace[j + w - 1 + horizon].th


CSV_HEADER = ["t", "th", "bler", "mcs", "rp", "sinr"]


def write_trace_csv(trace: Sequence[KpmSample], path) -> None:
    """Emit a trace as CSV; floats carry 9 significant digits."""
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s in trace:
            writer.writerow([s.t, f"{s.th:.9g}", f"{s.bler:.9g}", s.mcs,
                             f"{s.rp:.9g}", f"{s.sinr:.9g}"])


def read_trace_csv(path) -> list[KpmSample]:
    """Parse a trace CSV, validating every row."""
    trace: list[KpmSample] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceParseError(f"{path}: empty file, expected header {','.join(CSV_HEADER)}")
        if header != CSV_HEADER:
            raise TraceParseError(f"{path}: bad header {header!r}, expected {CSV_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise TraceParseError(f"{path}: expected {len(CSV_HEADER)} fields, line {lineno}")
            try:
                sample = KpmSample(
                    t=int(row[0]), th=float(row[1]), bler=float(row[2]),
                    mcs=int(row[3]), rp=float(row[4]), sinr=float(row[5]),
                )
            except ValueError as exc:
                raise TraceParseError(f"{path}: {exc}, line {lineno}") from exc
            sample.validate(line=lineno)
            trace.append(sample)
    return trace
