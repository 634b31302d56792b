"""Counter model of the GNSS-PPS versus reference-PPS phase comparison.

The measurement chain is: true relative phase, plus a linear PLL drift of
random sign, plus white edge jitter, wrapped into the PPS period centred on
zero, then truncated to the measurement clock period.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .clocksim import PhaseTrajectory
from .errors import InvalidArgument, TraceFormatError

__all__ = [
    "MeterConfig",
    "PhaseSample",
    "PhaseSeries",
    "UnwrapResult",
    "quantize",
    "wrap",
    "measure",
    "unwrap",
    "meter_floor",
    "write_samples_csv",
    "read_samples_csv",
]


@dataclass(frozen=True)
class MeterConfig:
    """Phase meter parameters.

    ``pll_jitter_sigma`` lumps receiver PPS edge jitter and PLL jitter; its
    3 ns default dithers the 5 ns counter so truncation error is white.
    ``dropouts`` lists sample indices whose PPS edge is missing.
    """

    f_meas: float = 2e8
    pll_drift_rate: float = 9e-8
    pll_jitter_sigma: float = 3e-9
    wrap_interval: float = 1.0
    seed: int = 0
    dropouts: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.f_meas > 0:
            raise InvalidArgument(f"f_meas must be > 0, got {self.f_meas}")
        if not self.pll_drift_rate >= 0:
            raise InvalidArgument(f"pll_drift_rate must be >= 0, got {self.pll_drift_rate}")
        if not self.pll_jitter_sigma >= 0:
            raise InvalidArgument(f"pll_jitter_sigma must be >= 0, got {self.pll_jitter_sigma}")
        if not self.wrap_interval > 0:
            raise InvalidArgument(f"wrap_interval must be > 0, got {self.wrap_interval}")
        object.__setattr__(self, "dropouts", tuple(int(i) for i in self.dropouts))

    @property
    def step(self) -> float:
        return 1.0 / self.f_meas

    @property
    def measurement_variance(self) -> float:
        """Truncation variance plus jitter variance (s**2)."""
        return self.step**2 / 12 + self.pll_jitter_sigma**2


@dataclass(frozen=True)
class PhaseSample:
    epoch: float
    offset: float
    valid: bool = True
    quantized: bool = True


@dataclass(frozen=True, eq=False)
class PhaseSeries:
    """Columnar series of phase samples."""

    epoch: np.ndarray
    offset: np.ndarray
    valid: np.ndarray
    quantized: np.ndarray
    wrap_interval: float = 1.0

    def __post_init__(self):
        epoch = np.asarray(self.epoch, dtype=float)
        offset = np.asarray(self.offset, dtype=float)
        valid = np.asarray(self.valid, dtype=bool)
        quantized = np.asarray(self.quantized, dtype=bool)
        if not (epoch.shape == offset.shape == valid.shape == quantized.shape) or epoch.ndim != 1:
            raise InvalidArgument("phase series columns must be 1-D and equally long")
        object.__setattr__(self, "epoch", epoch)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "quantized", quantized)

    @classmethod
    def from_samples(cls, samples, wrap_interval: float = 1.0) -> "PhaseSeries":
        samples = list(samples)
        return cls(
            epoch=[s.epoch for s in samples],
            offset=[s.offset for s in samples],
            valid=[s.valid for s in samples],
            quantized=[s.quantized for s in samples],
            wrap_interval=wrap_interval,
        )

    def __len__(self) -> int:
        return self.epoch.size

    def __getitem__(self, i: int) -> PhaseSample:
        return PhaseSample(
            float(self.epoch[i]), float(self.offset[i]), bool(self.valid[i]), bool(self.quantized[i])
        )

    def __iter__(self) -> Iterator[PhaseSample]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, PhaseSeries):
            return NotImplemented
        return (
            self.wrap_interval == other.wrap_interval
            and np.array_equal(self.epoch, other.epoch)
            and np.array_equal(self.offset, other.offset, equal_nan=True)
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.quantized, other.quantized)
        )


def quantize(value, step: float):
    """Largest multiple of ``step`` that is <= ``value`` (counter truncation).

    Works on scalars and arrays.  The multiple is corrected after the
    floor so the result is exact and idempotent in floating point.
    """
    if not step > 0:
        raise InvalidArgument(f"step must be > 0, got {step}")
    v = np.asarray(value, dtype=float)
    k = np.floor(v / step)
    k = np.where((k + 1) * step <= v, k + 1, k)
    k = np.where(k * step > v, k - 1, k)
    out = k * step
    return float(out) if out.ndim == 0 else out


def wrap(value, interval: float):
    """Map phase into ``[-interval/2, interval/2)``."""
    half = interval / 2
    v = np.asarray(value, dtype=float)
    out = np.mod(v + half, interval) - half
    out = np.where(out >= half, out - interval, out)
    return float(out) if out.ndim == 0 else out


def measure(truth: PhaseTrajectory, cfg: MeterConfig) -> PhaseSeries:
    """Counter readings of the true relative phase ``truth``."""
    n = len(truth)
    rng = np.random.default_rng(cfg.seed)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    k = np.arange(n)
    m = truth.samples + sign * cfg.pll_drift_rate * k * truth.dt
    if cfg.pll_jitter_sigma > 0:
        m = m + cfg.pll_jitter_sigma * rng.standard_normal(n)
    offset = quantize(wrap(m, cfg.wrap_interval), cfg.step)
    offset = np.atleast_1d(offset)
    valid = np.ones(n, dtype=bool)
    for i in cfg.dropouts:
        if 0 <= i < n:
            valid[i] = False
    offset = np.where(valid, offset, np.nan)
    return PhaseSeries(truth.epochs, offset, valid, np.ones(n, dtype=bool), cfg.wrap_interval)


def drift_sign(cfg: MeterConfig) -> float:
    """The PLL drift direction ``measure`` uses for this config's seed."""
    return 1.0 if np.random.default_rng(cfg.seed).random() < 0.5 else -1.0


@dataclass(frozen=True, eq=False)
class UnwrapResult:
    offsets: np.ndarray
    ambiguous: np.ndarray = field(repr=False)

    @property
    def any_ambiguous(self) -> bool:
        return bool(self.ambiguous.any())


def unwrap(samples: PhaseSeries, max_step: float | None = None) -> UnwrapResult:
    """Remove PPS-period wraps from a wrapped offset series.

    Between consecutive valid samples the increment is taken modulo the
    wrap interval into ``[-w/2, w/2)``.  An increment whose magnitude
    reaches ``max_step`` (default ``w/4``) leaves the wrap count in doubt
    and flags the later sample as ambiguous.  Invalid samples stay NaN and
    keep the accumulated wrap count.
    """
    w = samples.wrap_interval
    if max_step is None:
        max_step = w / 4
    raw = samples.offset
    out = np.full(raw.shape, np.nan)
    ambiguous = np.zeros(raw.shape, dtype=bool)
    idx = np.flatnonzero(samples.valid)
    if idx.size == 0:
        return UnwrapResult(out, ambiguous)
    r = raw[idx]
    jump = np.diff(r)
    inc = np.atleast_1d(wrap(jump, w))
    wraps = np.concatenate([[0], np.cumsum(np.rint((inc - jump) / w).astype(np.int64))])
    out[idx] = np.where(wraps != 0, r + wraps * w, r)
    ambiguous[idx[1:]] = np.abs(inc) >= max_step
    return UnwrapResult(out, ambiguous)


def meter_floor(cfg: MeterConfig) -> float:
    """Smallest adversarial drift rate (s/s) the meter can credibly resolve."""
    return cfg.pll_drift_rate


def _bool(text: str, lineno: int) -> bool:
    text = text.strip()
    if text in ("1", "true", "True"):
        return True
    if text in ("0", "false", "False"):
        return False
    raise TraceFormatError(f"expected 0/1 flag, got {text!r}", line=lineno)


SAMPLE_HEADER = ["epoch_s", "offset_s", "valid", "quantized"]


def write_samples_csv(series: PhaseSeries, dest) -> None:
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        fh.write(",".join(SAMPLE_HEADER) + "\n")
        for t, x, v, q in zip(
            series.epoch.tolist(), series.offset.tolist(), series.valid.tolist(), series.quantized.tolist()
        ):
            fh.write(f"{t!r},{x!r},{int(v)},{int(q)}\n")
    finally:
        if own:
            fh.close()


def read_samples_csv(src, wrap_interval: float = 1.0) -> PhaseSeries:
    """Parse and validate a ``epoch_s,offset_s,valid,quantized`` file."""
    own = isinstance(src, (str, Path))
    fh = open(src, newline="") if own else src
    try:
        rows = list(csv.reader(fh))
    finally:
        if own:
            fh.close()
    if not rows or [c.strip() for c in rows[0]] != SAMPLE_HEADER:
        raise TraceFormatError(f"expected header {','.join(SAMPLE_HEADER)!r}", line=1)
    half = wrap_interval / 2
    epochs, offsets, valids, quants = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 4:
            raise TraceFormatError(f"expected 4 fields, got {len(row)}", line=lineno)
        try:
            t = float(row[0])
            x = float(row[1])
        except ValueError as exc:
            raise TraceFormatError(str(exc), line=lineno) from None
        valid = _bool(row[2], lineno)
        quantized = _bool(row[3], lineno)
        if not np.isfinite(t):
            raise TraceFormatError("non-finite epoch", line=lineno)
        if epochs and t <= epochs[-1]:
            raise TraceFormatError(f"epoch {t!r} not after {epochs[-1]!r}", line=lineno)
        if valid and not (np.isfinite(x) and -half <= x < half):
            raise TraceFormatError(
                f"offset {x!r} outside wrap range [{-half}, {half})", line=lineno
            )
        epochs.append(t)
        offsets.append(x)
        valids.append(valid)
        quants.append(quantized)
    return PhaseSeries(epochs, offsets, valids, quants, wrap_interval)
