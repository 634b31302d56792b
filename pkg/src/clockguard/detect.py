"""Alarm logic on top of the clock filter.

Three tests run every epoch:

* NIS_WINDOW  -- at least ``nis_k`` of the last ``nis_n`` innovations fail
  the chi-square(1) gate;
* PHASE_LIMIT -- the estimated phase departs from its armed baseline by
  ``phase_limit`` or more;
* DRIFT_RATE  -- the estimated frequency exceeds ``drift_margin`` times the
  meter floor for ``nis_n`` consecutive epochs.

A wrap-ambiguity flag from the phase meter is passed through as
WRAP_AMBIGUOUS.  Any of the four raises ALARM; a lone over-gate NIS or
frequency sample only raises SUSPECT.  Alarms latch unless ``hold_epochs``
is finite.

The phase test is measured against a baseline latched after
``baseline_epochs`` epochs: the phase/frequency estimate at that point,
extrapolated linearly.  This keeps the meter's own linear PLL drift, which
accumulates to hundreds of microseconds over a few hours, from being read
as a time error.  Before the baseline is armed the raw phase is tested.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .attack import AttackKind, AttackProfile, attack_offset
from .clocksim import NoiseSpec, derive_seed, synthesize_noise
from .errors import ContractViolation, InvalidArgument
from .kalman import FilterTrace, initial_state, run_filter
from .phasemeter import MeterConfig, PhaseSeries, meter_floor

__all__ = [
    "Level",
    "Trigger",
    "DetectorConfig",
    "DetectorState",
    "Verdict",
    "Summary",
    "step",
    "run_detector",
    "metrics",
    "calibrate_floor",
    "write_verdicts_csv",
]


class Level(enum.IntEnum):
    NOMINAL = 0
    SUSPECT = 1
    ALARM = 2


class Trigger(str, enum.Enum):
    NIS_WINDOW = "NIS_WINDOW"
    PHASE_LIMIT = "PHASE_LIMIT"
    DRIFT_RATE = "DRIFT_RATE"
    WRAP_AMBIGUOUS = "WRAP_AMBIGUOUS"


_TRIGGER_ORDER = list(Trigger)


@dataclass(frozen=True)
class DetectorConfig:
    nis_gate: float = 3.84
    nis_k: int = 8
    nis_n: int = 10
    phase_limit: float = 25.6e-6
    drift_floor: float = 9e-8
    drift_margin: float = 1.5
    hold_epochs: float = math.inf
    baseline_epochs: int = 60

    def __post_init__(self):
        for name in ("nis_gate", "phase_limit", "drift_floor", "drift_margin", "hold_epochs"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not (1 <= self.nis_k <= self.nis_n):
            raise InvalidArgument(f"need 1 <= nis_k <= nis_n, got {self.nis_k} of {self.nis_n}")
        if self.baseline_epochs < 0:
            raise InvalidArgument("baseline_epochs must be >= 0")

    @property
    def drift_threshold(self) -> float:
        return self.drift_margin * self.drift_floor


@dataclass(frozen=True)
class DetectorState:
    epoch: float = -math.inf
    steps: int = 0
    window: tuple[bool, ...] = ()
    drift_run: int = 0
    latched: frozenset = frozenset()
    quiet: int = 0
    baseline: tuple[float, float, float] | None = None  # (epoch, phase, freq)


@dataclass(frozen=True)
class Verdict:
    epoch: float
    level: Level
    triggers: frozenset = frozenset()
    evidence: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.level is Level.ALARM and not self.triggers:
            raise ContractViolation("an ALARM verdict needs at least one trigger")


def step(
    state: DetectorState,
    cfg: DetectorConfig,
    epoch: float,
    x_hat: Sequence[float],
    innovation: float | None = None,
    innovation_var: float | None = None,
    ambiguous: bool = False,
) -> tuple[DetectorState, Verdict]:
    """Advance the detector by one epoch and return its verdict.

    ``innovation``/``innovation_var`` are None (or NaN) on coast-only epochs.
    """
    if not epoch > state.epoch:
        raise ContractViolation(f"detector epoch {epoch!r} not after {state.epoch!r}")
    phase, freq = float(x_hat[0]), float(x_hat[1])
    if not (math.isfinite(phase) and math.isfinite(freq)):
        raise ContractViolation("filter estimate is not finite")

    window = state.window
    nis_exceed = False
    if innovation is not None and innovation_var is not None and not math.isnan(innovation):
        if not innovation_var > 0:
            raise ContractViolation(f"innovation variance must be > 0, got {innovation_var!r}")
        nis_exceed = innovation * innovation / innovation_var > cfg.nis_gate
        window = (window + (nis_exceed,))[-cfg.nis_n :]
    n_exceed = sum(window)

    baseline = state.baseline
    if baseline is None:
        deviation = phase
    else:
        b_epoch, b_phase, b_freq = baseline
        deviation = phase - (b_phase + b_freq * (epoch - b_epoch))

    freq_exceed = abs(freq) >= cfg.drift_threshold
    drift_run = state.drift_run + 1 if freq_exceed else 0

    current = {}
    if n_exceed >= cfg.nis_k:
        current[Trigger.NIS_WINDOW] = float(n_exceed)
    if abs(deviation) >= cfg.phase_limit:
        current[Trigger.PHASE_LIMIT] = abs(deviation)
    if drift_run >= cfg.nis_n:
        current[Trigger.DRIFT_RATE] = abs(freq)
    if ambiguous:
        current[Trigger.WRAP_AMBIGUOUS] = 1.0

    latched, quiet = state.latched, state.quiet
    if current:
        latched = latched | frozenset(current)
        quiet = 0
    else:
        quiet += 1
        if quiet >= cfg.hold_epochs:
            latched = frozenset()

    if latched:
        level = Level.ALARM
    elif nis_exceed or freq_exceed:
        level = Level.SUSPECT
    else:
        level = Level.NOMINAL

    steps = state.steps + 1
    if baseline is None and steps >= cfg.baseline_epochs and cfg.baseline_epochs > 0:
        baseline = (float(epoch), phase, freq)

    new_state = DetectorState(epoch, steps, window, drift_run, latched, quiet, baseline)
    return new_state, Verdict(float(epoch), level, latched, current)


def run_detector(
    trace: FilterTrace,
    cfg: DetectorConfig,
    ambiguous: np.ndarray | None = None,
) -> list[Verdict]:
    state = DetectorState()
    verdicts = []
    for i in range(len(trace)):
        nu = trace.innovation[i]
        state, verdict = step(
            state,
            cfg,
            float(trace.epoch[i]),
            trace.x_hat[i],
            None if math.isnan(nu) else float(nu),
            None if math.isnan(nu) else float(trace.innovation_var[i]),
            bool(ambiguous[i]) if ambiguous is not None else False,
        )
        verdicts.append(verdict)
    return verdicts


@dataclass(frozen=True)
class Summary:
    detected: bool
    missed: bool
    first_alarm_epoch: float | None
    latency: float | None
    offset_at_detection: float | None
    false_alarms: int
    alarm_epochs: int

    def as_text(self) -> str:
        def fmt(v):
            if v is None:
                return "NA"
            if isinstance(v, bool):
                return str(v).lower()
            return repr(v)

        keys = [
            "detected",
            "missed",
            "first_alarm_epoch",
            "latency_s",
            "offset_at_detection_s",
            "false_alarms",
            "alarm_epochs",
        ]
        vals = [
            self.detected,
            self.missed,
            self.first_alarm_epoch,
            self.latency,
            self.offset_at_detection,
            self.false_alarms,
            self.alarm_epochs,
        ]
        return "".join(f"{k}={fmt(v)}\n" for k, v in zip(keys, vals))


def metrics(verdicts: Sequence[Verdict], attack: AttackProfile) -> Summary:
    """Detection latency and false alarms of a verdict stream against the attack truth.

    Epochs before the attack start count as pre-attack; with no attack all
    epochs do.  ``false_alarms`` counts pre-attack ALARM epochs.
    """
    attacked = attack.kind is not AttackKind.NONE
    start = attack.start_epoch if attacked else math.inf
    false_alarms = sum(1 for v in verdicts if v.level is Level.ALARM and v.epoch < start)
    alarm_epochs = sum(1 for v in verdicts if v.level is Level.ALARM)
    first_any = next((v.epoch for v in verdicts if v.level is Level.ALARM), None)
    if not attacked:
        return Summary(False, False, first_any, None, None, false_alarms, alarm_epochs)
    first = next((v.epoch for v in verdicts if v.level is Level.ALARM and v.epoch >= start), None)
    if first is None:
        return Summary(False, True, first_any, None, None, false_alarms, alarm_epochs)
    offset = float(attack_offset(attack, first))
    return Summary(True, False, first_any, first - start, offset, false_alarms, alarm_epochs)


def calibrate_floor(
    meter: MeterConfig,
    q: NoiseSpec,
    r: float,
    drift_margin: float = 1.5,
    seeds: int = 8,
    n: int = 2000,
    seed: int = 0,
    **overrides,
) -> DetectorConfig:
    """Detector defaults whose drift floor matches the meter.

    A drifting meter sets the floor to its PLL drift rate; adversarial
    ramps slower than ``floor * margin`` are then undetectable by the
    drift test by design.  An ideal meter has no drift, so the floor
    becomes three standard deviations of the steady-state frequency
    estimate on nominal data, estimated by Monte Carlo over ``seeds``
    runs of ``n`` epochs.
    """
    floor = meter_floor(meter)
    if floor <= 0:
        floor = 3.0 * nominal_freq_sigma(q, r, seeds=seeds, n=n, seed=seed)
    return DetectorConfig(drift_floor=floor, drift_margin=drift_margin, **overrides)


def nominal_freq_sigma(q: NoiseSpec, r: float, seeds: int = 8, n: int = 2000, seed: int = 0) -> float:
    """RMS frequency estimate over the second half of nominal runs matched to (q, r)."""
    tail = []
    for s in range(seeds):
        truth = synthesize_noise(NoiseSpec(q.q1, q.q2, q.q3), n, 1.0, derive_seed(seed, s, 0))
        rng = np.random.default_rng(derive_seed(seed, s, 1))
        meas = truth.samples + math.sqrt(r) * rng.standard_normal(n)
        series = PhaseSeries(truth.epochs, meas, np.ones(n, bool), np.zeros(n, bool))
        trace = run_filter(series, initial_state(q, r, t0=0.0))
        tail.append(trace.x_hat[n // 2 :, 1])
    tail = np.concatenate(tail)
    return float(np.sqrt(np.mean(tail * tail)))


def format_triggers(triggers) -> str:
    return "|".join(t.value for t in _TRIGGER_ORDER if t in triggers)


def write_verdicts_csv(verdicts: Sequence[Verdict], dest) -> None:
    """``epoch_s,level,triggers,evidence``; multiple triggers are '|'-joined."""
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        fh.write("epoch_s,level,triggers,evidence\n")
        for v in verdicts:
            ev = "|".join(
                f"{t.value}={float(v.evidence[t])!r}" for t in _TRIGGER_ORDER if t in v.evidence
            )
            fh.write(f"{float(v.epoch)!r},{v.level.name},{format_triggers(v.triggers)},{ev}\n")
    finally:
        if own:
            fh.close()
