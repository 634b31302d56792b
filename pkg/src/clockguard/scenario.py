"""End-to-end pipeline: clocks -> attack -> phase meter -> filter -> detector."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .attack import apply_attack, attack_offset
from .clocksim import PhaseTrajectory, derive_seed, relative_phase, simulate_clock
from .config import ScenarioConfig, build_scenario, load_settings
from .detect import Level, Summary, Verdict, format_triggers, metrics, run_detector
from .ensemble import EnsembleRun, run_ensemble
from .errors import ClockGuardError, InvalidArgument, StageError, TraceFormatError
from .kalman import FilterTrace, initial_state, run_filter
from .phasemeter import PhaseSeries, UnwrapResult, measure, read_samples_csv, unwrap, wrap

__all__ = [
    "Analysis",
    "ScenarioResult",
    "analyze",
    "run_scenario",
    "ingest_trace",
    "sweep",
    "write_records_csv",
    "write_sweep_csv",
    "settings_for",
    "run_settings",
]


@dataclass(frozen=True, eq=False)
class Analysis:
    """Filter and detector outputs for one phase series."""

    samples: PhaseSeries
    unwrapped: UnwrapResult
    trace: FilterTrace
    verdicts: list[Verdict]


def analyze(samples: PhaseSeries, cfg: ScenarioConfig) -> Analysis:
    """Run unwrap, filter and detector over a measured (or ingested) series."""
    stage = "unwrap"
    try:
        unwrapped = unwrap(samples)
        stage = "clock-filter"
        valid = np.flatnonzero(samples.valid)
        t0 = float(samples.epoch[valid[0]] if valid.size else samples.epoch[0])
        state = initial_state(cfg.filter_q, cfg.filter_r, t0=t0)
        trace = run_filter(samples, state, unwrapped.offsets)
        stage = "detect"
        verdicts = run_detector(trace, cfg.detector, unwrapped.ambiguous)
    except ClockGuardError as exc:
        raise StageError(stage, exc) from exc
    return Analysis(samples, unwrapped, trace, verdicts)


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    config: ScenarioConfig
    seed: int
    rx_phase: PhaseTrajectory  # attacked receiver clock vs ideal time
    ref_phase: PhaseTrajectory
    truth_offset: np.ndarray  # rx - ref without the attack
    attack_offset: np.ndarray
    analysis: Analysis
    summary: Summary
    ensemble: EnsembleRun | None = None

    @property
    def epochs(self) -> np.ndarray:
        return self.rx_phase.epochs

    @property
    def attacked_offset(self) -> np.ndarray:
        return self.truth_offset + self.attack_offset

    @property
    def verdicts(self) -> list[Verdict]:
        return self.analysis.verdicts

    @property
    def alarm_raised(self) -> bool:
        return any(v.level is Level.ALARM for v in self.analysis.verdicts)


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Simulate one scenario; fully determined by ``cfg`` (including its seed)."""
    stage = "clock-sim"
    try:
        rx = simulate_clock(cfg.rx, cfg.duration, cfg.dt)
        ens = None
        if cfg.ensemble is not None:
            stage = "ensemble"
            ens = run_ensemble(cfg.ensemble, cfg.duration, cfg.dt, seed=derive_seed(cfg.seed, 4))
            ref = PhaseTrajectory(cfg.dt, ens.steered)
        else:
            ref = simulate_clock(cfg.ref, cfg.duration, cfg.dt)
        truth = relative_phase(rx, ref)
        stage = "attack"
        attacked_rx = apply_attack(rx, cfg.attack)
        offsets = attack_offset(cfg.attack, rx.epochs)
        stage = "phase-meter"
        samples = measure(relative_phase(attacked_rx, ref), cfg.meter)
    except ClockGuardError as exc:
        raise StageError(stage, exc) from exc
    analysis = analyze(samples, cfg)
    summary = metrics(analysis.verdicts, cfg.attack)
    return ScenarioResult(cfg, cfg.seed, attacked_rx, ref, truth.samples, offsets, analysis, summary, ens)


def run_settings(settings: Mapping[str, Mapping[str, str]]) -> ScenarioResult:
    return run_scenario(build_scenario(settings))


def _looks_like_samples(first_line: str) -> bool:
    return first_line.strip().replace(" ", "") == "epoch_s,offset_s,valid,quantized"


def ingest_trace(
    path: str | Path,
    fmt: str = "auto",
    wrap_interval: float = 1.0,
    dt: float = 1.0,
    sign: float = 1.0,
) -> PhaseSeries:
    """Load a phase log for offline analysis.

    ``fmt="samples"`` is the native ``epoch_s,offset_s,valid,quantized``
    format.  ``fmt="counter"`` reads a time-interval counter log: either
    ``epoch,interval`` rows or a bare column of intervals (epochs are then
    ``index * dt``), an optional non-numeric header line, and intervals
    measured from the reference PPS edge to the receiver PPS edge in
    ``[0, wrap_interval)``.  They are mapped into the centred wrap range;
    ``sign=-1`` handles a counter wired the other way round.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline()
    if fmt == "auto":
        fmt = "samples" if _looks_like_samples(first) else "counter"
    if fmt == "samples":
        return read_samples_csv(path, wrap_interval)
    if fmt != "counter":
        raise InvalidArgument(f"unknown trace format {fmt!r}")

    epochs, offsets = [], []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    for lineno, row in enumerate(rows, start=1):
        row = [c.strip() for c in row if c.strip()]
        if not row or row[0].startswith("#"):
            continue
        try:
            values = [float(c) for c in row]
        except ValueError:
            if lineno == 1:
                continue  # header
            raise TraceFormatError(f"non-numeric row {row!r}", line=lineno) from None
        if len(values) == 1:
            t, ti = len(epochs) * dt, values[0]
        elif len(values) == 2:
            t, ti = values
        else:
            raise TraceFormatError(f"expected 1 or 2 columns, got {len(values)}", line=lineno)
        if not (math.isfinite(t) and math.isfinite(ti)):
            raise TraceFormatError("non-finite value", line=lineno)
        if epochs and t <= epochs[-1]:
            raise TraceFormatError(f"epoch {t!r} not after {epochs[-1]!r}", line=lineno)
        epochs.append(t)
        offsets.append(wrap(sign * ti, wrap_interval))
    if not epochs:
        raise TraceFormatError("no samples in counter log")
    n = len(epochs)
    return PhaseSeries(epochs, offsets, np.ones(n, bool), np.zeros(n, bool), wrap_interval)


def _sweep_one(args):
    settings, axis, value, seed = args
    sec, _, key = axis.rpartition(".")
    s = {k: dict(v) for k, v in settings.items()}
    s[sec][key] = value
    s["run"]["seed"] = str(seed)
    return run_settings(s).summary


def sweep(
    settings: Mapping[str, Mapping[str, str]],
    axis: str,
    values: Sequence[str],
    seeds: int = 1,
    jobs: int = 1,
) -> list[dict]:
    """Run the template once per (value, seed) and summarise each value.

    Seeds are ``run.seed + i`` for ``i < seeds``.  Rows are ordered by the
    given values regardless of completion order.
    """
    sec, _, key = axis.rpartition(".")
    if sec not in settings or key not in settings[sec]:
        raise InvalidArgument(f"unknown sweep axis {axis!r}")
    if seeds < 1:
        raise InvalidArgument("seeds must be >= 1")
    base_seed = int(settings["run"]["seed"])
    tasks = [(settings, axis, str(v), base_seed + i) for v in values for i in range(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_sweep_one, tasks))
    else:
        summaries = [_sweep_one(t) for t in tasks]

    rows = []
    for j, v in enumerate(values):
        chunk = summaries[j * seeds : (j + 1) * seeds]
        lat = [s.latency for s in chunk if s.latency is not None]
        offs = [abs(s.offset_at_detection) for s in chunk if s.offset_at_detection is not None]
        rows.append(
            {
                "value": str(v),
                "runs": len(chunk),
                "detected": sum(s.detected for s in chunk),
                "missed": sum(s.missed for s in chunk),
                "mean_latency_s": float(np.mean(lat)) if lat else math.nan,
                "max_latency_s": float(np.max(lat)) if lat else math.nan,
                "max_offset_at_detection_s": float(np.max(offs)) if offs else math.nan,
                "false_alarm_runs": sum(s.false_alarms > 0 for s in chunk),
                "false_alarm_epochs": sum(s.false_alarms for s in chunk),
            }
        )
    return rows


SWEEP_COLUMNS = [
    "value",
    "runs",
    "detected",
    "missed",
    "mean_latency_s",
    "max_latency_s",
    "max_offset_at_detection_s",
    "false_alarm_runs",
    "false_alarm_epochs",
]


def write_sweep_csv(rows: Sequence[dict], dest) -> None:
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in SWEEP_COLUMNS) + "\n")
    finally:
        if own:
            fh.close()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


RECORD_HEADER = (
    "epoch_s,truth_offset_s,attacked_offset_s,measured_offset_s,valid,unwrapped_offset_s,"
    "x_hat_phase,x_hat_freq,x_hat_drift,innovation,innovation_var,nis,level,triggers"
)


def write_records_csv(result: ScenarioResult, dest) -> None:
    """Per-epoch scenario records, one row per epoch."""
    a = result.analysis
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        fh.write(RECORD_HEADER + "\n")
        cols = zip(
            result.epochs.tolist(),
            result.truth_offset.tolist(),
            result.attacked_offset.tolist(),
            a.samples.offset.tolist(),
            a.samples.valid.tolist(),
            a.unwrapped.offsets.tolist(),
            a.trace.x_hat.tolist(),
            a.trace.innovation.tolist(),
            a.trace.innovation_var.tolist(),
            a.trace.nis.tolist(),
            a.verdicts,
        )
        for t, tru, att, mea, val, unw, x, nu, s, e, v in cols:
            fh.write(
                f"{t!r},{tru!r},{att!r},{mea!r},{int(val)},{unw!r},{x[0]!r},{x[1]!r},{x[2]!r},"
                f"{nu!r},{s!r},{e!r},{v.level.name},{format_triggers(v.triggers)}\n"
            )
    finally:
        if own:
            fh.close()


def settings_for(preset: str = "none", seed: int = 0, overrides: Mapping[str, object] | None = None) -> dict:
    """Convenience: resolved settings for a preset plus ``section.key`` overrides.

    The environment is ignored so results do not depend on the caller's shell.
    """
    over = {"run.preset": preset, "run.seed": str(seed)}
    over.update({k: str(v) for k, v in (overrides or {}).items()})
    return load_settings(overrides=over, env={})
