"""Clock-based GNSS spoofing detection.

Simulate receiver and reference clocks, measure their PPS phase difference,
track it with a Kalman filter and flag the drift a spoofer leaves behind.
"""

from .attack import ATTACK_PRESETS, AttackKind, AttackProfile, apply_attack, attack_offset
from .clocksim import ClockTruth, NoiseSpec, PhaseTrajectory, get_profile, relative_phase, simulate_clock
from .config import ScenarioConfig, build_scenario, load_settings
from .detect import DetectorConfig, Level, Summary, Trigger, Verdict, metrics, run_detector
from .ensemble import EnsembleConfig, run_ensemble
from .errors import (
    ClockGuardError,
    ContractViolation,
    InvalidArgument,
    NumericalFailure,
    StageError,
    TraceFormatError,
)
from .kalman import FilterState, initial_state, propagate, run_filter, transition, update
from .phasemeter import MeterConfig, PhaseSeries, measure, unwrap
from .scenario import ingest_trace, run_scenario, settings_for, sweep
from .stability import analytic_adev, fit_diffusion, overlapping_adev

__version__ = "0.1.0"

__all__ = [
    "ATTACK_PRESETS",
    "AttackKind",
    "AttackProfile",
    "ClockGuardError",
    "ClockTruth",
    "ContractViolation",
    "DetectorConfig",
    "EnsembleConfig",
    "FilterState",
    "InvalidArgument",
    "Level",
    "MeterConfig",
    "NoiseSpec",
    "NumericalFailure",
    "PhaseSeries",
    "PhaseTrajectory",
    "ScenarioConfig",
    "StageError",
    "Summary",
    "TraceFormatError",
    "Trigger",
    "Verdict",
    "analytic_adev",
    "apply_attack",
    "attack_offset",
    "build_scenario",
    "fit_diffusion",
    "get_profile",
    "ingest_trace",
    "initial_state",
    "load_settings",
    "measure",
    "metrics",
    "overlapping_adev",
    "propagate",
    "relative_phase",
    "run_detector",
    "run_ensemble",
    "run_filter",
    "run_scenario",
    "settings_for",
    "simulate_clock",
    "sweep",
    "transition",
    "unwrap",
    "update",
]
