"""Scenario configuration: an INI dialect with env and command-line overrides.

Grammar: UTF-8 text, ``[section]`` headers, ``key = value`` lines, ``#``
full-line comments.  Every key has a default (see ``SCHEMA``); unknown
sections or keys are rejected.  Layers are applied in order

    defaults < run.preset < file < environment < explicit overrides

An environment variable ``CLOCKGUARD__<SECTION>__<KEY>`` overrides a key;
dots in the section name become underscores, so ``detector.nis_gate`` is
``CLOCKGUARD__DETECTOR__NIS_GATE`` and ``clock.rx.q1`` is
``CLOCKGUARD__CLOCK_RX__Q1``.

Special values: ``matched`` for filter keys derives q/r from the clocks
and meter; ``meter`` for ``detector.drift_floor`` takes the meter floor
(or the Monte-Carlo floor for an ideal meter); ``inf`` for
``detector.hold_epochs`` latches alarms; ``derived`` for ``meter.seed``
derives the meter seed from ``run.seed``.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

from .attack import ATTACK_PRESETS, AttackKind, AttackProfile
from .clocksim import ClockTruth, NoiseSpec, derive_seed, get_profile
from .detect import DetectorConfig, calibrate_floor
from .ensemble import EnsembleConfig
from .errors import InvalidArgument, TraceFormatError
from .kalman import matched_r
from .phasemeter import MeterConfig

__all__ = [
    "SCHEMA",
    "ENV_PREFIX",
    "ScenarioConfig",
    "default_settings",
    "load_settings",
    "parse_config_text",
    "dump_settings",
    "build_scenario",
    "env_name",
]

ENV_PREFIX = "CLOCKGUARD"

_CLOCK_KEYS = {"x0": "", "y0": "", "d0": "", "q1": "", "q2": "", "q3": "", "wpm_sigma": ""}

SCHEMA: dict[str, dict[str, str]] = {
    "run": {"duration": "1000", "dt": "1.0", "seed": "0", "preset": "none"},
    "clocks": {"rx": "rx-tcxo", "ref": "ocxo-ref"},
    "clock.rx": dict(_CLOCK_KEYS),
    "clock.ref": dict(_CLOCK_KEYS),
    "meter": {
        "f_meas": "2e8",
        "pll_drift_rate": "9e-8",
        "pll_jitter_sigma": "3e-9",
        "wrap_interval": "1.0",
        "seed": "derived",
        "dropouts": "",
    },
    "filter": {"q1": "matched", "q2": "matched", "q3": "matched", "r": "matched"},
    "detector": {
        "nis_gate": "3.84",
        "nis_k": "8",
        "nis_n": "10",
        "phase_limit": "25.6e-6",
        "drift_floor": "meter",
        "drift_margin": "1.5",
        "hold_epochs": "inf",
        "baseline_epochs": "60",
    },
    "attack": {"kind": "", "start_epoch": "", "rate": "", "target_offset": "", "smoothness": ""},
    "ensemble": {
        "n_members": "0",
        "member_profile": "ocxo-ref",
        "vco_profile": "vcocxo",
        "pivot": "0",
        "kp": "0.1",
        "ki": "0.005",
        "slew_limit": "1e-7",
        "dac_step": "1e-12",
        "y0_spread": "1e-10",
        "vco_y0": "5e-10",
    },
}


def env_name(section: str, key: str) -> str:
    return f"{ENV_PREFIX}__{section.upper().replace('.', '_')}__{key.upper()}"


def default_settings() -> dict[str, dict[str, str]]:
    return {sec: dict(keys) for sec, keys in SCHEMA.items()}


def _check_key(section: str, key: str, line=None):
    if section not in SCHEMA:
        raise TraceFormatError(f"unknown config section [{section}]", line=line)
    if key not in SCHEMA[section]:
        raise TraceFormatError(f"unknown key {key!r} in [{section}]", line=line)


def parse_config_text(text: str) -> dict[str, dict[str, str]]:
    """Parse INI text into ``{section: {key: value}}`` of explicit settings only."""
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=None, delimiters=("=",)
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise TraceFormatError(f"bad config: {exc}") from None
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            _check_key(section, key)
            out.setdefault(section, {})[key] = value.strip()
    return out


def _split_key(dotted: str) -> tuple[str, str]:
    section, _, key = dotted.rpartition(".")
    if not section:
        raise InvalidArgument(f"config key {dotted!r} must be written section.key")
    _check_key(section, key)
    return section, key


def load_settings(
    path: str | Path | None = None,
    overrides: Mapping[str, str] | None = None,
    env: Mapping[str, str] | None = None,
    text: str | None = None,
) -> dict[str, dict[str, str]]:
    """Merge every configuration layer into a fully-populated settings dict.

    ``overrides`` maps ``section.key`` to a value string.  ``env`` defaults
    to ``os.environ``.
    """
    env = os.environ if env is None else env
    explicit: dict[str, dict[str, str]] = {}

    def put(layer):
        for sec, kv in layer.items():
            explicit.setdefault(sec, {}).update(kv)

    if path is not None:
        put(parse_config_text(Path(path).read_text(encoding="utf-8")))
    if text is not None:
        put(parse_config_text(text))
    for sec, keys in SCHEMA.items():
        for key in keys:
            name = env_name(sec, key)
            if name in env:
                put({sec: {key: env[name].strip()}})
    for dotted, value in (overrides or {}).items():
        sec, key = _split_key(dotted)
        put({sec: {key: str(value).strip()}})

    settings = default_settings()
    preset = explicit.get("run", {}).get("preset", settings["run"]["preset"])
    if preset not in ATTACK_PRESETS:
        raise InvalidArgument(f"unknown preset {preset!r}; known: {sorted(ATTACK_PRESETS)}")
    p = ATTACK_PRESETS[preset]
    settings["attack"] = {
        "kind": p.kind.value,
        "start_epoch": repr(p.start_epoch),
        "rate": repr(p.rate),
        "target_offset": repr(p.target_offset),
        "smoothness": repr(p.smoothness),
    }
    for sec, kv in explicit.items():
        settings[sec].update(kv)
    return settings


def dump_settings(settings: Mapping[str, Mapping[str, str]]) -> str:
    """Render settings as config text; parsing it back reproduces them."""
    lines = []
    for sec in SCHEMA:
        lines.append(f"[{sec}]")
        for key in SCHEMA[sec]:
            lines.append(f"{key} = {settings[sec][key]}")
        lines.append("")
    return "\n".join(lines)


def _num(settings, sec, key, kind=float):
    raw = settings[sec][key]
    try:
        if kind is int:
            value = float(raw)
            if not value.is_integer():
                raise ValueError
            return int(value)
        return float(raw)
    except ValueError:
        raise InvalidArgument(f"{sec}.{key}: expected {kind.__name__}, got {raw!r}") from None


def _clock(settings, role: str, seed: int) -> tuple[str, ClockTruth]:
    name = settings["clocks"][role]
    base = get_profile(name)
    over = settings[f"clock.{role}"]
    noise = base.noise
    nkw = {k: _num(settings, f"clock.{role}", k) for k in ("q1", "q2", "q3", "wpm_sigma") if over[k]}
    if nkw:
        noise = replace(noise, **nkw)
    ckw = {k: _num(settings, f"clock.{role}", k) for k in ("x0", "y0", "d0") if over[k]}
    return name, replace(base, noise=noise, seed=seed, **ckw)


@dataclass(frozen=True)
class ScenarioConfig:
    duration: float
    dt: float
    seed: int
    rx: ClockTruth
    ref: ClockTruth
    meter: MeterConfig
    filter_q: NoiseSpec
    filter_r: float
    detector: DetectorConfig
    attack: AttackProfile
    ensemble: EnsembleConfig | None
    settings: dict

    @property
    def n_epochs(self) -> int:
        return int(round(self.duration / self.dt))

    def echo(self) -> str:
        return dump_settings(self.settings)


def build_scenario(settings: Mapping[str, Mapping[str, str]]) -> ScenarioConfig:
    """Validate settings and resolve them into a runnable scenario."""
    settings = {sec: dict(kv) for sec, kv in settings.items()}
    duration = _num(settings, "run", "duration")
    dt = _num(settings, "run", "dt")
    seed = _num(settings, "run", "seed", int)
    if not dt > 0 or not duration >= 2 * dt:
        raise InvalidArgument(f"need dt > 0 and duration >= 2*dt, got {duration}, {dt}")

    try:
        _, rx = _clock(settings, "rx", derive_seed(seed, 1))
        _, ref = _clock(settings, "ref", derive_seed(seed, 2))
    except KeyError as exc:
        raise InvalidArgument(str(exc.args[0])) from None

    m = settings["meter"]
    meter_seed = derive_seed(seed, 3) if m["seed"] == "derived" else _num(settings, "meter", "seed", int)
    try:
        dropouts = tuple(int(v) for v in m["dropouts"].replace(",", " ").split())
    except ValueError:
        raise InvalidArgument(f"meter.dropouts: expected integer indices, got {m['dropouts']!r}") from None
    meter = MeterConfig(
        f_meas=_num(settings, "meter", "f_meas"),
        pll_drift_rate=_num(settings, "meter", "pll_drift_rate"),
        pll_jitter_sigma=_num(settings, "meter", "pll_jitter_sigma"),
        wrap_interval=_num(settings, "meter", "wrap_interval"),
        seed=meter_seed,
        dropouts=dropouts,
    )

    e = settings["ensemble"]
    n_members = _num(settings, "ensemble", "n_members", int)
    ensemble = None
    if n_members > 0:
        ensemble = EnsembleConfig(
            n_members=n_members,
            member_profile=e["member_profile"],
            vco_profile=e["vco_profile"],
            pivot=_num(settings, "ensemble", "pivot", int),
            kp=_num(settings, "ensemble", "kp"),
            ki=_num(settings, "ensemble", "ki"),
            slew_limit=_num(settings, "ensemble", "slew_limit"),
            dac_step=_num(settings, "ensemble", "dac_step"),
            y0_spread=_num(settings, "ensemble", "y0_spread"),
            vco_y0=_num(settings, "ensemble", "vco_y0"),
        )
        for name in (ensemble.member_profile, ensemble.vco_profile):
            try:
                get_profile(name)
            except KeyError as exc:
                raise InvalidArgument(str(exc.args[0])) from None

    # With an ensemble reference the steered oscillator stands in for ref.
    ref_noise = get_profile(ensemble.vco_profile).noise if ensemble else ref.noise
    matched_q = rx.noise + ref_noise
    f = settings["filter"]
    q = NoiseSpec(
        q1=matched_q.q1 if f["q1"] == "matched" else _num(settings, "filter", "q1"),
        q2=matched_q.q2 if f["q2"] == "matched" else _num(settings, "filter", "q2"),
        q3=matched_q.q3 if f["q3"] == "matched" else _num(settings, "filter", "q3"),
    )
    r = (
        matched_r(meter, rx.noise.wpm_sigma, ref_noise.wpm_sigma)
        if f["r"] == "matched"
        else _num(settings, "filter", "r")
    )
    if not r > 0:
        raise InvalidArgument(f"filter.r must be > 0, got {r}")

    d = settings["detector"]
    det_kw = dict(
        nis_gate=_num(settings, "detector", "nis_gate"),
        nis_k=_num(settings, "detector", "nis_k", int),
        nis_n=_num(settings, "detector", "nis_n", int),
        phase_limit=_num(settings, "detector", "phase_limit"),
        hold_epochs=math.inf if d["hold_epochs"] == "inf" else _num(settings, "detector", "hold_epochs"),
        baseline_epochs=_num(settings, "detector", "baseline_epochs", int),
    )
    margin = _num(settings, "detector", "drift_margin")
    if d["drift_floor"] == "meter":
        detector = calibrate_floor(meter, q, r, drift_margin=margin, seed=seed, **det_kw)
    else:
        detector = DetectorConfig(drift_floor=_num(settings, "detector", "drift_floor"), drift_margin=margin, **det_kw)

    a = settings["attack"]
    try:
        kind = AttackKind(a["kind"].upper())
    except ValueError:
        raise InvalidArgument(f"attack.kind: unknown kind {a['kind']!r}") from None
    attack = AttackProfile(
        kind=kind,
        start_epoch=_num(settings, "attack", "start_epoch"),
        rate=_num(settings, "attack", "rate"),
        target_offset=_num(settings, "attack", "target_offset"),
        smoothness=_num(settings, "attack", "smoothness"),
    )
    if kind is not AttackKind.NONE and not duration > attack.start_epoch:
        raise InvalidArgument("duration must exceed attack.start_epoch")

    return ScenarioConfig(duration, dt, seed, rx, ref, meter, q, r, detector, attack, ensemble, settings)
