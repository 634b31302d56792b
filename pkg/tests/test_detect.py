import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clockguard.attack import AttackKind, AttackProfile
from clockguard.clocksim import NoiseSpec
from clockguard.detect import (
    DetectorConfig,
    DetectorState,
    Level,
    Summary,
    Trigger,
    Verdict,
    calibrate_floor,
    metrics,
    run_detector,
    step,
    write_verdicts_csv,
)
from clockguard.errors import ContractViolation, InvalidArgument
from clockguard.kalman import FilterTrace, initial_state, propagate, update
from clockguard.phasemeter import MeterConfig, PhaseSample
from clockguard.scenario import run_settings, settings_for


def _trace(x_hat, innovation=None, innovation_var=None):
    x_hat = np.asarray(x_hat, float)
    n = x_hat.shape[0]
    innovation = np.zeros(n) if innovation is None else np.asarray(innovation, float)
    innovation_var = np.full(n, 1e-18) if innovation_var is None else np.asarray(innovation_var, float)
    with np.errstate(invalid="ignore"):
        nis = innovation**2 / innovation_var
    return FilterTrace(np.arange(float(n)), x_hat, innovation, innovation_var, nis, None)


def test_quiet_stream_stays_nominal():
    verdicts = run_detector(_trace(np.full((500, 3), 1e-12)), DetectorConfig())
    assert all(v.level is Level.NOMINAL and not v.triggers for v in verdicts)


def test_phase_limit_alarm():
    _, v = step(DetectorState(), DetectorConfig(), 0.0, [30e-6, 0.0, 0.0], 0.0, 1e-18)
    assert v.level is Level.ALARM
    assert Trigger.PHASE_LIMIT in v.triggers
    assert v.evidence[Trigger.PHASE_LIMIT] == 30e-6


def test_phase_limit_is_relative_to_latched_baseline():
    cfg = DetectorConfig(baseline_epochs=5)
    state = DetectorState()
    # a steady 1e-7 s/s meter drift ramps the phase well past the bound
    for k in range(1000):
        state, v = step(state, cfg, float(k), [1e-7 * k, 1e-7, 0.0], 0.0, 1e-18)
    assert v.level is Level.NOMINAL
    assert Trigger.PHASE_LIMIT not in v.triggers
    state, v = step(state, cfg, 1000.0, [1e-7 * 1000 + 30e-6, 1e-7, 0.0], 0.0, 1e-18)
    assert Trigger.PHASE_LIMIT in v.triggers


def test_nis_window_k_of_n():
    cfg = DetectorConfig(drift_floor=1.0)
    state = DetectorState()
    levels = []
    for k in range(12):
        big = k >= 2
        state, v = step(state, cfg, float(k), [0.0, 0.0, 0.0], 3e-9 if big else 0.0, 1e-18)
        levels.append(v.level)
    # exceedances start at epoch 2; the 8th lands at epoch 9
    assert levels[:2] == [Level.NOMINAL] * 2
    assert levels[2:9] == [Level.SUSPECT] * 7
    assert levels[9:] == [Level.ALARM] * 3
    assert Trigger.NIS_WINDOW in v.triggers


def test_drift_rate_needs_sustained_run():
    cfg = DetectorConfig()
    state = DetectorState()
    out = []
    for k in range(12):
        state, v = step(state, cfg, float(k), [0.0, 1.4e-7, 0.0], 0.0, 1e-18)
        out.append(v)
    assert [v.level for v in out[:9]] == [Level.SUSPECT] * 9
    assert out[9].level is Level.ALARM and Trigger.DRIFT_RATE in out[9].triggers


def test_wrap_ambiguous_passthrough_and_latching():
    state, v = step(DetectorState(), DetectorConfig(), 0.0, [0, 0, 0], ambiguous=True)
    assert v.triggers == {Trigger.WRAP_AMBIGUOUS}
    state, v = step(state, DetectorConfig(), 1.0, [0, 0, 0], 0.0, 1e-18)
    assert v.level is Level.ALARM and not v.evidence


def test_finite_hold_clears():
    cfg = DetectorConfig(hold_epochs=3)
    state, v = step(DetectorState(), cfg, 0.0, [30e-6, 0, 0])
    levels = []
    for k in range(1, 6):
        state, v = step(state, cfg, float(k), [0.0, 0.0, 0.0], 0.0, 1e-18)
        levels.append(v.level)
    assert levels == [Level.ALARM, Level.ALARM, Level.NOMINAL, Level.NOMINAL, Level.NOMINAL]


def test_step_contracts():
    state, _ = step(DetectorState(), DetectorConfig(), 5.0, [0, 0, 0])
    with pytest.raises(ContractViolation):
        step(state, DetectorConfig(), 5.0, [0, 0, 0])
    with pytest.raises(ContractViolation):
        step(state, DetectorConfig(), 6.0, [float("nan"), 0, 0])
    with pytest.raises(ContractViolation):
        step(state, DetectorConfig(), 6.0, [0, 0, 0], 1e-9, 0.0)
    with pytest.raises(ContractViolation):
        Verdict(0.0, Level.ALARM)


def test_config_validation():
    with pytest.raises(InvalidArgument):
        DetectorConfig(nis_k=11, nis_n=10)
    with pytest.raises(InvalidArgument):
        DetectorConfig(phase_limit=0.0)


def test_threshold():
    assert DetectorConfig(drift_floor=9e-8, drift_margin=1.5).drift_threshold == pytest.approx(1.35e-7)


def _v(epoch, level, *triggers):
    return Verdict(float(epoch), level, frozenset(triggers))


def test_metrics_latency_arithmetic():
    attack = AttackProfile(AttackKind.RAMP, start_epoch=100.0, rate=2e-7, target_offset=2e-6)
    verdicts = [_v(k, Level.NOMINAL) for k in range(112)] + [
        _v(k, Level.ALARM, Trigger.NIS_WINDOW) for k in range(112, 120)
    ]
    s = metrics(verdicts, attack)
    assert s.detected and not s.missed
    assert s.latency == 12.0
    assert s.offset_at_detection == pytest.approx(2e-6)
    assert s.false_alarms == 0


def test_metrics_missed_and_false_alarms():
    attack = AttackProfile(AttackKind.STEP, start_epoch=50.0, target_offset=1e-6)
    verdicts = [_v(k, Level.ALARM, Trigger.NIS_WINDOW) if k == 10 else _v(k, Level.NOMINAL) for k in range(60)]
    s = metrics(verdicts, attack)
    assert s.missed and not s.detected
    assert s.latency is None
    assert s.false_alarms == 1
    assert "latency_s=NA" in s.as_text()
    assert "missed=true" in s.as_text()


def test_summary_text_layout():
    s = Summary(True, False, 108.0, 8.0, 1.6e-06, 0, 892)
    assert s.as_text() == (
        "detected=true\nmissed=false\nfirst_alarm_epoch=108.0\nlatency_s=8.0\n"
        "offset_at_detection_s=1.6e-06\nfalse_alarms=0\nalarm_epochs=892\n"
    )


def test_calibrate_floor_default_meter():
    cfg = calibrate_floor(MeterConfig(), NoiseSpec(q1=1e-18), 1e-17)
    assert cfg.drift_floor == 9e-8
    assert cfg.drift_threshold == pytest.approx(1.35e-7)


def test_calibrate_floor_ideal_meter_matches_riccati_oracle():
    meter = MeterConfig(pll_drift_rate=0.0)
    q = NoiseSpec(q1=1e-18 + 6.4e-21)
    r = meter.measurement_variance
    n = 2000
    cfg = calibrate_floor(meter, q, r, seeds=8, n=n)
    # Frequency has no process noise here, so its error variance keeps falling;
    # the oracle averages the matched filter's P[1,1] over the same second half.
    s = initial_state(q, r)
    p11 = []
    for k in range(1, n):
        s, _, _ = update(propagate(s, float(k)), PhaseSample(float(k), s.x_hat[0]))
        if k >= n // 2:
            p11.append(s.P[1, 1])
    expected = 3 * math.sqrt(np.mean(p11))
    assert abs(cfg.drift_floor - expected) / expected < 0.2


def _random_trace(seed, n=120):
    rng = np.random.default_rng(seed)
    x = np.column_stack(
        [
            np.cumsum(rng.normal(0, 3e-6, n)),
            rng.normal(0, 1.5e-7, n),
            np.zeros(n),
        ]
    )
    innov = rng.normal(0, 1.6e-9, n)
    return _trace(x, innov, np.full(n, 1e-18)), rng.random(n) < 0.02


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    field=st.sampled_from(["nis_gate", "nis_k", "phase_limit", "drift_margin", "drift_floor"]),
    factor=st.floats(1.0, 4.0),
)
def test_raising_a_threshold_never_adds_triggers(seed, field, factor):
    trace, amb = _random_trace(seed)
    low = DetectorConfig(nis_k=4)
    if field == "nis_k":
        high = DetectorConfig(nis_k=min(10, int(math.ceil(4 * factor))))
    else:
        high = DetectorConfig(nis_k=4, **{field: getattr(low, field) * factor})
    for a, b in zip(run_detector(trace, low, amb), run_detector(trace, high, amb)):
        assert set(b.evidence) <= set(a.evidence)
        assert b.triggers <= a.triggers
        assert b.level <= a.level


def test_zero_noise_zero_attack_is_silent():
    overrides = {
        "clocks.rx": "ideal",
        "clocks.ref": "ideal",
        "meter.pll_drift_rate": "0",
        "meter.pll_jitter_sigma": "0",
        "run.duration": "2000",
    }
    result = run_settings(settings_for("none", seed=3, overrides=overrides))
    assert not any(v.level is not Level.NOMINAL for v in result.verdicts)


@pytest.mark.parametrize("multiple", [2, 5, 10])
def test_fast_ramps_detected_within_five_windows(multiple):
    cfg = DetectorConfig()
    rate = multiple * cfg.drift_threshold
    for seed in range(10):
        overrides = {
            "attack.kind": "RAMP",
            "attack.start_epoch": "100",
            "attack.rate": repr(rate),
            "attack.target_offset": "0",
            "run.duration": "400",
        }
        s = run_settings(settings_for("none", seed=seed, overrides=overrides)).summary
        assert s.detected
        assert s.latency <= 5 * cfg.nis_n


def test_verdict_csv():
    verdicts = [
        _v(0, Level.NOMINAL),
        Verdict(1.0, Level.ALARM, frozenset({Trigger.DRIFT_RATE, Trigger.NIS_WINDOW}),
                {Trigger.NIS_WINDOW: 8.0, Trigger.DRIFT_RATE: 2e-7}),
    ]
    buf = io.StringIO()
    write_verdicts_csv(verdicts, buf)
    assert buf.getvalue() == (
        "epoch_s,level,triggers,evidence\n"
        "0.0,NOMINAL,,\n"
        "1.0,ALARM,NIS_WINDOW|DRIFT_RATE,NIS_WINDOW=8.0|DRIFT_RATE=2e-07\n"
    )
