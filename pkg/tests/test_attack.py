import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from clockguard.attack import ATTACK_PRESETS, AttackKind, AttackProfile, apply_attack, attack_offset
from clockguard.clocksim import ClockTruth, get_profile, simulate_clock
from clockguard.errors import InvalidArgument


def test_none_is_identity():
    traj = simulate_clock(get_profile("rx-tcxo").with_seed(2), 300)
    assert apply_attack(traj, AttackProfile()) is traj
    assert_array_equal(attack_offset(AttackProfile(), np.arange(5.0)), np.zeros(5))


def test_smooth_pulloff_closed_form():
    p = AttackProfile(AttackKind.SMOOTH_PULLOFF, start_epoch=100, target_offset=2e-6, smoothness=60)
    assert float(attack_offset(p, 160.0)) == pytest.approx(2e-6 * (1 - math.exp(-1)), rel=1e-12)
    assert float(attack_offset(p, 160.0)) == pytest.approx(1.264e-6, abs=1e-9)
    assert float(attack_offset(p, 99.0)) == 0.0
    assert float(attack_offset(p, 100.0)) == 0.0


def test_ramp_floor_rate():
    p = AttackProfile(AttackKind.RAMP, start_epoch=100, rate=9e-8)
    assert float(attack_offset(p, 110.0)) == pytest.approx(9e-7, rel=1e-12)
    assert float(attack_offset(p, 50.0)) == 0.0


def test_ramp_clamps_at_target():
    p = ATTACK_PRESETS["ds2-like"]
    off = attack_offset(p, np.arange(0.0, 200.0))
    assert off[105] == pytest.approx(1e-6)
    assert off.max() == pytest.approx(2e-6)
    assert np.all(np.diff(off) >= 0)
    neg = AttackProfile(AttackKind.RAMP, start_epoch=0, rate=-1e-7, target_offset=-5e-7)
    assert float(attack_offset(neg, 100.0)) == pytest.approx(-5e-7)


def test_step():
    p = AttackProfile(AttackKind.STEP, start_epoch=10, target_offset=-3e-6)
    assert_array_equal(attack_offset(p, [9.0, 10.0, 11.0]), [0.0, -3e-6, -3e-6])


def test_apply_adds_offset_on_grid():
    truth = simulate_clock(ClockTruth(y0=1e-9), 200)
    p = ATTACK_PRESETS["ds3-like"]
    out = apply_attack(truth, p)
    assert_allclose(out.samples - truth.samples, attack_offset(p, truth.epochs), rtol=0, atol=1e-21)
    assert out.dt == truth.dt and len(out) == len(truth)


def test_ds3_initial_slope():
    p = ATTACK_PRESETS["ds3-like"]
    assert p.target_offset / p.smoothness == pytest.approx(3.33e-8, rel=1e-2)


@pytest.mark.parametrize(
    "kw",
    [
        dict(kind=AttackKind.RAMP, start_epoch=-1, rate=1e-7),
        dict(kind=AttackKind.RAMP, rate=1e-7, target_offset=-1e-6),
        dict(kind=AttackKind.RAMP, rate=0.0),
        dict(kind=AttackKind.STEP, target_offset=0.0),
        dict(kind=AttackKind.SMOOTH_PULLOFF, target_offset=1e-6, smoothness=0.0),
    ],
)
def test_invalid_profiles(kw):
    with pytest.raises(InvalidArgument):
        AttackProfile(**kw)


def test_kind_accepts_string():
    assert AttackProfile("STEP", target_offset=1e-6).kind is AttackKind.STEP
