import io
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from clockguard.clocksim import NoiseSpec
from clockguard.ensemble import (
    EnsembleConfig,
    ServoState,
    ensemble_propagate,
    ensemble_time,
    ensemble_update,
    initial_ensemble,
    inverse_variance_weights,
    recenter,
    run_ensemble,
    steer,
    write_ensemble_csv,
)
from clockguard.errors import InvalidArgument
from clockguard.kalman import initial_state, propagate
from clockguard.stability import overlapping_adev

from conftest import rel_err

OCXO = NoiseSpec(q1=6.4e-21)


def _random_state(rng, n, q=None):
    q = q or [NoiseSpec(1e-20 * (i + 1), 1e-27, 1e-35) for i in range(n)]
    s = initial_ensemble(q)
    scale = np.array([1e-8, 1e-11, 1e-15])[np.arange(3 * n) % 3]
    A = rng.standard_normal((3 * n, 3 * n)) * scale[:, None]
    x = rng.standard_normal((n, 3)) * [1e-8, 1e-11, 1e-15]
    return replace(s, x=x, P=A @ A.T)


def test_single_member_matches_clock_filter(rng):
    q = NoiseSpec(1e-20, 1e-27, 1e-35)
    ens = _random_state(rng, 1, [q])
    single = initial_state(q, 1e-18, x_hat=ens.x[0], P=ens.P)
    e2 = ensemble_propagate(ens, 2.5)
    s2 = propagate(single, 2.5)
    assert_array_equal(e2.P, s2.P)
    assert rel_err(e2.x[0], s2.x_hat) < 1e-15


def test_zero_noise_propagation():
    s = initial_ensemble([NoiseSpec()] * 3, P0=np.zeros((3, 3)))
    s = replace(s, x=np.array([[1e-9, 1e-12, 0.0], [0.0, -1e-12, 0.0], [-1e-9, 0.0, 1e-16]]))
    s2 = ensemble_propagate(s, 10.0)
    assert np.all(s2.P == 0.0)
    assert s2.x[0, 0] == pytest.approx(1e-9 + 1e-11)
    assert s2.x[2, 0] == pytest.approx(-1e-9 + 0.5e-14)


def test_split_interval_invariance(rng):
    s = _random_state(rng, 4)
    once = ensemble_propagate(s, 3.0)
    twice = ensemble_propagate(ensemble_propagate(s, 1.25), 1.75)
    assert rel_err(twice.x, once.x) < 1e-12
    assert rel_err(twice.P, once.P) < 1e-12


def test_weights_and_recentering(rng):
    s = initial_ensemble([OCXO, NoiseSpec(q1=1.6e-20), OCXO])
    s = ensemble_propagate(s, 1.0)
    s = ensemble_update(s, [3e-9, -2e-9], 1e-17)
    assert abs(s.weights.sum() - 1.0) < 1e-12
    assert abs(s.weights @ s.x[:, 0]) < 1e-15
    # 2.5x the diffusion, 1/2.5 of the weight
    assert s.weights[1] == pytest.approx(s.weights[0] / 2.5)
    assert np.max(np.abs(s.P - s.P.T)) <= 1e-15 * np.max(np.abs(s.P))
    # re-centring leaves P singular; its null-space eigenvalues are rounding noise
    assert np.linalg.eigvalsh(s.P).min() >= -1e-15 * np.trace(s.P)


def test_recenter_idempotent(rng):
    s = _random_state(rng, 5)
    w = rng.random(5)
    w /= w.sum()
    once = recenter(s, w)
    twice = recenter(once, w)
    assert np.max(np.abs(twice.x - once.x)) <= 1e-15 * np.max(np.abs(once.x))
    assert rel_err(twice.P, once.P) < 1e-12


def test_two_member_symmetry():
    s = initial_ensemble([OCXO, OCXO])
    s = ensemble_update(ensemble_propagate(s, 1.0), [4e-9], 1e-18)
    assert s.x[1, 0] > 0
    assert s.x[0, 0] == pytest.approx(-s.x[1, 0], rel=1e-12)
    assert s.x[1, 0] - s.x[0, 0] == pytest.approx(4e-9, rel=1e-3)


def test_zero_diffs_leave_centred_state():
    s = ensemble_propagate(initial_ensemble([OCXO] * 4), 1.0)
    s2 = ensemble_update(s, [0.0, 0.0, 0.0], 1e-17)
    assert np.all(s2.x == 0.0)


def test_missing_diff_is_skipped():
    s = ensemble_propagate(initial_ensemble([OCXO] * 3), 1.0)
    a = ensemble_update(s, [2e-9, None], 1e-17)
    b = ensemble_update(s, [2e-9, float("nan")], 1e-17)
    assert_array_equal(a.x, b.x)
    with pytest.raises(InvalidArgument):
        ensemble_update(s, [1e-9], 1e-17)


def test_ensemble_time():
    s = ensemble_propagate(initial_ensemble([OCXO] * 3), 1.0)
    s = ensemble_update(s, [5e-9, -1e-9], 1e-17)
    corr = ensemble_time(s)
    assert abs(s.weights @ corr) < 1e-15
    one = initial_ensemble([OCXO])
    assert ensemble_time(ensemble_update(ensemble_propagate(one, 1.0), [], 1e-17))[0] == 0.0


def test_inverse_variance_weights():
    w = inverse_variance_weights([OCXO, OCXO, NoiseSpec(q1=3 * 6.4e-21)], 1.0)
    assert w.tolist() == pytest.approx([3 / 7, 3 / 7, 1 / 7])
    assert inverse_variance_weights([NoiseSpec(), OCXO], 1.0).tolist() == [1.0, 0.0]


def test_initial_ensemble_validation():
    with pytest.raises(InvalidArgument):
        initial_ensemble([])
    with pytest.raises(InvalidArgument):
        initial_ensemble([OCXO], pivot=1)


def test_steer_zero_error_holds_control():
    servo = ServoState(integrator=2e-6)
    outs = []
    for _ in range(5):
        servo = steer(servo, 0.0, 1.0)
        outs.append(servo.control_out)
    assert outs == [outs[0]] * 5
    assert servo.integrator == 2e-6


def test_steer_slew_limit():
    # control = -kp * error, so an error of -5e-9 demands +5e-9
    servo = steer(ServoState(kp=1.0, ki=0.0, slew_limit=1e-9), -5e-9, 1.0)
    assert servo.control_out == 1e-9
    servo = steer(ServoState(kp=1.0, ki=0.0, slew_limit=1e-9), 5e-9, 1.0)
    assert servo.control_out == -1e-9


def test_steer_rejects_constant_disturbance():
    # closed loop: e[k+1] = e[k] + (y_dist + u[k]) tau
    y_dist, tau = 3e-8, 1.0
    servo = ServoState()
    time_constant = 1.0 / (servo.kp / 2)  # zeta*omega_n = kp/2 for this PI loop
    e = 0.0
    for _ in range(int(20 * time_constant / tau)):
        servo = steer(servo, e, tau)
        e += (y_dist + servo.control_out) * tau
    assert abs(servo.control_out + y_dist) <= 0.05 * y_dist
    assert abs(e) < 0.05 * y_dist * time_constant


def test_servo_validation():
    with pytest.raises(InvalidArgument):
        ServoState(slew_limit=0.0)
    with pytest.raises(InvalidArgument):
        steer(ServoState(), 0.0, 0.0)


def test_run_ensemble_is_deterministic_and_bounded():
    cfg = EnsembleConfig(n_members=3)
    a = run_ensemble(cfg, 2000, seed=5)
    b = run_ensemble(cfg, 2000, seed=5)
    assert_array_equal(a.timescale, b.timescale)
    assert_array_equal(a.steered, b.steered)
    assert np.all(np.abs(a.steer_control) <= cfg.slew_limit)
    assert np.allclose(a.weights.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(np.abs(np.sum(a.weights * a.member_phase, axis=0)) < 1e-15)
    # DAC granularity
    assert np.allclose(a.steer_control / cfg.dac_step, np.rint(a.steer_control / cfg.dac_step), atol=1e-6)


def test_pivot_invariance():
    for seed in (1, 2):
        adev = []
        for pivot in (0, 2):
            run = run_ensemble(EnsembleConfig(n_members=4, pivot=pivot), 30_000, seed=seed)
            adev.append(overlapping_adev(run.timescale, [100.0], dt=1.0)[0].sigma_y)
        assert abs(adev[1] - adev[0]) / adev[0] < 0.1


def test_ensemble_csv_header():
    run = run_ensemble(EnsembleConfig(n_members=2), 10, seed=0)
    buf = io.StringIO()
    write_ensemble_csv(run, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "epoch_s,member_0_phase,member_1_phase,weight_0,weight_1,steer_control,steer_error"
    assert len(lines) == 11


def test_config_validation():
    with pytest.raises(InvalidArgument):
        EnsembleConfig(n_members=0)
    with pytest.raises(InvalidArgument):
        EnsembleConfig(n_members=2, pivot=2)
