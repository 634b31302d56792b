"""Kalman clock ensemble with a steered output oscillator.

N free-running members are compared against a pivot member, one counter
per non-pivot member.  A joint 3N-state Kalman filter estimates each
member's (phase, frequency, drift) relative to an implicit ensemble
timescale.  Only differences are observable, so after every update the
states and covariance are re-centred: the weighted mean member state is
subtracted.  ``-phase_i`` is then the correction that maps member i onto
the timescale.

Weights are the normalised inverse of each member's own predicted phase
variance over the update interval.  Weighting by the joint posterior
variance instead is self-reinforcing once the covariance is re-centred
(a heavier member sits closer to the timescale, so its variance shrinks
and its weight grows) and the ensemble collapses onto the pivot.

A voltage-controlled oscillator is compared against the pivot as well and
a PI servo steers its frequency onto the timescale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .clocksim import ClockTruth, NoiseSpec, derive_seed, get_profile, relative_phase, simulate_clock
from .errors import InvalidArgument, NumericalFailure
from .kalman import DEFAULT_P0, transition
from .phasemeter import MeterConfig, measure, quantize, unwrap, wrap

__all__ = [
    "EnsembleState",
    "ServoState",
    "EnsembleConfig",
    "EnsembleRun",
    "initial_ensemble",
    "ensemble_propagate",
    "ensemble_update",
    "recenter",
    "inverse_variance_weights",
    "ensemble_time",
    "steer",
    "run_ensemble",
    "write_ensemble_csv",
]


@dataclass(frozen=True, eq=False)
class EnsembleState:
    x: np.ndarray  # (N, 3) member states relative to the ensemble
    P: np.ndarray  # (3N, 3N)
    weights: np.ndarray  # (N,)
    epoch: float
    q: tuple[NoiseSpec, ...]
    pivot: int = 0
    tau: float = 1.0  # most recent propagation interval

    @property
    def n(self) -> int:
        return self.x.shape[0]


def initial_ensemble(
    q: Sequence[NoiseSpec], t0: float = 0.0, pivot: int = 0, P0=DEFAULT_P0
) -> EnsembleState:
    q = tuple(q)
    n = len(q)
    if n < 1:
        raise InvalidArgument("an ensemble needs at least one member")
    if not 0 <= pivot < n:
        raise InvalidArgument(f"pivot {pivot} out of range for {n} members")
    P = np.kron(np.eye(n), np.asarray(P0, dtype=float))
    w = np.full(n, 1.0 / n)
    return EnsembleState(np.zeros((n, 3)), P, w, float(t0), q, pivot)


@lru_cache(maxsize=64)
def _block_transition(tau: float, q: tuple[NoiseSpec, ...]):
    phi, _ = transition(tau)
    n = len(q)
    Qb = np.zeros((3 * n, 3 * n))
    for i, qi in enumerate(q):
        Qb[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = transition(tau, qi)[1]
    return phi, np.kron(np.eye(n), phi), Qb


def ensemble_propagate(state: EnsembleState, tau: float) -> EnsembleState:
    """Advance every member by ``tau`` with the shared transition and its own Q."""
    if not tau > 0:
        raise InvalidArgument(f"tau must be > 0, got {tau}")
    phi, F, Qb = _block_transition(float(tau), state.q)
    P = F @ state.P @ F.T + Qb
    return replace(
        state, x=state.x @ phi.T, P=0.5 * (P + P.T), epoch=state.epoch + float(tau), tau=float(tau)
    )


def inverse_variance_weights(q: Sequence[NoiseSpec], tau: float) -> np.ndarray:
    """Normalised inverse of each member's predicted phase variance over ``tau``."""
    return _weights(tuple(q), float(tau)).copy()


@lru_cache(maxsize=64)
def _weights(q: tuple[NoiseSpec, ...], tau: float) -> np.ndarray:
    var = np.array([transition(tau, qi)[1][0, 0] for qi in q])
    if np.any(var <= 0):
        # Noiseless members share the weight equally.
        w = (var <= 0).astype(float)
    else:
        w = 1.0 / var
    return w / w.sum()


def recenter(state: EnsembleState, weights: np.ndarray | None = None) -> EnsembleState:
    """Subtract the weighted mean member state from every member."""
    w = state.weights if weights is None else np.asarray(weights, dtype=float)
    A_n, A = _recenter_matrices(tuple(w.tolist()))
    x = A_n @ state.x
    P = A @ state.P @ A.T
    return replace(state, x=x, P=0.5 * (P + P.T), weights=w)


@lru_cache(maxsize=64)
def _recenter_matrices(w: tuple[float, ...]):
    n = len(w)
    A_n = np.eye(n) - np.outer(np.ones(n), np.array(w))
    return A_n, np.kron(A_n, np.eye(3))


def ensemble_update(state: EnsembleState, diffs: Sequence[float | None], r: float) -> EnsembleState:
    """Fold in one epoch of member-minus-pivot phase readings.

    ``diffs`` lists the N-1 non-pivot members in index order; None or NaN
    marks a missing reading, whose row is skipped.
    """
    n, p = state.n, state.pivot
    others = [i for i in range(n) if i != p]
    if len(diffs) != len(others):
        raise InvalidArgument(f"expected {len(others)} diffs, got {len(diffs)}")
    if not r > 0:
        raise InvalidArgument(f"r must be > 0, got {r}")
    xv = state.x.reshape(-1).copy()
    P = state.P.copy()
    for i, z in zip(others, diffs):
        if z is None or np.isnan(z):
            continue
        h = np.zeros(3 * n)
        h[3 * i] = 1.0
        h[3 * p] = -1.0
        nu = z - (xv[3 * i] - xv[3 * p])
        Ph = P @ h
        S = h @ Ph + r
        if not (np.isfinite(S) and S > 0):
            raise NumericalFailure(f"ensemble innovation variance {S!r}")
        K = Ph / S
        # Joseph form (I - K h) P (I - K h)^T + r K K^T, expanded for symmetric P.
        KPh = np.outer(K, Ph)
        P = P - KPh - KPh.T + S * np.outer(K, K)
        xv = xv + K * nu
    P = 0.5 * (P + P.T)
    w = inverse_variance_weights(state.q, state.tau)
    return recenter(replace(state, x=xv.reshape(n, 3), P=P), w)


def ensemble_time(state: EnsembleState) -> np.ndarray:
    """Per-member phase corrections onto the ensemble timescale (s)."""
    return -state.x[:, 0].copy()


@dataclass(frozen=True)
class ServoState:
    kp: float = 0.1
    ki: float = 0.005
    slew_limit: float = 1e-7
    integrator: float = 0.0
    last_error: float = 0.0
    control_out: float = 0.0

    def __post_init__(self):
        if not self.slew_limit > 0:
            raise InvalidArgument(f"slew_limit must be > 0, got {self.slew_limit}")


def steer(servo: ServoState, error: float, tau: float) -> ServoState:
    """One PI step: fractional-frequency correction for a phase error (s).

    The integrator is held while the output is slew-limited.
    """
    if not tau > 0:
        raise InvalidArgument(f"tau must be > 0, got {tau}")
    control = -(servo.kp * error + servo.ki * servo.integrator)
    integrator = servo.integrator + error * tau
    lim = servo.slew_limit
    if abs(control) > lim:
        control = lim if control > 0 else -lim
        integrator = servo.integrator
    return replace(servo, integrator=integrator, last_error=float(error), control_out=float(control))


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble demo / reference configuration.

    Member frequency offsets are drawn N(0, y0_spread**2) per member.  The
    counters share a timebase, so by default the meter has no PLL drift.
    Readings are corrected by half a counter step to remove truncation bias.
    """

    n_members: int = 4
    member_profile: str = "ocxo-ref"
    vco_profile: str = "vcocxo"
    pivot: int = 0
    kp: float = 0.1
    ki: float = 0.005
    slew_limit: float = 1e-7
    dac_step: float = 1e-12
    y0_spread: float = 1e-10
    vco_y0: float = 5e-10
    meter: MeterConfig = field(default_factory=lambda: MeterConfig(pll_drift_rate=0.0))

    def __post_init__(self):
        if self.n_members < 1:
            raise InvalidArgument("n_members must be >= 1")
        if not 0 <= self.pivot < self.n_members:
            raise InvalidArgument(f"pivot {self.pivot} out of range")


@dataclass(frozen=True, eq=False)
class EnsembleRun:
    epochs: np.ndarray
    member_truth: np.ndarray  # (N, n)
    member_phase: np.ndarray  # (N, n) estimated phase vs ensemble
    weights: np.ndarray  # (N, n)
    timescale: np.ndarray  # realised ensemble time vs ideal time
    steered: np.ndarray  # steered clock truth vs ideal time
    steer_control: np.ndarray
    steer_error: np.ndarray  # servo's estimate of steered - ensemble
    final: EnsembleState

    @property
    def steer_error_true(self) -> np.ndarray:
        return self.steered - self.timescale


def _members(cfg: EnsembleConfig, seed: int) -> list[ClockTruth]:
    base = get_profile(cfg.member_profile)
    rng = np.random.default_rng(derive_seed(seed, 100))
    y0 = cfg.y0_spread * rng.standard_normal(cfg.n_members)
    return [
        replace(base, y0=base.y0 + float(y0[i]), seed=derive_seed(seed, 101, i))
        for i in range(cfg.n_members)
    ]


def run_ensemble(cfg: EnsembleConfig, duration: float, dt: float = 1.0, seed: int = 0) -> EnsembleRun:
    """Simulate members, the joint filter and the steered oscillator."""
    members = _members(cfg, seed)
    truths = [simulate_clock(m, duration, dt) for m in members]
    n_ep = len(truths[0])
    n = cfg.n_members
    p = cfg.pivot
    meter = cfg.meter
    half_step = meter.step / 2
    r = meter.measurement_variance + sum(m.noise.wpm_sigma**2 for m in members[:2])

    others = [i for i in range(n) if i != p]
    diffs = np.empty((len(others), n_ep))
    for j, i in enumerate(others):
        mcfg = replace(meter, seed=derive_seed(seed, 102, i))
        diffs[j] = unwrap(measure(relative_phase(truths[i], truths[p]), mcfg)).offsets + half_step

    vco = replace(get_profile(cfg.vco_profile), seed=derive_seed(seed, 103))
    vco = replace(vco, y0=vco.y0 + cfg.vco_y0)
    vco_free = simulate_clock(vco, duration, dt).samples
    vco_rng = np.random.default_rng(derive_seed(seed, 104))
    vco_jitter = meter.pll_jitter_sigma * vco_rng.standard_normal(n_ep)

    member_truth = np.vstack([t.samples for t in truths])
    est = np.empty((n, n_ep))
    weights = np.empty((n, n_ep))
    steered = np.empty(n_ep)
    control = np.empty(n_ep)
    error = np.empty(n_ep)

    state = initial_ensemble([m.noise for m in members], t0=0.0, pivot=p)
    servo = ServoState(kp=cfg.kp, ki=cfg.ki, slew_limit=cfg.slew_limit)
    accum = 0.0
    for k in range(n_ep):
        if k:
            state = ensemble_propagate(state, dt)
        if n > 1:
            state = ensemble_update(state, [float(d) for d in diffs[:, k]], r)
        est[:, k] = state.x[:, 0]
        weights[:, k] = state.weights

        steered[k] = vco_free[k] + accum
        reading = quantize(wrap(steered[k] - member_truth[p, k] + vco_jitter[k], meter.wrap_interval), meter.step)
        err = reading + half_step + state.x[p, 0]
        servo = steer(servo, err, dt)
        applied = float(np.rint(servo.control_out / cfg.dac_step) * cfg.dac_step)
        accum += applied * dt
        control[k] = applied
        error[k] = err

    timescale = np.sum(weights * (member_truth - est), axis=0)
    return EnsembleRun(
        epochs=truths[0].epochs,
        member_truth=member_truth,
        member_phase=est,
        weights=weights,
        timescale=timescale,
        steered=steered,
        steer_control=control,
        steer_error=error,
        final=state,
    )


def write_ensemble_csv(run: EnsembleRun, dest) -> None:
    """``epoch_s,member_i_phase...,weight_i...,steer_control,steer_error``."""
    n = run.member_phase.shape[0]
    header = (
        ["epoch_s"]
        + [f"member_{i}_phase" for i in range(n)]
        + [f"weight_{i}" for i in range(n)]
        + ["steer_control", "steer_error"]
    )
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        fh.write(",".join(header) + "\n")
        cols = np.vstack(
            [run.epochs[None, :], run.member_phase, run.weights, run.steer_control[None, :], run.steer_error[None, :]]
        ).T
        for row in cols.tolist():
            fh.write(",".join(repr(v) for v in row) + "\n")
    finally:
        if own:
            fh.close()
