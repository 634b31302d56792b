"""Three-state clock Kalman filter with arbitrary update spacing.

State is (phase s, frequency s/s, drift 1/s).  The filter only ever
observes phase, one scalar per epoch, so the update is the scalar form
with a Joseph covariance update.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .clocksim import NoiseSpec, diffusion_blocks
from .errors import ContractViolation, InvalidArgument, NumericalFailure
from .phasemeter import MeterConfig, PhaseSample, PhaseSeries

__all__ = [
    "DEFAULT_P0",
    "FilterState",
    "FilterTrace",
    "transition",
    "initial_state",
    "propagate",
    "update",
    "nis",
    "run_filter",
    "matched_r",
    "write_trace_csv",
]

DEFAULT_P0 = np.diag([1e-12, 1e-16, 1e-24])

_H = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True, eq=False)
class FilterState:
    x_hat: np.ndarray
    P: np.ndarray
    t_last: float
    q: NoiseSpec
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise InvalidArgument(f"measurement variance r must be > 0, got {self.r}")


def transition(tau: float, q: NoiseSpec = NoiseSpec()) -> tuple[np.ndarray, np.ndarray]:
    """State transition ``Phi`` and process covariance ``Q`` over ``tau`` seconds."""
    if not tau > 0:
        raise InvalidArgument(f"tau must be > 0, got {tau}")
    t = float(tau)
    phi = np.array([[1.0, t, t * t / 2], [0.0, 1.0, t], [0.0, 0.0, 1.0]])
    a1, a2, a3 = diffusion_blocks(t)
    return phi, q.q1 * a1 + q.q2 * a2 + q.q3 * a3


def initial_state(
    q: NoiseSpec,
    r: float,
    t0: float = 0.0,
    x_hat=(0.0, 0.0, 0.0),
    P=None,
) -> FilterState:
    P = DEFAULT_P0.copy() if P is None else np.array(P, dtype=float)
    return FilterState(np.array(x_hat, dtype=float), P, float(t0), q, float(r))


def matched_r(meter: MeterConfig, *clocks_wpm: float) -> float:
    """Measurement variance: counter truncation, jitter and any white PM of the clocks."""
    return meter.measurement_variance + sum(s * s for s in clocks_wpm)


def propagate(state: FilterState, to_epoch: float) -> FilterState:
    tau = to_epoch - state.t_last
    if not tau > 0:
        raise ContractViolation(f"cannot propagate from {state.t_last!r} to {to_epoch!r}")
    phi, Q = transition(tau, state.q)
    P = phi @ state.P @ phi.T + Q
    return replace(state, x_hat=phi @ state.x_hat, P=0.5 * (P + P.T), t_last=float(to_epoch))


def update(state: FilterState, sample: PhaseSample):
    """Fold one phase sample into the estimate.

    Returns ``(state, innovation, innovation_var)``.  An invalid sample is
    skipped: the state comes back unchanged and both statistics are None.
    """
    if not sample.valid:
        return state, None, None
    if sample.epoch < state.t_last:
        raise ContractViolation(f"sample epoch {sample.epoch!r} precedes {state.t_last!r}")
    if sample.epoch > state.t_last:
        state = propagate(state, sample.epoch)
    P = state.P
    nu = sample.offset - state.x_hat[0]
    S = P[0, 0] + state.r
    if not (np.isfinite(S) and S > 0 and np.isfinite(nu)):
        raise NumericalFailure(f"innovation {nu!r} with variance {S!r}")
    K = P[:, 0] / S
    A = np.eye(3) - np.outer(K, _H)
    P = A @ P @ A.T + state.r * np.outer(K, K)
    new = replace(state, x_hat=state.x_hat + K * nu, P=0.5 * (P + P.T))
    return new, float(nu), float(S)


def nis(innovation: float, innovation_var: float) -> float:
    """Normalised innovation squared."""
    if not innovation_var > 0:
        raise NumericalFailure(f"innovation variance must be > 0, got {innovation_var!r}")
    return innovation * innovation / innovation_var


@dataclass(frozen=True, eq=False)
class FilterTrace:
    epoch: np.ndarray
    x_hat: np.ndarray  # (n, 3)
    innovation: np.ndarray
    innovation_var: np.ndarray
    nis: np.ndarray
    final: FilterState

    def __len__(self):
        return self.epoch.size


def run_filter(samples: PhaseSeries, state: FilterState, offsets=None) -> FilterTrace:
    """Run the filter over every epoch of ``samples``.

    ``offsets`` substitutes the measured values (e.g. an unwrapped series);
    invalid epochs are coast-only.  Epoch statistics are NaN when no update
    took place.
    """
    n = len(samples)
    offsets = samples.offset if offsets is None else np.asarray(offsets, dtype=float)
    xs = np.empty((n, 3))
    innov = np.full(n, np.nan)
    svar = np.full(n, np.nan)
    for i in range(n):
        t = float(samples.epoch[i])
        if samples.valid[i]:
            sample = PhaseSample(t, float(offsets[i]), True, bool(samples.quantized[i]))
            state, nu, S = update(state, sample)
            innov[i] = nu
            svar[i] = S
        elif t > state.t_last:
            state = propagate(state, t)
        xs[i] = state.x_hat
    with np.errstate(invalid="ignore"):
        nis_arr = innov * innov / svar
    return FilterTrace(samples.epoch.copy(), xs, innov, svar, nis_arr, state)


TRACE_HEADER = "epoch_s,x_hat_phase,x_hat_freq,x_hat_drift,innovation,innovation_var,nis"


def write_trace_csv(trace: FilterTrace, dest) -> None:
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        fh.write(TRACE_HEADER + "\n")
        cols = zip(
            trace.epoch.tolist(),
            trace.x_hat.tolist(),
            trace.innovation.tolist(),
            trace.innovation_var.tolist(),
            trace.nis.tolist(),
        )
        for t, x, nu, s, e in cols:
            fh.write(f"{t!r},{x[0]!r},{x[1]!r},{x[2]!r},{nu!r},{s!r},{e!r}\n")
    finally:
        if own:
            fh.close()
